"""Railroad network model and the station adjacency matrix used for
graph regularization.

A network is a set of stations (geographic lat/lon or planar km
coordinates) plus undirected track connections.  The adjacency builder
assigns weight 1 to track-connected pairs and a linear proximity decay
1 - d/d_max to unconnected pairs closer than d_max; everything else is
absent.  The cosine builder is the naive spatial alternative kept for
comparison runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

EARTH_RADIUS_KM = 6371.0

GEOGRAPHIC = "geographic"
PLANAR = "planar"


@dataclass(frozen=True)
class Station:
    id: int
    name: str
    x: float  # latitude (deg) in geographic mode, x (km) in planar mode
    y: float  # longitude (deg) in geographic mode, y (km) in planar mode

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class RailNetwork:
    stations: tuple[Station, ...]
    connections: frozenset[tuple[int, int]]  # canonical (lo, hi) pairs
    coordinate_mode: str = GEOGRAPHIC

    def __post_init__(self):
        if self.coordinate_mode not in (GEOGRAPHIC, PLANAR):
            raise ValueError(f"unknown coordinate_mode: {self.coordinate_mode!r}")
        ids = [s.id for s in self.stations]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError("station ids must be dense and unique, 0..S-1")
        for s in self.stations:
            if not (math.isfinite(s.x) and math.isfinite(s.y)):
                raise ValueError(f"station {s.id} has non-finite coordinates")
        n = len(self.stations)
        for a, b in self.connections:
            if a == b:
                raise ValueError(f"self-connection at station {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"connection ({a},{b}) references unknown station")
            if a > b:
                raise ValueError("connections must be stored as (lo, hi) pairs")

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def connected(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.connections


def make_connections(pairs) -> frozenset[tuple[int, int]]:
    """Canonicalize an iterable of (i, j) pairs: undirected, deduplicated."""
    out = set()
    for a, b in pairs:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError(f"self-connection at station {a}")
        out.add((min(a, b), max(a, b)))
    return frozenset(out)


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(max(0.0, a))))


def distance(network: RailNetwork, i: int, j: int) -> float:
    """Straight-line distance in km between two stations of the network."""
    n = network.n_stations
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"station id out of range: ({i},{j}) with S={n}")
    si = network.stations[i]
    sj = network.stations[j]
    if network.coordinate_mode == GEOGRAPHIC:
        return haversine_km(si.x, si.y, sj.x, sj.y)
    return math.hypot(si.x - sj.x, si.y - sj.y)


def cosine_spatial_weight(a, b) -> float:
    """Cosine similarity of two coordinate vectors (the naive spatial graph)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine weight undefined for zero coordinate vectors")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class RailAdjacency:
    """Sparse symmetric station-by-station weight matrix.

    Entries are stored once per unordered pair (i < j); the diagonal is
    always absent and weights lie in (0, 1].
    """

    size: int
    row: np.ndarray  # (m,) int, row[k] < col[k]
    col: np.ndarray
    weight: np.ndarray  # (m,) float in (0, 1]
    _lookup: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        for arr in (self.row, self.col, self.weight):
            arr.setflags(write=False)
        lookup = {(int(i), int(j)): float(w)
                  for i, j, w in zip(self.row, self.col, self.weight)}
        object.__setattr__(self, "_lookup", lookup)

    @property
    def n_entries(self) -> int:
        return int(self.row.size)

    def pairs(self):
        """Iterate canonical (i, j, w) entries with i < j."""
        for i, j, w in zip(self.row, self.col, self.weight):
            yield int(i), int(j), float(w)

    def get(self, i: int, j: int) -> float:
        """Weight of the (i, j) pair, 0.0 when absent (including i == j)."""
        if i == j:
            return 0.0
        return self._lookup.get((min(i, j), max(i, j)), 0.0)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        out = [(int(j), float(w)) for (a, j), w in self._lookup.items() if a == i]
        out += [(int(a), float(w)) for (a, j), w in self._lookup.items() if j == i]
        out.sort()
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.size, self.size))
        dense[self.row, self.col] = self.weight
        dense[self.col, self.row] = self.weight
        return dense


def _adjacency_from_pairs(size: int, entries: list[tuple[int, int, float]]) -> RailAdjacency:
    entries.sort()
    if entries:
        row = np.array([e[0] for e in entries], dtype=np.int32)
        col = np.array([e[1] for e in entries], dtype=np.int32)
        w = np.array([e[2] for e in entries], dtype=float)
    else:
        row = np.zeros(0, dtype=np.int32)
        col = np.zeros(0, dtype=np.int32)
        w = np.zeros(0, dtype=float)
    return RailAdjacency(size=size, row=row, col=col, weight=w)


def build_adjacency(network: RailNetwork, d_max: float = 3.0) -> RailAdjacency:
    """Track connections get weight 1; unconnected pairs within d_max get
    the linear decay 1 - d/d_max; pairs at d >= d_max are absent."""
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    n = network.n_stations
    entries: list[tuple[int, int, float]] = []
    for i in range(n):
        for j in range(i + 1, n):
            if network.connected(i, j):
                entries.append((i, j, 1.0))
                continue
            d = distance(network, i, j)
            if d < d_max:
                w = 1.0 - d / d_max
                if w > 0.0:
                    entries.append((i, j, w))
    return _adjacency_from_pairs(n, entries)


def build_cosine_adjacency(network: RailNetwork) -> RailAdjacency:
    """Alternative graph: cosine similarity of station coordinates.

    Only strictly positive similarities are kept so the weight range
    invariant (0, 1] carries over.
    """
    n = network.n_stations
    entries: list[tuple[int, int, float]] = []
    for i in range(n):
        for j in range(i + 1, n):
            w = cosine_spatial_weight(network.stations[i].position,
                                      network.stations[j].position)
            if w > 0.0:
                entries.append((i, j, min(w, 1.0)))
    return _adjacency_from_pairs(n, entries)


# ---------------------------------------------------------------------------
# CSV interfaces

def load_stations(path: str | Path) -> tuple[tuple[Station, ...], str]:
    """Read stations.csv; header decides the coordinate mode
    (id,name,lat,lon -> geographic; id,name,x,y -> planar)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"stations file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if {"id", "name", "lat", "lon"} <= set(cols):
            mode, cx, cy = GEOGRAPHIC, "lat", "lon"
        elif {"id", "name", "x", "y"} <= set(cols):
            mode, cx, cy = PLANAR, "x", "y"
        else:
            raise DataError(f"unrecognized stations.csv header: {cols}")
        stations = []
        try:
            for rec in reader:
                stations.append(Station(id=int(rec["id"]), name=rec["name"],
                                        x=float(rec[cx]), y=float(rec[cy])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed row in {path}: {exc}") from exc
    stations.sort(key=lambda s: s.id)
    return tuple(stations), mode


def load_edges(path: str | Path) -> frozenset[tuple[int, int]]:
    """Read edges.csv (from_id,to_id); duplicates and reversed duplicates
    collapse into one undirected connection."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"edges file not found: {path}")
    pairs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"from_id", "to_id"} <= set(reader.fieldnames):
            raise DataError(f"unrecognized edges.csv header: {reader.fieldnames}")
        try:
            for rec in reader:
                pairs.append((int(rec["from_id"]), int(rec["to_id"])))
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed row in {path}: {exc}") from exc
    return make_connections(pairs)


def load_network(stations_path: str | Path, edges_path: str | Path) -> RailNetwork:
    stations, mode = load_stations(stations_path)
    connections = load_edges(edges_path)
    return RailNetwork(stations=stations, connections=connections, coordinate_mode=mode)


def save_stations(network: RailNetwork, path: str | Path) -> None:
    path = Path(path)
    cx, cy = ("lat", "lon") if network.coordinate_mode == GEOGRAPHIC else ("x", "y")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "name", cx, cy])
        for s in network.stations:
            writer.writerow([s.id, s.name, repr(s.x), repr(s.y)])


def save_edges(network: RailNetwork, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from_id", "to_id"])
        for a, b in sorted(network.connections):
            writer.writerow([a, b])


def save_adjacency_csv(adjacency: RailAdjacency, path: str | Path) -> None:
    """Write canonical (i < j) adjacency entries as i,j,weight rows."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight"])
        for i, j, w in adjacency.pairs():
            writer.writerow([i, j, repr(w)])
