"""Railroad-graph-regularized semi-supervised congestion forecasting.

Submodules: ``railgraph`` (network + adjacency), ``data`` (samples,
splits, masking), ``synthgen`` (synthetic worlds), ``nn`` (the shared
classifier), ``graphssl`` (graph-regularized training), ``diffusion``
(label propagation/spreading and pseudo-label retraining), ``bench``
(experiment harness + CLI).
"""

__version__ = "0.1.0"
