"""Overlap-mask-aware point cloud registration toolkit.

Submodules: `geometry` (transforms and metrics), `datagen` (synthetic benchmark
pairs), `diffcore` (minimal reverse-mode autodiff), `model` (the iterative
registration network), `loss`, `icp` (classical baseline), `train`, `evalcli`.
"""

__version__ = "0.1.0"
