"""mixvox: mixed-supervision 3D lesion risk and grade mapping.

Framework-free training/evaluation engine: a small reverse-mode autodiff
core over numpy with numba-accelerated convolutions, a residual 3D
encoder-decoder with voxel-wise risk/grade heads and a region-level
threshold classifier, weak distribution-based losses over region
histograms, balanced batching, and a synthetic phantom dataset.
"""

__version__ = "0.1.0"
