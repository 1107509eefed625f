"""Dataset split auditing and interpretability toolkit for CT nodule classifiers.

Subpackages and modules:

- ``annotations``: LIDC-style XML reading-session parsing and consensus labels
- ``manifest``: dataset manifests, fair/unfair splits, MCCV schedules, leakage audits
- ``imaging``: grayscale raster I/O, rotation, polygon rasterization, colormaps
- ``cam``: gradient-weighted class activation maps from exported tensors
- ``interpret``: heat-map vs. nodule-mask scoring (region stats + correlations)
- ``toylab``: synthetic fair/unfair accuracy-gap experiment
- ``kernels``: raster inner loops (compiled extension with Python fallback)
"""

__version__ = "0.1.0"
