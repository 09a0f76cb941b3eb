"""lfcam: compressive acquisition of dynamic light fields from one coded image.

A single exposure is coded twice -- a semi-transparent aperture map over
viewpoints and a binary, 8x8-periodic, row-column-separable pixel-wise
exposure pattern over time -- and a small CNN reconstructs the full 5-D
light field (views x time x pixels) from the one measurement.  Patterns
and network are trained jointly through a from-scratch reverse-mode
autodiff engine on numpy.

Subpackages by concern:

* :mod:`lfcam.core`      value types, packing, LF5D/PGM file I/O
* :mod:`lfcam.forward`   reference capture operators and region timing
* :mod:`lfcam.scene`     planar scene synthesis and the training corpus
* :mod:`lfcam.patterns`  trainable pattern parameterizations + variants
* :mod:`lfcam.autodiff`  the tensor/gradient engine
* :mod:`lfcam.nets`      AcqNet / RecNet assembly
* :mod:`lfcam.train`     Adam loop, checkpoints, pattern export
* :mod:`lfcam.evaluate`  PSNR reports, PSF atlas, sweeps, ablations
* :mod:`lfcam.estimator` fit/transform/predict facade
* :mod:`lfcam.config`    key=value run configuration
* :mod:`lfcam.cli`       the ``lfcam`` command
* :mod:`lfcam.bench`     pinned desk-scale benchmark bundles
"""

from .core import (CodedImage, Dims, LightField5D, PackedImage, derive_seed,
                   extract_epi, pack_space_to_depth, read_lf5d, read_pgm,
                   unpack_depth_to_space, write_lf5d, write_pgm)
from .estimator import LightFieldCamera
from .evaluate import PsnrReport, SweepGrid, psnr
from .forward import (AperturePattern, ExposurePattern, Free5DMask, RegionTiming,
                      coded_capture, free5d_capture, ordinary_capture)
from .patterns import VARIANTS, VariantParams, make_variant
from .scene import MotionDisparity, SampleSet, Texture, synth_plane

__version__ = "0.1.0"

__all__ = [
    "AperturePattern", "CodedImage", "Dims", "ExposurePattern", "Free5DMask",
    "LightField5D", "LightFieldCamera", "MotionDisparity", "PackedImage",
    "PsnrReport", "RegionTiming", "SampleSet", "SweepGrid", "Texture",
    "VARIANTS", "VariantParams", "coded_capture", "derive_seed", "extract_epi",
    "free5d_capture", "make_variant", "ordinary_capture", "pack_space_to_depth",
    "psnr", "read_lf5d", "read_pgm", "synth_plane", "unpack_depth_to_space",
    "write_lf5d", "write_pgm", "__version__",
]
