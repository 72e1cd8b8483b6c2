"""Sparse Kenyon-cell visual codes from an insect-inspired optic-lobe model.

The rate-based model lives in :mod:`kcvision.ann`, the spiking variant in
:mod:`kcvision.snn`; both sit on the small autodiff engine in
:mod:`kcvision.numeric`.
"""
from .ann import AKWTA, VisionModelANN
from .config import RunConfig, load_config
from .snn import VisionModelSNN

__all__ = ["AKWTA", "RunConfig", "VisionModelANN", "VisionModelSNN", "load_config"]
__version__ = "0.1.0"
