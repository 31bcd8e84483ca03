"""Numerical toolkit for heat flows on discretized loop spaces: spectra, semiflows,
stable/unstable manifolds and the time-T graph maps of the backward lambda-lemma."""
from .errors import LoopflowError
from .loopspace import LoopField, NormKind
from .model import TorusModel, CriticalLoop, find_critical_loop

__version__ = "0.1.0"

__all__ = ["LoopflowError", "LoopField", "NormKind", "TorusModel", "CriticalLoop",
           "find_critical_loop", "__version__"]
