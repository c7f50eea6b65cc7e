"""Heralded preparation of collective atomic excitations in waveguide QED.

Submodules: :mod:`statespace` (parameters and bases), :mod:`dynamics`
(no-jump propagation and oracles), :mod:`zeno` (step Hamiltonians and closed
forms), :mod:`merging` (beamsplitter combinatorics), :mod:`metrology`
(phase-estimation checks), :mod:`orchestrator` (protocol runs) and
:mod:`cli`.
"""

from .statespace import EnsembleParams, LabeledBasis, ZenoStepParams, build_basis

__all__ = ["EnsembleParams", "LabeledBasis", "ZenoStepParams", "build_basis"]
__version__ = "0.1.0"
