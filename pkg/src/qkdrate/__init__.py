"""Numerical lower bounds on QKD key rates via the QKD cone.

Layers, bottom up:

* :mod:`qkdrate.hermvec` -- symmetric vectorization of Hermitian matrices, Kraus maps;
* :mod:`qkdrate.entropy` -- von Neumann entropy and matrix-logarithm derivatives;
* :mod:`qkdrate.cones` -- barrier oracles (QKD, relative entropy, orthant, second-order);
* :mod:`qkdrate.solver` -- non-symmetric interior-point method;
* :mod:`qkdrate.facial` -- facial reduction of the state constraints;
* :mod:`qkdrate.protocols` -- BB84, MUB and overlap instances and key-rate assembly;
* :mod:`qkdrate.problem_io`, :mod:`qkdrate.cli` -- problem files and the command line.
"""

__version__ = "0.1.0"

from .cones import NonnegCone, QKDCone, RelEntropyCone, SOCCone  # noqa: E402
from .hermvec import KrausMap, skron, smat, svec  # noqa: E402
from .protocols import KeyRateResult, ProtocolInstance, bb84, key_rate, mub, overlap  # noqa: E402
from .solver import ConicProblem, InfeasibleError, SolveReport, SolverOptions, solve  # noqa: E402

__all__ = [
    "ConicProblem",
    "InfeasibleError",
    "KeyRateResult",
    "KrausMap",
    "NonnegCone",
    "ProtocolInstance",
    "QKDCone",
    "RelEntropyCone",
    "SOCCone",
    "SolveReport",
    "SolverOptions",
    "bb84",
    "key_rate",
    "mub",
    "overlap",
    "skron",
    "smat",
    "solve",
    "svec",
    "__version__",
]
