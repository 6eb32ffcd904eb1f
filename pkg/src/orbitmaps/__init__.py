"""Taylor-polynomial maps of periodic-orbit families near Earth-Moon L1/L2.

Modules, bottom-up: :mod:`dalg` (truncated power series), :mod:`dynamics`
(CR3BP and RK4), :mod:`families` (correction and continuation), :mod:`prm`
(regression of initial states on kappa), :mod:`famap` (propagation maps),
:mod:`control` (PD station keeping), :mod:`experiments`, :mod:`plotting`
and :mod:`cli`.
"""

from .dalg import Tps, constant, evaluate, rpow, variable
from .dynamics import MU_EARTH_MOON, SystemParams

__version__ = "0.1.0"

__all__ = ["Tps", "variable", "constant", "evaluate", "rpow", "MU_EARTH_MOON", "SystemParams",
           "__version__"]
