"""
Numpy / CasADi backend shim.

The vehicle and cost formulas are written once against this namespace so the
same expression serves the numeric plant (numpy) and the NLP graph (CasADi SX),
where CasADi supplies exact derivatives.
"""

from typing import Any, Sequence

import casadi as cs
import numpy as np


class NumpyBackend:
    """Dense float evaluation."""

    name = "numpy"
    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    tan = staticmethod(np.tan)
    tanh = staticmethod(np.tanh)
    sqrt = staticmethod(np.sqrt)
    fabs = staticmethod(np.abs)
    atan2 = staticmethod(np.arctan2)

    @staticmethod
    def zeros(rows: int, cols: int = 0) -> np.ndarray:
        return np.zeros(rows) if cols == 0 else np.zeros((rows, cols))

    @staticmethod
    def vcat(items: Sequence[Any]) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(item, dtype=float)) for item in items])

    @staticmethod
    def const(value: Any) -> np.ndarray:
        return np.asarray(value, dtype=float)

    @staticmethod
    def dot(a: Any, b: Any) -> Any:
        return a @ b

    @staticmethod
    def quad(z: Any, weight: np.ndarray) -> Any:
        return z @ weight @ z


class CasadiBackend:
    """Symbolic evaluation on CasADi SX/MX graphs."""

    name = "casadi"
    sin = staticmethod(cs.sin)
    cos = staticmethod(cs.cos)
    tan = staticmethod(cs.tan)
    tanh = staticmethod(cs.tanh)
    sqrt = staticmethod(cs.sqrt)
    fabs = staticmethod(cs.fabs)
    atan2 = staticmethod(cs.atan2)

    @staticmethod
    def zeros(rows: int, cols: int = 0) -> cs.SX:
        return cs.SX.zeros(rows, 1 if cols == 0 else cols)

    @staticmethod
    def vcat(items: Sequence[Any]) -> cs.SX:
        return cs.vertcat(*items)

    @staticmethod
    def const(value: Any) -> cs.SX:
        return cs.SX(cs.DM(np.asarray(value, dtype=float)))

    @staticmethod
    def dot(a: Any, b: Any) -> Any:
        return cs.dot(a, b)

    @staticmethod
    def quad(z: Any, weight: np.ndarray) -> Any:
        return cs.mtimes([z.T, cs.DM(np.asarray(weight, dtype=float)), z])


NUMPY = NumpyBackend()
CASADI = CasadiBackend()


def is_symbolic(value: Any) -> bool:
    """True for CasADi symbolic or matrix objects."""
    return isinstance(value, (cs.SX, cs.MX, cs.DM))


def backend_for(*values: Any):
    """Pick the CasADi backend when any argument is a CasADi object."""
    return CASADI if any(is_symbolic(v) for v in values) else NUMPY
