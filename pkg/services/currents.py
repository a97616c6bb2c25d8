"""
Quasi-static ocean current fields.

Analytic fields (uniform, shear, gyre) stand in for ocean model output in
tests; ``CurrentGrid`` samples a gridded field loaded from a ``CURRENTGRID v1``
document. Queries outside the grid box clamp to the boundary.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from models.schemas import CurrentFieldSpec, FieldKind, InterpolationMode
from services.vehicle import CurrentSample
from utils.helpers import as_vector
from utils.validation import (
    ConfigError,
    GridDimensionError,
    GridFormatError,
    GridNonFiniteError,
    GridSpacingError,
    ValidationError,
)

logger = logging.getLogger(__name__)

GRID_HEADER = "CURRENTGRID v1"


class CurrentField(Protocol):
    """Anything that returns a horizontal current at an NED position."""

    def sample(self, position: np.ndarray) -> CurrentSample:
        ...


# ============== Analytic Fields ==============

@dataclass(frozen=True)
class AnalyticField:
    """Closed-form current field.

    Attributes:
        kind: uniform, shear or gyre
        velocity: Uniform (north, east) velocity
        base: Shear value at coordinate 0
        gradient: Shear rate d(u, v)/d coord[axis]
        axis: Shear coordinate index (0 = N, 1 = E, 2 = D)
        center: Gyre center (north, east)
        strength: Peak gyre speed, reached at ``radius``
        radius: Gyre core radius
    """
    kind: FieldKind = FieldKind.UNIFORM
    velocity: Tuple[float, float] = (0.0, 0.0)
    base: Tuple[float, float] = (0.0, 0.0)
    gradient: Tuple[float, float] = (0.0, 0.0)
    axis: int = 0
    center: Tuple[float, float] = (0.0, 0.0)
    strength: float = 0.0
    radius: float = 10.0

    def __post_init__(self):
        if self.kind == FieldKind.GRID:
            raise ValidationError("grid fields are loaded with load_grid")
        if self.radius <= 0:
            raise ValidationError(f"gyre radius must be > 0, got {self.radius}")
        if not np.isfinite(self.strength):
            raise ValidationError("gyre strength must be finite")

    @classmethod
    def uniform(cls, north: float, east: float) -> "AnalyticField":
        return cls(kind=FieldKind.UNIFORM, velocity=(north, east))

    def sample(self, position: np.ndarray) -> CurrentSample:
        p = as_vector(position, 3, "position")
        if self.kind == FieldKind.UNIFORM:
            u, v = self.velocity
        elif self.kind == FieldKind.SHEAR:
            u = self.base[0] + self.gradient[0] * p[self.axis]
            v = self.base[1] + self.gradient[1] * p[self.axis]
        else:
            dx, dy = p[0] - self.center[0], p[1] - self.center[1]
            rho2 = (dx * dx + dy * dy) / (self.radius * self.radius)
            factor = self.strength / self.radius * np.exp(0.5 * (1.0 - rho2))
            u, v = -factor * dy, factor * dx
        return CurrentSample.horizontal(u, v)


def gyre_speed(strength: float, radius: float, r: float) -> float:
    """Tangential gyre speed at distance ``r`` from the center."""
    return strength * (r / radius) * np.exp(0.5 * (1.0 - (r / radius) ** 2))


# ============== Gridded Fields ==============

def _catmull_rom(t: float) -> np.ndarray:
    t2, t3 = t * t, t * t * t
    return 0.5 * np.array([
        -t3 + 2.0 * t2 - t,
        3.0 * t3 - 5.0 * t2 + 2.0,
        -3.0 * t3 + 4.0 * t2 + t,
        t3 - t2,
    ])


def _axis_stencil(frac: float, n: int, mode: InterpolationMode) -> Tuple[np.ndarray, np.ndarray]:
    frac = min(max(frac, 0.0), n - 1.0)
    i0 = min(int(np.floor(frac)), n - 2)
    t = frac - i0
    if mode == InterpolationMode.TRILINEAR:
        return np.array([i0, i0 + 1]), np.array([1.0 - t, t])
    idx = np.clip(np.arange(i0 - 1, i0 + 3), 0, n - 1)
    return idx, _catmull_rom(t)


@dataclass(frozen=True)
class CurrentGrid:
    """Regular NED grid of horizontal current samples.

    ``u`` and ``v`` have shape ``dims``; flat index (i*ny + j)*nz + k.
    """
    origin: np.ndarray
    spacing: np.ndarray
    dims: Tuple[int, int, int]
    u: np.ndarray
    v: np.ndarray
    interpolation: InterpolationMode = InterpolationMode.TRILINEAR

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        spacing = np.asarray(self.spacing, dtype=float).reshape(3)
        if not np.all(np.isfinite(origin)):
            raise GridNonFiniteError("origin must be finite", field="origin")
        if not np.all(np.isfinite(spacing)) or np.any(spacing <= 0):
            raise GridSpacingError(f"spacing must be > 0, got {spacing.tolist()}", field="spacing")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 2:
            raise GridDimensionError(f"need at least 2 nodes per axis, got {dims}", field="dims")
        arrays = {}
        for name in ("u", "v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.size != int(np.prod(dims)):
                raise GridDimensionError(
                    f"expected {int(np.prod(dims))} samples, got {arr.size}", field=name
                )
            if not np.all(np.isfinite(arr)):
                raise GridNonFiniteError("samples must be finite", field=name)
            arr = arr.reshape(dims).copy()
            arr.setflags(write=False)
            arrays[name] = arr
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "u", arrays["u"])
        object.__setattr__(self, "v", arrays["v"])
        object.__setattr__(self, "interpolation", InterpolationMode(self.interpolation))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def upper_corner(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def with_interpolation(self, mode: InterpolationMode) -> "CurrentGrid":
        return CurrentGrid(self.origin, self.spacing, self.dims, self.u, self.v, mode)

    def clamp(self, position: np.ndarray) -> np.ndarray:
        """Nearest point of the grid box."""
        return np.clip(position, self.origin, self.upper_corner)

    def sample(self, position: np.ndarray) -> CurrentSample:
        p = as_vector(position, 3, "position")
        frac = (p - self.origin) / self.spacing
        stencils = [_axis_stencil(frac[a], self.dims[a], self.interpolation) for a in range(3)]
        (ii, wi), (jj, wj), (kk, wk) = stencils
        block = np.ix_(ii, jj, kk)
        u = np.einsum("i,j,k,ijk->", wi, wj, wk, self.u[block])
        v = np.einsum("i,j,k,ijk->", wi, wj, wk, self.v[block])
        return CurrentSample.horizontal(float(u), float(v))


def sample(field: CurrentField, position: np.ndarray) -> CurrentSample:
    """Current at one NED position."""
    return field.sample(np.asarray(position, dtype=float))


def sample_along(field: CurrentField, positions: Sequence[np.ndarray]) -> List[CurrentSample]:
    """Order-preserving elementwise sampling."""
    if len(positions) < 1:
        raise ValidationError("sample_along needs at least one position")
    return [field.sample(np.asarray(p, dtype=float)) for p in positions]


# ============== Grid Documents ==============

def _floats(tokens: Sequence[str], count: int, field: str) -> np.ndarray:
    if len(tokens) != count:
        raise GridFormatError(f"expected {count} numbers, got {len(tokens)}", field=field)
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as e:
        raise GridFormatError(f"not a number: {e}", field=field) from e


def load_grid(document: str) -> CurrentGrid:
    """Parse a ``CURRENTGRID v1`` document.

    Raises:
        GridFormatError: Bad header or token (subclasses name dims, spacing
            and non-finite sample problems)
    """
    lines = document.splitlines()
    if not lines or lines[0].strip() != GRID_HEADER:
        raise GridFormatError(f"first line must be '{GRID_HEADER}'", field="header")
    if len(lines) < 5:
        raise GridFormatError("header is truncated", field="header")

    origin = _floats(lines[1].split(), 3, "origin")
    spacing = _floats(lines[2].split(), 3, "spacing")
    if not np.all(np.isfinite(spacing)) or np.any(spacing <= 0):
        raise GridSpacingError(f"spacing must be > 0, got {spacing.tolist()}", field="spacing")
    dim_tokens = lines[3].split()
    try:
        dims = tuple(int(t) for t in dim_tokens)
    except ValueError as e:
        raise GridFormatError(f"dims must be integers: {e}", field="dims") from e
    if len(dims) != 3:
        raise GridFormatError(f"expected 3 dims, got {len(dims)}", field="dims")
    try:
        mode = InterpolationMode(lines[4].strip())
    except ValueError as e:
        raise GridFormatError(f"unknown interpolation '{lines[4].strip()}'", field="interpolation") from e

    tokens = " ".join(lines[5:]).split()
    n = int(np.prod(dims)) if min(dims) > 0 else 0
    if min(dims) < 2:
        raise GridDimensionError(f"need at least 2 nodes per axis, got {dims}", field="dims")
    if len(tokens) != 2 * n:
        raise GridDimensionError(
            f"dims {dims} need {n} u and {n} v values, got {len(tokens)} in total", field="samples"
        )
    values = _floats(tokens, 2 * n, "samples")
    for name, chunk in (("u", values[:n]), ("v", values[n:])):
        if not np.all(np.isfinite(chunk)):
            raise GridNonFiniteError("samples must be finite", field=name)
    return CurrentGrid(origin, spacing, dims, values[:n], values[n:], mode)


def format_grid(grid: CurrentGrid) -> str:
    """Serialize a grid as a ``CURRENTGRID v1`` document."""
    def row(values) -> str:
        return " ".join(repr(float(v)) for v in values)

    lines = [
        GRID_HEADER,
        row(grid.origin),
        row(grid.spacing),
        " ".join(str(d) for d in grid.dims),
        grid.interpolation.value,
        row(grid.u.ravel()),
        row(grid.v.ravel()),
    ]
    return "\n".join(lines) + "\n"


def read_grid(path: Union[str, Path]) -> CurrentGrid:
    """Load a grid document from disk."""
    path = Path(path)
    grid = load_grid(path.read_text())
    logger.info(f"Loaded current grid {path.name}: dims={grid.dims} mode={grid.interpolation.value}")
    return grid


def build_field(spec: CurrentFieldSpec, base_dir: Optional[Path] = None) -> CurrentField:
    """Instantiate the field described by a scenario section."""
    if spec.kind == FieldKind.GRID:
        path = Path(spec.grid_path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"grid file not found: {path}", key="current_field.grid_path")
        grid = read_grid(path)
        if spec.interpolation is not None and spec.interpolation != grid.interpolation:
            grid = grid.with_interpolation(spec.interpolation)
        return grid
    return AnalyticField(
        kind=spec.kind,
        velocity=spec.velocity_mps,
        base=spec.base_mps,
        gradient=spec.gradient_per_s,
        axis=spec.axis,
        center=spec.center_m,
        strength=spec.strength_mps,
        radius=spec.radius_m,
    )


# ============== Smoothness Diagnostics ==============

def face_derivative_jump(grid: CurrentGrid, positions: Sequence[np.ndarray],
                         rel_step: float = 1e-6) -> float:
    """Largest one-sided derivative mismatch across the nearest cell faces.

    For every position and axis the nearest interior cell face is probed with
    left and right differences; the jump is normalised by the sample range
    over the spacing. Returns 0 for fields with no interior faces in reach.
    """
    span = max(np.ptp(grid.u), np.ptp(grid.v), 1e-12)
    worst = 0.0
    for position in positions:
        p = grid.clamp(np.asarray(position, dtype=float))
        for axis in range(3):
            n = grid.dims[axis]
            if n < 3:
                continue
            frac = (p[axis] - grid.origin[axis]) / grid.spacing[axis]
            face = int(np.clip(np.round(frac), 1, n - 2))
            h = rel_step * grid.spacing[axis]
            center = p.copy()
            center[axis] = grid.origin[axis] + face * grid.spacing[axis]
            ahead, behind = center.copy(), center.copy()
            ahead[axis] += h
            behind[axis] -= h
            c0 = grid.sample(center).v_c_ned
            right = (grid.sample(ahead).v_c_ned - c0) / h
            left = (c0 - grid.sample(behind).v_c_ned) / h
            scale = span / grid.spacing[axis]
            worst = max(worst, float(np.max(np.abs(right - left))) / scale)
    return worst
