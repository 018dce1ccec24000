"""Physical parameters, grid, state containers and frame conversion."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class PositivityViolation(RuntimeError):
    """A liquid level reached zero or below."""


class DomainError(ValueError):
    """An argument lies outside the domain of a functional."""


@dataclass(frozen=True)
class PhysicalParams:
    g: float
    mu: float
    L: float
    m: float
    H_max: float

    def __post_init__(self):
        for name in ("g", "mu", "L", "m", "H_max"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.h_star >= self.H_max:
            raise ValueError(
                f"equilibrium level h* = m/L = {self.h_star} must stay below the "
                f"wall height H_max = {self.H_max} (h* < H_max)"
            )

    @property
    def h_star(self) -> float:
        return self.m / self.L


@dataclass(frozen=True)
class Grid:
    L: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ValueError(f"grid needs N >= 4 cells, got {self.N}")

    @classmethod
    def for_params(cls, params: PhysicalParams, N: int) -> "Grid":
        return cls(params.L, N)

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dx


@dataclass
class FullState:
    """Tank-frame state: position error, tank velocity, level and relative velocity."""

    xi: float
    w: float
    h: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "FullState":
        return replace(self, h=self.h.copy(), v=self.v.copy())

    def mass(self, grid: Grid) -> float:
        return float(np.sum(self.h) * grid.dx)

    def violations(self, params: PhysicalParams, grid: Grid, mass_rtol=1e-10) -> list[str]:
        """Reasons why the state is not admissible (empty list when it is)."""
        out = []
        if self.h.shape != (grid.N,) or self.v.shape != (grid.N + 1,):
            out.append("profile shapes do not match the grid")
            return out
        if not np.all(self.h > 0):
            out.append(f"non-positive level (min h = {self.h.min():.6g})")
        if self.v[0] != 0.0 or self.v[-1] != 0.0:
            out.append(f"wall velocity not zero (v(0) = {self.v[0]:.3g}, v(L) = {self.v[-1]:.3g})")
        mass = self.mass(grid)
        if abs(mass - params.m) > mass_rtol * params.m:
            out.append(f"mass {mass!r} differs from m = {params.m!r}")
        return out


@dataclass
class LabFrameView:
    a: float
    a_star: float
    z: np.ndarray
    z_faces: np.ndarray
    H: np.ndarray
    V_lab: np.ndarray


def equilibrium_state(params: PhysicalParams, grid: Grid, xi: float = 0.0) -> FullState:
    return FullState(
        xi=float(xi), w=0.0, h=np.full(grid.N, params.h_star), v=np.zeros(grid.N + 1)
    )


def make_initial_condition(
    params: PhysicalParams,
    grid: Grid,
    kind: str = "level_mode",
    amplitude: float = 0.0,
    mode_number: int = 1,
    xi0: float = 0.0,
    w0: float = 0.0,
    velocity_amplitude: float | None = None,
) -> FullState:
    """Perturb the equilibrium by a single Fourier mode.

    ``level_mode`` adds ``A cos(2 pi n x / L)`` to the level, ``velocity_mode``
    sets ``v = A sin(pi n x / L)`` and ``combined`` does both (the velocity
    amplitude defaults to ``amplitude``). The level is rescaled afterwards so
    the discrete mass is exactly ``m``.
    """
    if kind not in ("level_mode", "velocity_mode", "combined"):
        raise ValueError(f"unknown initial condition kind {kind!r}")
    if mode_number < 1:
        raise ValueError("mode_number must be >= 1")
    x, xf = grid.cell_centers, grid.faces
    h = np.full(grid.N, params.h_star)
    v = np.zeros(grid.N + 1)
    if kind in ("level_mode", "combined"):
        if abs(amplitude) >= params.h_star:
            raise PositivityViolation(
                f"level amplitude {amplitude} would not keep h > 0 (h* = {params.h_star})"
            )
        h = h + amplitude * np.cos(2 * np.pi * mode_number * x / params.L)
    if kind in ("velocity_mode", "combined"):
        va = amplitude if velocity_amplitude is None else velocity_amplitude
        v = va * np.sin(np.pi * mode_number * xf / params.L)
        v[0] = v[-1] = 0.0
    h = h * (params.m / (np.sum(h) * grid.dx))
    if not np.all(h > 0):
        raise PositivityViolation("constructed level profile is not positive")
    return FullState(xi=float(xi0), w=float(w0), h=h, v=v)


def to_lab_frame(state: FullState, grid: Grid, a_star: float) -> LabFrameView:
    a = state.xi + a_star
    return LabFrameView(
        a=a,
        a_star=a_star,
        z=a + grid.cell_centers,
        z_faces=a + grid.faces,
        H=state.h.copy(),
        V_lab=state.v + state.w,
    )


def from_lab_frame(view: LabFrameView, w: float, t: float = 0.0) -> FullState:
    """Forward transformation into the tank frame; needs the tank velocity ``w``."""
    return FullState(xi=view.a - view.a_star, w=w, h=view.H.copy(), v=view.V_lab - w, t=t)
