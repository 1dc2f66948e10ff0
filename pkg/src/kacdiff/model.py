"""Conserved ensemble parameters and micro-states.

An admissible micro-state of the N-particle system is a list of N
velocities in R^3 whose sum is N*u0 and whose kinetic energy is N*e0.
The set of such states is a sphere of radius sqrt(2*N*eps0), with
eps0 = e0 - |u0|^2/2, embedded in the center-of-mass velocity subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Constraint residuals of valid states must stay at round-off scale
# because the integrators renormalize every step.
TOL_CONSTRAINT = 1e-10


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    return v


@dataclass(frozen=True)
class SystemParams:
    """Conserved data (N, u0, e0) plus derived quantities.

    Immutable after construction; safe to share across threads.
    """

    n_particles: int
    u0: np.ndarray
    e0: float
    eps0: float = field(init=False)
    m0: float = field(init=False, default=1.0)

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 2:
            raise ValueError(f"need at least 2 particles, got {self.n_particles}")
        u0 = _as_vec3(self.u0)
        u0.flags.writeable = False
        object.__setattr__(self, "n_particles", int(self.n_particles))
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "e0", float(self.e0))
        eps0 = self.e0 - 0.5 * float(u0 @ u0)
        if eps0 <= 0.0:
            raise ValueError(
                f"degenerate manifold: e0={self.e0} must exceed |u0|^2/2={0.5 * float(u0 @ u0)}"
            )
        object.__setattr__(self, "eps0", eps0)

    @property
    def radius_sq(self) -> float:
        """Squared radius 2*N*eps0 of the momentum-energy sphere."""
        return 2.0 * self.n_particles * self.eps0

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.radius_sq))

    @property
    def sphere_dim(self) -> int:
        """Intrinsic dimension 3N-4 of the constraint manifold."""
        return 3 * self.n_particles - 4

    @property
    def ambient_dim(self) -> int:
        """Dimension 3N-3 of the center-of-mass velocity space."""
        return 3 * self.n_particles - 3

    @property
    def temperature(self) -> float:
        """Equilibrium temperature T = 2*eps0/3 of the limiting Maxwellian."""
        return 2.0 * self.eps0 / 3.0


def derive_params(u0, e0: float, n_particles: int) -> SystemParams:
    """Build SystemParams from drift velocity u0, energy per particle e0, and N.

    Rejects e0 <= |u0|^2/2 (the manifold would be empty or a point) and N < 2.
    """
    return SystemParams(n_particles=n_particles, u0=_as_vec3(u0), e0=float(e0))


class VelocityState:
    """N velocities on the constraint manifold.

    ``check=False`` skips the invariant test; used for deliberately
    off-manifold states in drift experiments.
    """

    __slots__ = ("v", "params")

    def __init__(self, v, params: SystemParams, check: bool = True):
        v = np.array(v, dtype=float)
        if v.shape != (params.n_particles, 3):
            raise ValueError(f"expected shape {(params.n_particles, 3)}, got {v.shape}")
        self.v = v
        self.params = params
        if check:
            self.validate()

    def validate(self, tol: float = TOL_CONSTRAINT):
        mom, en = manifold_residuals(self)
        n = self.params.n_particles
        if not np.all(np.abs(mom) <= tol * np.sqrt(n)):
            raise ValueError(f"momentum residual {mom} exceeds {tol}*sqrt(N)")
        if abs(en) > tol * n:
            raise ValueError(f"energy residual {en} exceeds {tol}*N")

    def copy(self) -> "VelocityState":
        return VelocityState(self.v.copy(), self.params, check=False)


class WState:
    """Rotated coordinates: N-1 blocks on the centered sphere of radius sqrt(2*N*eps0)."""

    __slots__ = ("w", "params")

    def __init__(self, w, params: SystemParams, check: bool = True):
        w = np.array(w, dtype=float)
        if w.shape != (params.n_particles - 1, 3):
            raise ValueError(f"expected shape {(params.n_particles - 1, 3)}, got {w.shape}")
        self.w = w
        self.params = params
        if check:
            self.validate()

    def validate(self, tol: float = TOL_CONSTRAINT):
        resid = self.radius_sq_residual()
        if abs(resid) > tol * self.params.n_particles:
            raise ValueError(f"sphere residual {resid} exceeds {tol}*N")

    def radius_sq_residual(self) -> float:
        return float(np.sum(self.w * self.w) - self.params.radius_sq)

    def copy(self) -> "WState":
        return WState(self.w.copy(), self.params, check=False)


def manifold_residuals(state: VelocityState):
    """Return (sum_k v_k - N*u0, sum_k |v_k|^2/2 - N*e0)."""
    p = state.params
    mom = state.v.sum(axis=0) - p.n_particles * p.u0
    en = 0.5 * float(np.sum(state.v * state.v)) - p.n_particles * p.e0
    return mom, en


@dataclass(frozen=True)
class TimeScale:
    """Master-equation time tau versus kinetic time t: tau = (2/3)*eps0*t."""

    tau: float
    t: float

    @classmethod
    def from_master(cls, tau: float, params: SystemParams) -> "TimeScale":
        return cls(tau=float(tau), t=float(tau) / ((2.0 / 3.0) * params.eps0))

    @classmethod
    def from_kinetic(cls, t: float, params: SystemParams) -> "TimeScale":
        return cls(tau=(2.0 / 3.0) * params.eps0 * float(t), t=float(t))
