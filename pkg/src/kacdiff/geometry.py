"""Orthogonal change of variables, tangent projector, and uniform sampling.

The rotation maps velocities (v_1..v_N) to blocks (w_1..w_N) with

    w_n = sqrt((N-n)/(N-n+1)) * (v_n - mean(v_{n+1}..v_N)),  n < N,
    w_N = (1/sqrt(N)) * sum_k v_k.

Rows are orthonormal, so the map is an isometry of R^{3N} (applied
identically to each Cartesian component).  On the constraint manifold
w_N is pinned at sqrt(N)*u0 and (w_1..w_{N-1}) lives on the centered
sphere of radius sqrt(2*N*eps0).

All cores take arrays with arbitrary leading batch dimensions.
"""

from __future__ import annotations

import numpy as np

from .model import SystemParams, VelocityState, WState


def _coeffs(n_particles: int):
    """Per-row factors a_n = sqrt((N-n)/(N-n+1)) and b_n = a_n/(N-n), n=1..N-1."""
    n = np.arange(1, n_particles, dtype=float)
    a = np.sqrt((n_particles - n) / (n_particles - n + 1.0))
    b = a / (n_particles - n)
    return a, b


def to_w_blocks(v: np.ndarray):
    """Apply the rotation to v of shape (..., N, 3); returns (w (..., N-1, 3), w_N (..., 3)).

    Uses suffix sums, O(N) per state, no dense matrix.
    """
    n_particles = v.shape[-2]
    a, b = _coeffs(n_particles)
    total = v.sum(axis=-2)
    # suffix[n-1] = sum_{k>n} v_k for n = 1..N-1
    prefix = np.cumsum(v, axis=-2)
    suffix = total[..., None, :] - prefix[..., : n_particles - 1, :]
    w = a[:, None] * v[..., : n_particles - 1, :] - b[:, None] * suffix
    w_last = total / np.sqrt(n_particles)
    return w, w_last


def from_w_blocks(w: np.ndarray, w_last: np.ndarray):
    """Invert to_w_blocks; w has shape (..., N-1, 3), w_last (..., 3)."""
    n_particles = w.shape[-2] + 1
    a, b = _coeffs(n_particles)
    bw = b[:, None] * w
    # prefix[k-1] = sum_{n<k} b_n w_n
    prefix = np.zeros(w.shape[:-2] + (n_particles, 3))
    np.cumsum(bw, axis=-2, out=prefix[..., 1:, :])
    v = -prefix + w_last[..., None, :] / np.sqrt(n_particles)
    v[..., : n_particles - 1, :] += a[:, None] * w
    return v


def rotate_to_w(state: VelocityState):
    """Rotate a manifold state; returns (WState, w_N) with w_N = sqrt(N)*u0 up to round-off."""
    w, w_last = to_w_blocks(state.v)
    return WState(w, state.params, check=False), w_last


def rotate_from_w(wstate: WState) -> VelocityState:
    """Inverse rotation with w_N pinned at sqrt(N)*u0."""
    p = wstate.params
    w_last = np.sqrt(p.n_particles) * p.u0
    v = from_w_blocks(wstate.w, w_last)
    return VelocityState(v, p, check=False)


def project_tangent(state: VelocityState, g: np.ndarray) -> np.ndarray:
    """Project g (shape (N,3) or (3N,)) onto the tangent space at the state.

    Subtracts the per-component particle mean (momentum normals) and the
    radial component along v - u, normalized by the manifold radius
    squared 2*N*eps0.
    """
    p = state.params
    flat = g.ndim == 1
    g2 = g.reshape(p.n_particles, 3).astype(float, copy=True)
    g2 -= g2.mean(axis=0, keepdims=True)
    c = state.v - p.u0
    g2 -= (float(np.sum(c * g2)) / p.radius_sq) * c
    return g2.reshape(-1) if flat else g2


def project_tangent_blocks(v: np.ndarray, g: np.ndarray, params: SystemParams) -> np.ndarray:
    """Batched tangent projector; v and g of shape (..., N, 3)."""
    out = g - g.mean(axis=-2, keepdims=True)
    c = v - params.u0
    radial = np.sum(c * out, axis=(-2, -1), keepdims=True) / params.radius_sq
    out -= radial * c
    return out


def sample_uniform_blocks(params: SystemParams, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` states uniformly on the manifold; returns (count, N, 3).

    Gaussian direction in w-space normalized to the sphere radius, then
    rotated back.  Constraints hold by construction.
    """
    n = params.n_particles
    w = rng.standard_normal((count, n - 1, 3))
    norm = np.sqrt(np.sum(w * w, axis=(1, 2), keepdims=True))
    w *= params.radius / norm
    w_last = np.broadcast_to(np.sqrt(n) * params.u0, (count, 3))
    return from_w_blocks(w, w_last)


def sample_uniform(params: SystemParams, rng: np.random.Generator) -> VelocityState:
    """Draw one state uniformly on the manifold."""
    v = sample_uniform_blocks(params, rng, 1)[0]
    return VelocityState(v, params, check=False)


def w_block_from_v_block(v_block: np.ndarray, params: SystemParams) -> np.ndarray:
    """Rotated blocks w_1..w_n as functions of v_1..v_n alone.

    On the manifold the suffix sums are fixed by momentum conservation,
    sum_{k>i} v_k = N*u0 - sum_{k<=i} v_k, so the first n rotated blocks
    are determined by the first n velocities.  Input (..., n, 3).
    """
    v_block = np.asarray(v_block, dtype=float)
    n = v_block.shape[-2]
    N = params.n_particles
    if n >= N:
        raise ValueError(f"block order {n} must be below N={N}")
    i = np.arange(1, n + 1, dtype=float)
    a = np.sqrt((N - i) / (N - i + 1.0))
    prefix = np.cumsum(v_block, axis=-2)
    suffix = N * params.u0 - prefix
    w = a[:, None] * (v_block - suffix / (N - i)[:, None])
    return w
