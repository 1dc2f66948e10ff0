"""Exact spectral solution of the sphere diffusion and its marginals.

Eigenvalues of the Laplace-Beltrami operator on the energy-momentum
sphere are j(j + 3N - 5)/(2*N*eps0); they converge to 3j/(2*eps0).  The
eigenfunctions retained by n-velocity marginalization are products of
3n associated Legendre factors (one per retained Cartesian coordinate,
in the peel-off order w_11, w_12, w_13, w_21, ...) times the marginal of
the uniform density.  Their large-N limits are products of Hermite
polynomials against the drifting product Maxwellian.

A multi-index (m_1..m_{3n}) with sum j encodes the descending chain
k_a = j - sum_{b<=a} m_b of Legendre degrees; m_a is the Hermite degree
attached to coordinate a in the limit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import sample_uniform_blocks, to_w_blocks, w_block_from_v_block
from .grids import gauss_hermite_axis
from .model import SystemParams
from .specfun import assoc_legendre_qdim, hermite


@dataclass(frozen=True)
class MultiIndex:
    """Total degree j and per-coordinate Hermite degrees m (length 3n, sum j)."""

    j: int
    m: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.m)
        if any(x < 0 for x in m):
            raise ValueError(f"negative entry in {m}")
        if sum(m) != self.j:
            raise ValueError(f"sum(m)={sum(m)} != j={self.j}")
        object.__setattr__(self, "m", m)

    @property
    def order(self) -> int:
        if len(self.m) % 3:
            raise ValueError("multi-index length must be a multiple of 3")
        return len(self.m) // 3

    def chain(self) -> tuple:
        """Descending degrees (k_0=j, k_1, ..., k_{3n}=0) with k_a = j - sum_{b<=a} m_b."""
        k = [self.j]
        for x in self.m:
            k.append(k[-1] - x)
        return tuple(k)


def multi_index_set(j: int, n: int):
    """All compositions of j into 3n nonnegative parts, first part descending."""
    if j < 0 or n < 1:
        raise ValueError("need j >= 0 and n >= 1")
    slots = 3 * n
    out = []

    def _fill(prefix, remaining, slots_left):
        if slots_left == 1:
            out.append(MultiIndex(j, prefix + (remaining,)))
            return
        for first in range(remaining, -1, -1):
            _fill(prefix + (first,), remaining - first, slots_left - 1)

    _fill((), j, slots)
    return out


def eigenvalue(j: int, n_particles: int, eps0: float) -> float:
    """Finite-N eigenvalue j(j + 3N - 5)/(2*N*eps0)."""
    if j < 0 or n_particles < 2:
        raise ValueError("need j >= 0 and N >= 2")
    return j * (j + 3.0 * n_particles - 5.0) / (2.0 * n_particles * eps0)


def limit_eigenvalue(j: int, eps0: float) -> float:
    """Large-N limit 3j/(2*eps0)."""
    if j < 0:
        raise ValueError("need j >= 0")
    return 3.0 * j / (2.0 * eps0)


def degeneracy(j: int, n_particles: int) -> int:
    """Dimension (3N-5+2j)(3N-6+j)!/(j!(3N-5)!) of the j-th eigenspace, exact."""
    if j < 0 or n_particles < 2:
        raise ValueError("need j >= 0 and N >= 2")
    if j == 0:
        return 1
    d = 3 * n_particles - 3  # ambient dimension of the centered sphere
    return (d - 2 + 2 * j) * math.factorial(d - 3 + j) // (math.factorial(j) * math.factorial(d - 2))


def _chain_factors(idx: MultiIndex):
    """Per-coordinate (degree s_a, order r_a) pairs, a = 1..3n."""
    k = idx.chain()
    return [(k[a - 1], k[a]) for a in range(1, len(k))]


def uniform_marginal_weight(y: np.ndarray, n: int, params: SystemParams) -> np.ndarray:
    """Exact n-velocity marginal of the uniform density, in rotated coordinates.

    y has shape (..., 3n) (flattened w-blocks).  The exponent
    (3(N-n)-5)/2 and the closed-form prefactor make the marginal
    integrate to one and converge pointwise to the product Maxwellian.
    """
    N = params.n_particles
    d = params.ambient_dim
    kdim = 3 * n
    if N <= n + 1:
        raise ValueError(f"need N > n+1, got N={N}, n={n}")
    r2 = params.radius_sq
    lognorm = (
        1.5 * (math.log(N) - math.log(N - n))
        - 0.5 * kdim * math.log(math.pi)
        + math.lgamma(0.5 * d)
        - math.lgamma(0.5 * (d - kdim))
        - 0.5 * kdim * math.log(r2)
    )
    s = 1.0 - np.sum(y * y, axis=-1) / r2
    expo = 0.5 * (d - kdim - 2)
    return math.exp(lognorm) * np.where(s > 0.0, np.clip(s, 0.0, None) ** expo, 0.0)


def marginal_eigenfunction_finiteN(idx: MultiIndex, n: int, params: SystemParams, v_block) -> np.ndarray:
    """Finite-N marginal eigenfunction at velocities v_block of shape (..., n, 3).

    Chain factors are associated Legendre functions evaluated at the
    per-level normalized coordinates t_a = y_a / sqrt(R^2 - sum_{b<a} y_b^2)
    in dimension q_a = 3N - 2 - a, each divided by s_a!/(s_a - r_a)! so the
    product converges to unit-normalized Hermite factors.  Zero outside
    the support ball sum |w_i|^2 < 2*N*eps0.
    """
    if idx.order != n:
        raise ValueError(f"index order {idx.order} != n={n}")
    N = params.n_particles
    if N <= n + 1:
        raise ValueError(f"need N > n+1, got N={N}, n={n}")
    v_block = np.asarray(v_block, dtype=float)
    w = w_block_from_v_block(v_block, params)
    y = w.reshape(w.shape[:-2] + (3 * n,))
    r2 = params.radius_sq

    weight = uniform_marginal_weight(y, n, params)
    inside = np.sum(y * y, axis=-1) < r2

    out = np.array(weight, copy=True)
    if idx.j > 0:
        rho2 = np.full(y.shape[:-1], r2)
        prod = np.ones_like(out)
        for a, (s, r) in enumerate(_chain_factors(idx)):
            if s == 0:
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(inside, y[..., a] / np.sqrt(np.clip(rho2, 1e-300, None)), 0.0)
            t = np.clip(t, -1.0, 1.0)
            q = 3 * N - 2 - (a + 1)
            factor = assoc_legendre_qdim(s, r, t, q)
            factor *= math.factorial(s - r) / math.factorial(s)
            prod = prod * factor
            rho2 = rho2 - y[..., a] ** 2
        out = out * prod
    out = np.where(inside, out, 0.0)
    return out if out.ndim else float(out)


def maxwellian_product(v_block: np.ndarray, n: int, params: SystemParams) -> np.ndarray:
    """Drifting product Maxwellian with per-axis variance 2*eps0/3."""
    c = 3.0 / (4.0 * params.eps0)
    diff = v_block - params.u0
    expo = -c * np.sum(diff * diff, axis=(-2, -1))
    return (c / math.pi) ** (1.5 * n) * np.exp(expo)


def marginal_eigenfunction_limit(idx: MultiIndex, n: int, params: SystemParams, v_block) -> np.ndarray:
    """Large-N limit: 2^(-j/2) * product Maxwellian * prod_a H_{m_a}(scaled coords)."""
    if idx.order != n:
        raise ValueError(f"index order {idx.order} != n={n}")
    v_block = np.asarray(v_block, dtype=float)
    x = (v_block - params.u0).reshape(v_block.shape[:-2] + (3 * n,))
    scale = math.sqrt(3.0 / (4.0 * params.eps0))
    out = maxwellian_product(v_block, n, params) * 2.0 ** (-0.5 * idx.j)
    for a, m in enumerate(idx.m):
        if m:
            out = out * hermite(m, scale * x[..., a])
    return out if np.ndim(out) else float(out)


@dataclass
class SpectralExpansion:
    """Truncated coefficient list F_idx over the marginal multi-index set.

    The zero multi-index carries coefficient 1 (probability normalization
    against the ground mode).
    """

    params: SystemParams
    n: int
    truncation: int
    coefficients: dict

    def __post_init__(self):
        zero = MultiIndex(0, (0,) * (3 * self.n))
        c0 = self.coefficients.get(zero, 1.0)
        if abs(c0 - 1.0) > 1e-12:
            raise ValueError(f"zero-index coefficient must be 1, got {c0}")
        self.coefficients = dict(self.coefficients)
        self.coefficients[zero] = 1.0

    def save_json(self, path):
        doc = {
            "params": {
                "n_particles": self.params.n_particles,
                "u0": [float(x) for x in self.params.u0],
                "e0": self.params.e0,
            },
            "n": self.n,
            "J": self.truncation,
            "entries": [
                {"m": list(idx.m), "coeff": float(c)}
                for idx, c in sorted(self.coefficients.items(), key=lambda kv: (kv[0].j, kv[0].m))
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)

    @classmethod
    def load_json(cls, path) -> "SpectralExpansion":
        with open(path) as fh:
            doc = json.load(fh)
        params = SystemParams(
            n_particles=doc["params"]["n_particles"],
            u0=np.array(doc["params"]["u0"]),
            e0=doc["params"]["e0"],
        )
        coeffs = {}
        for entry in doc["entries"]:
            m = tuple(entry["m"])
            coeffs[MultiIndex(sum(m), m)] = entry["coeff"]
        return cls(params=params, n=doc["n"], truncation=doc["J"], coefficients=coeffs)


def evolve_marginal_series(expansion: SpectralExpansion, tau: float, mode: str, v_block) -> np.ndarray:
    """Sum F_idx * g_idx(v_block) * exp(-lambda_j * tau) over the expansion.

    ``mode`` selects the finite-N eigenfunctions and spectrum or their
    large-N limits.
    """
    if mode not in ("finite_N", "limit"):
        raise ValueError(f"mode must be finite_N or limit, got {mode}")
    p = expansion.params
    n = expansion.n
    v_block = np.asarray(v_block, dtype=float)
    out = np.zeros(v_block.shape[:-2])
    for idx, coeff in expansion.coefficients.items():
        if idx.j > expansion.truncation or coeff == 0.0:
            continue
        if mode == "finite_N":
            lam = eigenvalue(idx.j, p.n_particles, p.eps0)
            g = marginal_eigenfunction_finiteN(idx, n, p, v_block)
        else:
            lam = limit_eigenvalue(idx.j, p.eps0)
            g = marginal_eigenfunction_limit(idx, n, p, v_block)
        out = out + coeff * math.exp(-lam * tau) * g
    return out if out.ndim else float(out)


# -- Fourier coefficients ---------------------------------------------------


def _full_chain_value(idx: MultiIndex, w_flat: np.ndarray, params: SystemParams) -> np.ndarray:
    """Eigenfunction Ytilde for a k_{3n}=0 chain, evaluated on full w-vectors.

    w_flat has shape (..., 3(N-1)); only chains descending from the
    uniform harmonic on the unretained coordinates are representable.
    """
    r2 = params.radius_sq
    rho2 = np.full(w_flat.shape[:-1], r2)
    out = np.ones(w_flat.shape[:-1])
    N = params.n_particles
    for a, (s, r) in enumerate(_chain_factors(idx)):
        if s == 0:
            break
        t = np.clip(w_flat[..., a] / np.sqrt(np.clip(rho2, 1e-300, None)), -1.0, 1.0)
        q = 3 * N - 2 - (a + 1)
        out = out * assoc_legendre_qdim(s, r, t, q) * (math.factorial(s - r) / math.factorial(s))
        rho2 = rho2 - w_flat[..., a] ** 2
    return out


def fourier_coefficient(
    f0,
    idx: MultiIndex,
    params: SystemParams,
    mode: str = "exact",
    rng: np.random.Generator | None = None,
    n_samples: int = 200_000,
):
    """Coefficient <F0|G>/<G|G> of the initial density against one eigenfunction.

    Exact mode is restricted to N=2 and first-axis zonal indices
    (m = (j,0,0)); ``f0`` is then either the string "dirac_pole" (unit mass
    at w = R*e1) or a callable of t = w_11/R on [-1, 1] giving the density
    relative to uniform.  Monte Carlo mode accepts any N > n+1 and a
    sampler ``f0(rng, count) -> (count, N, 3)`` drawing from F0; returns
    (value, stderr).
    """
    if mode == "exact":
        if params.n_particles != 2:
            raise ValueError("exact quadrature mode is implemented for N=2 only")
        if any(idx.m[1:]):
            raise ValueError(f"exact mode needs a zonal index (j,0,0), got {idx.m}")
        j = idx.j
        # Zonal chain on the 2-sphere: Ptilde_j^0(t;3) = sqrt(3)^j P_j(t),
        # normalized here by 1/s! per the chain convention (r=0: factor 1).
        x, w = np.polynomial.legendre.leggauss(128)
        pj = np.polynomial.legendre.legval(x, np.eye(j + 1)[j])
        gj = math.sqrt(3.0) ** j * pj
        if f0 == "dirac_pole":
            num = math.sqrt(3.0) ** j * 1.0  # P_j(1) = 1
        else:
            vals = np.asarray(f0(x), dtype=float)
            # the uniform measure in t is dt/2
            num = float(np.sum(w * 0.5 * vals * gj))
        den = float(np.sum(w * 0.5 * gj * gj))
        return (num / den, 0.0)

    if mode != "monte_carlo":
        raise ValueError(f"mode must be exact or monte_carlo, got {mode}")
    if rng is None:
        raise ValueError("monte_carlo mode needs an rng")

    v0 = f0(rng, n_samples)
    w0, _ = to_w_blocks(v0)
    y0 = w0.reshape(n_samples, -1)
    g0 = _full_chain_value(idx, y0, params)
    num = float(np.mean(g0))
    num_se = float(np.std(g0, ddof=1) / math.sqrt(n_samples))

    vu = sample_uniform_blocks(params, rng, n_samples)
    wu, _ = to_w_blocks(vu)
    gu = _full_chain_value(idx, wu.reshape(n_samples, -1), params)
    den = float(np.mean(gu * gu))
    den_se = float(np.std(gu * gu, ddof=1) / math.sqrt(n_samples))

    value = num / den
    stderr = abs(value) * math.sqrt((num_se / num) ** 2 + (den_se / den) ** 2) if num else num_se / den
    return (value, stderr)


def expansion_from_pairing(
    f0_callable,
    params: SystemParams,
    n: int,
    truncation: int,
    gh_nodes: int = 40,
) -> SpectralExpansion:
    """Limit-mode expansion of f0 by Gauss-Hermite pairing F = <f0|g>/<g|g>.

    ``f0_callable`` maps (..., n, 3) velocity blocks to density values.
    """
    axes = [gauss_hermite_axis(params.u0[a % 3], params.temperature, gh_nodes) for a in range(3 * n)]
    meshes = np.meshgrid(*(ax.nodes for ax in axes), indexing="ij")
    pts = np.stack(meshes, axis=-1).reshape((-1, n, 3))
    wgt = axes[0].weights
    for ax in axes[1:]:
        wgt = np.multiply.outer(wgt, ax.weights)
    wgt = wgt.reshape(-1)

    f0_vals = f0_callable(pts)
    coeffs = {}
    for j in range(0, truncation + 1):
        for idx in multi_index_set(j, n):
            g = marginal_eigenfunction_limit(idx, n, params, pts)
            num = float(np.sum(wgt * f0_vals * g))
            den = float(np.sum(wgt * g * g))
            coeffs[idx] = num / den
    zero = MultiIndex(0, (0,) * (3 * n))
    if abs(coeffs[zero] - 1.0) > 1e-8:
        raise ValueError(f"f0 is not normalized: ground coefficient {coeffs[zero]}")
    coeffs[zero] = 1.0
    return SpectralExpansion(params=params, n=n, truncation=truncation, coefficients=coeffs)


# -- N=2: exact heat kernel on the 2-sphere ---------------------------------


def sphere_heat_axis_density(params: SystemParams, tau: float, y, j_max: int = 20) -> np.ndarray:
    """Density in y = w_11 of the N=2 heat flow started from a point mass at w = R*e1.

    The N=2 manifold is the 2-sphere of radius R = 2*sqrt(eps0); its heat
    kernel from a pole is zonal, and the marginal onto the pole axis is
    (1/(2R)) * sum_j (2j+1) P_j(y/R) exp(-j(j+1) tau / R^2) on [-R, R].
    """
    if params.n_particles != 2:
        raise ValueError("axis density is the N=2 exact solution")
    y = np.asarray(y, dtype=float)
    r = params.radius
    t = np.clip(y / r, -1.0, 1.0)
    coeffs = np.array(
        [(2 * j + 1) * math.exp(-eigenvalue(j, 2, params.eps0) * tau) for j in range(j_max + 1)]
    )
    vals = np.polynomial.legendre.legval(t, coeffs)
    out = vals / (2.0 * r)
    return out if out.ndim else float(out)


# -- marginal consistency ----------------------------------------------------


def marginal_consistency_check(idx: MultiIndex, n: int, params: SystemParams, gh_nodes: int = 40) -> float:
    """Max defect of integrating the (n+1)-marginal limit eigenfunction over v_{n+1}.

    The integral must reproduce the n-marginal eigenfunction when the last
    three Hermite degrees vanish and zero otherwise.  The integrand
    factorizes per axis, so the v_{n+1} integral reduces to three 1-d
    Gauss-Hermite quadratures.
    """
    if idx.order != n + 1:
        raise ValueError(f"index order {idx.order} must be n+1={n + 1}")
    scale = math.sqrt(3.0 / (4.0 * params.eps0))
    ax = gauss_hermite_axis(0.0, params.temperature, gh_nodes)
    xi = scale * ax.nodes
    gauss = (scale**2 / math.pi) ** 0.5 * np.exp(-(xi**2))
    tail = [float(np.sum(ax.weights * gauss * hermite(m, xi))) for m in idx.m[3 * n :]]
    tail_product = tail[0] * tail[1] * tail[2]

    # Evaluate the retained part on a small velocity grid.
    span = 2.0 * math.sqrt(params.temperature)
    pts1 = np.linspace(-span, span, 5)
    meshes = np.meshgrid(*([pts1] * (3 * n)), indexing="ij")
    x = np.stack(meshes, axis=-1)
    v_block = params.u0 + x.reshape(x.shape[:-1] + (n, 3))

    head = MultiIndex(sum(idx.m[: 3 * n]), idx.m[: 3 * n])
    g_n = marginal_eigenfunction_limit(head, n, params, v_block)
    lhs = g_n * 2.0 ** (-0.5 * (idx.j - head.j)) * tail_product

    if any(idx.m[3 * n :]):
        rhs = 0.0
    else:
        rhs = g_n
    return float(np.max(np.abs(lhs - rhs)))
