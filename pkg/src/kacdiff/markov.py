"""Monte Carlo simulation of the sphere diffusion and ensemble estimators.

Two weak-order-1 schemes target the heat flow on the energy-momentum
sphere:

* projected Euler-Maruyama: v += sqrt(2 dtau) * P xi with tangent-projected
  Gaussian noise, followed by exact momentum recentering and energy rescale;
* pair rotations: one sweep applies, for every Cartesian coordinate pair
  (k, l) of the rotated w-vector in a freshly shuffled order, a planar
  rotation by a Gaussian angle of variance 2*dtau/(2*N*eps0), realizing the
  decomposition of the sphere Laplacian into planar generators.

Randomness comes from counter-based per-trajectory streams keyed by
(seed, trajectory index); each trajectory consumes its own stream in a
fixed order, so ensembles are bitwise reproducible under any batching or
parallel schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import from_w_blocks, project_tangent_blocks, to_w_blocks
from .grids import Axis, DensityGrid
from .model import SystemParams, VelocityState, WState

_TIME_CHUNK = 256


def default_dtau(params: SystemParams) -> float:
    """1e-3 over the fastest retained relaxation rate (the spectral gap)."""
    return 1e-3 * params.radius_sq / (3.0 * params.n_particles - 4.0)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory, derived from (seed, index)."""
    key = np.array([np.uint64(seed), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# -- single-step interfaces ----------------------------------------------------


def step_projected_em(
    state: VelocityState, dtau: float, rng: np.random.Generator, reproject: bool = True
) -> VelocityState:
    """One projected Euler-Maruyama step; exact re-projection unless disabled."""
    if dtau <= 0.0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    xi = rng.standard_normal(state.v.shape)[None]
    v = _em_apply(state.v[None].copy(), xi[:, None], [dtau], state.params, reproject)
    return VelocityState(v[0], state.params, check=reproject)


def step_pair_rotation(wstate: WState, dtau: float, rng: np.random.Generator) -> WState:
    """One full shuffled sweep of planar pair rotations; |w| is preserved exactly."""
    if dtau <= 0.0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    p = wstate.params
    d = 3 * (p.n_particles - 1)
    pk, pl = _pair_indices(d)
    sigma = math.sqrt(dtau / (p.n_particles * p.eps0))
    angles = sigma * rng.standard_normal((1, pk.size))
    order = rng.permuted(np.tile(np.arange(pk.size), (1, 1)), axis=1)
    w = wstate.w.reshape(-1).copy()
    _sweep_path(w, pk, pl, angles, order, p.radius, np.zeros(1), np.zeros(1))
    return WState(w.reshape(p.n_particles - 1, 3), p, check=False)


# -- internals -----------------------------------------------------------------


def _pair_indices(d: int):
    pk, pl = np.triu_indices(d, 1)
    return pk.astype(np.int64), pl.astype(np.int64)


def _em_apply(v, noise, dtaus, params, reproject=True, resid=None):
    """Advance states (B, N, 3) through steps using noise (B, len(dtaus), N, 3)."""
    u0 = params.u0
    r = params.radius
    for i, dt in enumerate(dtaus):
        eta = project_tangent_blocks(v, noise[:, i], params)
        v = v + math.sqrt(2.0 * dt) * eta
        if reproject:
            v = v - v.mean(axis=-2, keepdims=True) + u0
            c = v - u0
            norm = np.sqrt(np.sum(c * c, axis=(-2, -1), keepdims=True))
            v = u0 + c * (r / norm)
        if resid is not None:
            mom = np.abs(v.sum(axis=-2) - params.n_particles * u0).max(axis=-1)
            en = np.abs(0.5 * np.sum(v * v, axis=(-2, -1)) - params.n_particles * params.e0)
            np.maximum(resid[0], mom, out=resid[0])
            np.maximum(resid[1], en, out=resid[1])
    return v


@numba.njit(cache=True)
def _sweep_path(w, pk, pl, angles, order, radius, pre_resid, post_resid):  # pragma: no cover
    """Run shuffled pair-rotation sweeps on one flattened w-vector in place.

    angles: (steps, n_pairs) Gaussian angles already scaled per step.
    order: (steps, n_pairs) permutation of pair indices per sweep.
    pre_resid/post_resid slot 0 collects the max | |w|^2 - R^2 | seen
    before and after the per-sweep exact renormalization.
    """
    steps = angles.shape[0]
    n_pairs = angles.shape[1]
    r2 = radius * radius
    d = w.shape[0]
    for s in range(steps):
        for i in range(n_pairs):
            p = order[s, i]
            k = pk[p]
            l = pl[p]
            th = angles[s, i]
            c = math.cos(th)
            sn = math.sin(th)
            a = w[k]
            b = w[l]
            w[k] = c * a + sn * b
            w[l] = c * b - sn * a
        nrm2 = 0.0
        for a_i in range(d):
            nrm2 += w[a_i] * w[a_i]
        resid = abs(nrm2 - r2)
        if resid > pre_resid[0]:
            pre_resid[0] = resid
        scale = radius / math.sqrt(nrm2)
        for a_i in range(d):
            w[a_i] *= scale
        nrm2 = 0.0
        for a_i in range(d):
            nrm2 += w[a_i] * w[a_i]
        resid = abs(nrm2 - r2)
        if resid > post_resid[0]:
            post_resid[0] = resid


def _segment_steps(gap: float, dtau: float):
    """Full steps of dtau plus one remainder step landing exactly on the gap."""
    n_full = int(math.floor(gap / dtau + 1e-9))
    rem = gap - n_full * dtau
    steps = [dtau] * n_full
    if rem > 1e-12 * dtau:
        steps.append(rem)
    return steps


# -- ensemble statistics ---------------------------------------------------------


@dataclass
class EnsembleStats:
    """Monte Carlo estimators over independent trajectories at one checkpoint.

    Histograms are over centered first Cartesian components: hist_p1 and
    hist_p2 for particles 1 and 2, hist_pair their joint 2-d histogram.
    """

    sample_count: int
    mean: np.ndarray
    mean_stderr: np.ndarray
    var: np.ndarray
    var_stderr: np.ndarray
    pair_cov: np.ndarray
    pair_cov_stderr: np.ndarray
    hist_p1: DensityGrid
    hist_p1_stderr: np.ndarray
    hist_p2: DensityGrid
    hist_p2_stderr: np.ndarray
    hist_pair: DensityGrid

    @classmethod
    def from_states(cls, states: np.ndarray, params: SystemParams, bins: int = 64, pair_bins: int = 16):
        acc = _Accumulator(params, bins, pair_bins)
        acc.add(states)
        return acc.finalize()


class _Accumulator:
    """Commutative, associative reduction of per-trajectory observables."""

    def __init__(self, params: SystemParams, bins: int = 64, pair_bins: int = 16):
        self.params = params
        span = 5.0 * math.sqrt(2.0 * params.eps0 / 3.0)
        self.edges1 = np.linspace(-span, span, bins + 1)
        self.edges2 = np.linspace(-span, span, pair_bins + 1)
        self.count = 0
        self.s_c1 = np.zeros(3)
        self.s_c1sq = np.zeros(3)
        self.s_c2 = np.zeros(3)
        self.s_cross = np.zeros((3, 3))
        self.s_cross_sq = np.zeros((3, 3))
        self.h1 = np.zeros(bins, dtype=np.int64)
        self.h2 = np.zeros(bins, dtype=np.int64)
        self.hp = np.zeros((pair_bins, pair_bins), dtype=np.int64)

    def add(self, states: np.ndarray):
        c1 = states[:, 0, :] - self.params.u0
        c2 = states[:, 1, :] - self.params.u0
        self.count += states.shape[0]
        self.s_c1 += c1.sum(axis=0)
        self.s_c1sq += (c1 * c1).sum(axis=0)
        self.s_c2 += c2.sum(axis=0)
        cross = c1[:, :, None] * c2[:, None, :]
        self.s_cross += cross.sum(axis=0)
        self.s_cross_sq += (cross * cross).sum(axis=0)
        self.h1 += np.histogram(c1[:, 0], bins=self.edges1)[0]
        self.h2 += np.histogram(c2[:, 0], bins=self.edges1)[0]
        self.hp += np.histogram2d(c1[:, 0], c2[:, 0], bins=[self.edges2, self.edges2])[0].astype(np.int64)

    def finalize(self) -> EnsembleStats:
        b = self.count
        mean_c1 = self.s_c1 / b
        var = (self.s_c1sq / b - mean_c1**2) * (b / (b - 1.0))
        mean_stderr = np.sqrt(var / b)
        var_stderr = var * math.sqrt(2.0 / (b - 1.0))
        mean_c2 = self.s_c2 / b
        cov = (self.s_cross / b - np.outer(mean_c1, mean_c2)) * (b / (b - 1.0))
        cov_var = self.s_cross_sq / b - (self.s_cross / b) ** 2
        cov_stderr = np.sqrt(np.clip(cov_var, 0.0, None) / b)

        def _hist1d(counts):
            width = self.edges1[1] - self.edges1[0]
            total = counts.sum()
            dens = counts / (total * width)
            ax = Axis(0.5 * (self.edges1[:-1] + self.edges1[1:]), np.full(counts.size, width), "regular")
            p = counts / total
            se = np.sqrt(p * (1.0 - p) / total) / width
            return DensityGrid([ax], dens, order=1), se

        g1, se1 = _hist1d(self.h1)
        g2, se2 = _hist1d(self.h2)
        widthp = self.edges2[1] - self.edges2[0]
        totp = self.hp.sum()
        densp = self.hp / (totp * widthp * widthp)
        axp = Axis(0.5 * (self.edges2[:-1] + self.edges2[1:]), np.full(self.hp.shape[0], widthp), "regular")
        gp = DensityGrid([axp, axp], densp, order=2)
        return EnsembleStats(
            sample_count=b,
            mean=mean_c1 + self.params.u0,
            mean_stderr=mean_stderr,
            var=var,
            var_stderr=var_stderr,
            pair_cov=cov,
            pair_cov_stderr=cov_stderr,
            hist_p1=g1,
            hist_p1_stderr=se1,
            hist_p2=g2,
            hist_p2_stderr=se2,
            hist_pair=gp,
        )


@dataclass
class SimulationResult:
    scheme: str
    params: SystemParams
    checkpoints: list
    stats: dict
    states: dict | None = None
    max_momentum_residual: float = 0.0
    max_energy_residual: float = 0.0


def _uniform_start(gen: np.random.Generator, params: SystemParams) -> np.ndarray:
    n = params.n_particles
    w = gen.standard_normal((n - 1, 3))
    w *= params.radius / np.sqrt(np.sum(w * w))
    return from_w_blocks(w[None], np.sqrt(n) * params.u0[None, :])[0]


def simulate_ensemble(
    params: SystemParams,
    scheme: str,
    n_traj: int,
    tau_checkpoints,
    dtau: float | None = None,
    seed: int = 0,
    initial="uniform",
    return_states: bool = False,
    track_conservation: bool = False,
    bins: int = 64,
    pair_bins: int = 16,
    block_size: int | None = None,
) -> SimulationResult:
    """Independent trajectories with per-checkpoint estimators.

    ``initial`` is "uniform" (each trajectory draws its own start from its
    stream) or an (N, 3) array / VelocityState shared by all trajectories.
    Bitwise reproducible for fixed (seed, n_traj, scheme, dtau) under any
    batching.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    taus = [float(t) for t in tau_checkpoints]
    if not taus or any(t2 <= t1 for t1, t2 in zip(taus, taus[1:])) or taus[0] <= 0.0:
        raise ValueError("checkpoints must be a nonempty increasing positive list")
    if dtau is None:
        dtau = default_dtau(params)
    if dtau <= 0.0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    gaps = np.diff([0.0] + taus)
    if dtau > gaps.min() + 1e-12:
        raise ValueError(f"dtau={dtau} exceeds the smallest checkpoint gap {gaps.min()}")
    if scheme not in ("projected_em", "pair_rotation"):
        raise ValueError(f"unknown scheme {scheme}")

    if isinstance(initial, VelocityState):
        initial = initial.v
    uniform_start = isinstance(initial, str) and initial == "uniform"
    if not uniform_start:
        initial = np.asarray(initial, dtype=float)

    accs = [_Accumulator(params, bins, pair_bins) for _ in taus]
    states = {t: [] for t in taus} if return_states else None
    max_mom = 0.0
    max_en = 0.0
    n = params.n_particles

    if scheme == "projected_em":
        if block_size is None:
            block_size = max(16, min(n_traj, int(2e6 / (_TIME_CHUNK * 3 * n)) * 16))
        for lo in range(0, n_traj, block_size):
            hi = min(lo + block_size, n_traj)
            nb = hi - lo
            gens = [trajectory_rng(seed, i) for i in range(lo, hi)]
            if uniform_start:
                v = np.empty((nb, n, 3))
                for k, g in enumerate(gens):
                    v[k] = _uniform_start(g, params)
            else:
                v = np.broadcast_to(initial, (nb, n, 3)).copy()
            resid = [np.zeros(nb), np.zeros(nb)] if track_conservation else None
            for ci, gap in enumerate(gaps):
                step_list = _segment_steps(gap, dtau)
                pos = 0
                while pos < len(step_list):
                    chunk = step_list[pos : pos + _TIME_CHUNK]
                    noise = np.empty((nb, len(chunk), n, 3))
                    for k, g in enumerate(gens):
                        noise[k] = g.standard_normal((len(chunk), n, 3))
                    v = _em_apply(v, noise, chunk, params, True, resid)
                    pos += len(chunk)
                accs[ci].add(v)
                if return_states:
                    states[taus[ci]].append(v)
            if track_conservation:
                max_mom = max(max_mom, float(resid[0].max()))
                max_en = max(max_en, float(resid[1].max()))
    else:
        d = 3 * (n - 1)
        pk, pl = _pair_indices(d)
        w0_shared = None
        if not uniform_start:
            w0_shared, _ = to_w_blocks(initial)
            w0_shared = w0_shared.reshape(-1)
        step_lists = [_segment_steps(g, dtau) for g in gaps]
        sig_per_seg = [np.array([math.sqrt(dt / (n * params.eps0)) for dt in sl]) for sl in step_lists]
        snap = [np.empty((n_traj, d)) for _ in taus]
        pre = np.zeros(1)
        post = np.zeros(1)
        pair_range = np.arange(pk.size)
        for i in range(n_traj):
            g = trajectory_rng(seed, i)
            if w0_shared is None:
                w = g.standard_normal(d)
                w *= params.radius / math.sqrt(float(w @ w))
            else:
                w = w0_shared.copy()
            for ci, sl in enumerate(step_lists):
                if sl:
                    angles = g.standard_normal((len(sl), pk.size)) * sig_per_seg[ci][:, None]
                    order = g.permuted(np.tile(pair_range, (len(sl), 1)), axis=1)
                    _sweep_path(w, pk, pl, angles, order, params.radius, pre, post)
                snap[ci][i] = w
        w_last = np.sqrt(n) * params.u0
        for ci, t in enumerate(taus):
            v = from_w_blocks(snap[ci].reshape(n_traj, n - 1, 3), np.broadcast_to(w_last, (n_traj, 3)))
            accs[ci].add(v)
            if return_states:
                states[t].append(v)
            if track_conservation:
                mom = np.abs(v.sum(axis=-2) - n * params.u0).max()
                max_mom = max(max_mom, float(mom))
        if track_conservation:
            max_en = max(max_en, 0.5 * float(post[0]))

    result_states = (
        {t: np.concatenate(chunks, axis=0) for t, chunks in states.items()} if return_states else None
    )
    return SimulationResult(
        scheme=scheme,
        params=params,
        checkpoints=taus,
        stats={t: acc.finalize() for t, acc in zip(taus, accs)},
        states=result_states,
        max_momentum_residual=max_mom,
        max_energy_residual=max_en,
    )


def empirical_marginal(states: np.ndarray, n: int, params: SystemParams, bins: int | None = None) -> DensityGrid:
    """Histogram density of centered first components of the first n particles.

    n=1 gives the 1-d histogram of v_{1,1} - u_1; n=2 the 2-d histogram of
    (v_{1,1} - u_1, v_{2,1} - u_1).  Mass is one to round-off by
    construction.  Orders above 2 are not supported by the estimators.
    """
    if n not in (1, 2):
        raise ValueError(f"marginal estimation supports n <= 2, got {n}")
    span = 5.0 * math.sqrt(2.0 * params.eps0 / 3.0)
    if bins is None:
        bins = 64 if n == 1 else 16
    edges = np.linspace(-span, span, bins + 1)
    width = edges[1] - edges[0]
    ax = Axis(0.5 * (edges[:-1] + edges[1:]), np.full(bins, width), "regular")
    if n == 1:
        c = states[:, 0, 0] - params.u0[0]
        counts = np.histogram(c, bins=edges)[0]
        return DensityGrid([ax], counts / (counts.sum() * width), order=1)
    c1 = states[:, 0, 0] - params.u0[0]
    c2 = states[:, 1, 0] - params.u0[0]
    counts = np.histogram2d(c1, c2, bins=[edges, edges])[0]
    return DensityGrid([ax, ax], counts / (counts.sum() * width * width), order=2)


def w_axis_histogram(w_first: np.ndarray, params: SystemParams, bins: int = 48) -> DensityGrid:
    """Histogram density of the first rotated coordinate w_11 on [-R, R]."""
    r = params.radius
    edges = np.linspace(-r, r, bins + 1)
    width = edges[1] - edges[0]
    counts = np.histogram(np.clip(w_first, -r, r), bins=edges)[0]
    ax = Axis(0.5 * (edges[:-1] + edges[1:]), np.full(bins, width), "regular")
    return DensityGrid([ax], counts / (counts.sum() * width), order=1)
