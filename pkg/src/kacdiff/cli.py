"""Batch front end: JSON config in, CSV/JSON artifacts and a manifest out.

Subcommands: simulate, spectral, kinetic, asymptotics, report.  Exit codes:
0 success, 2 config error, 3 tolerance failure under --check.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .diagnostics import (
    chaos_metric,
    check_item,
    conservation_report,
    convergence_order,
    gap_estimate,
)
from .fokker_planck import (
    functionals,
    maxwellian,
    maxwellian_grid,
    moment_flow,
    propagate,
    relative_entropy,
)
from .grids import FLOAT_FMT, DensityGrid, gauss_hermite_axis
from .markov import default_dtau, empirical_marginal, simulate_ensemble, w_axis_histogram
from .model import derive_params
from .geometry import to_w_blocks, from_w_blocks
from .spectral import (
    MultiIndex,
    SpectralExpansion,
    degeneracy,
    eigenvalue,
    evolve_marginal_series,
    expansion_from_pairing,
    limit_eigenvalue,
    marginal_consistency_check,
    multi_index_set,
    sphere_heat_axis_density,
)

STUDIES = ("simulate", "spectral", "kinetic", "asymptotics", "report")

_TOP_KEYS = {"seed", "outdir", "params"} | set(STUDIES)
_PARAM_KEYS = {"n_particles", "u0", "e0"}
_STUDY_KEYS = {
    "simulate": {
        "scheme",
        "n_traj",
        "dtau",
        "tau_checkpoints",
        "initial",
        "bins",
        "pair_bins",
        "track_conservation",
        "conservation_tolerance",
        "chaos",
    },
    "spectral": {
        "n",
        "truncation",
        "tau_values",
        "initial",
        "mode",
        "grid_points",
        "grid_span_sigmas",
        "consistency_max_j",
        "eigen_max_j",
    },
    "kinetic": {
        "t_values",
        "gh_nodes",
        "initial",
        "entropy_checkpoints",
        "entropy_t_max",
        "moment_tolerance",
        "mass_tolerance",
        "entropy_rate_tolerance",
    },
    "asymptotics": {"s_max", "w_values", "p_values", "n_values", "slope_tolerance"},
    "report": {"inputs", "figures"},
}


class ConfigError(Exception):
    pass


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


def _require_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path: str, overrides) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key} crosses a non-object")
        node[parts[-1]] = value
    _require_keys(cfg, _TOP_KEYS, "config")
    if "params" not in cfg:
        raise ConfigError("config needs a params section")
    _require_keys(cfg["params"], _PARAM_KEYS, "params")
    return cfg


def _params(cfg: dict):
    p = cfg["params"]
    try:
        return derive_params(p["u0"], p["e0"], p["n_particles"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad params section: {exc}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) if isinstance(x, float) else str(x) for x in row) + "\n")


# -- studies -------------------------------------------------------------------


def _initial_state(spec, params):
    if spec == "uniform":
        return "uniform"
    if isinstance(spec, dict) and spec.get("type") == "point_w_axis":
        n = params.n_particles
        w = np.zeros((n - 1, 3))
        w[0, 0] = params.radius
        return from_w_blocks(w[None], np.sqrt(n) * params.u0[None, :])[0]
    if isinstance(spec, dict) and spec.get("type") == "velocities":
        return np.asarray(spec["v"], dtype=float)
    raise ConfigError(f"unknown initial condition {spec!r}")


def run_simulate(cfg: dict, outdir: str, seed: int, check: bool) -> list:
    sec = cfg.get("simulate", {})
    _require_keys(sec, _STUDY_KEYS["simulate"], "simulate")
    params = _params(cfg)
    schemes = sec.get("scheme", "projected_em")
    schemes = ["projected_em", "pair_rotation"] if schemes == "both" else [schemes]
    n_traj = int(sec.get("n_traj", 2000))
    dtau = sec.get("dtau")
    taus = sec.get("tau_checkpoints", [0.2, 1.0])
    initial = _initial_state(sec.get("initial", "uniform"), params)
    tol = float(sec.get("conservation_tolerance", 1e-10))
    checks = []
    outputs = []
    results = []
    for scheme in schemes:
        res = simulate_ensemble(
            params,
            scheme,
            n_traj,
            taus,
            dtau=dtau,
            seed=seed,
            initial=initial,
            return_states=True,
            track_conservation=bool(sec.get("track_conservation", True)),
            bins=int(sec.get("bins", 64)),
            pair_bins=int(sec.get("pair_bins", 16)),
        )
        results.append(res)
        rows = []
        for t in res.checkpoints:
            st = res.stats[t]
            rows.append(
                [float(t)]
                + [float(x) for x in st.mean]
                + [float(x) for x in st.mean_stderr]
                + [float(x) for x in st.var]
                + [float(st.pair_cov[k, k]) for k in range(3)]
                + [float(st.pair_cov_stderr[k, k]) for k in range(3)]
            )
        _write_csv(
            os.path.join(outdir, f"stats_{scheme}.csv"),
            ["tau", "mean1", "mean2", "mean3", "se1", "se2", "se3", "var1", "var2", "var3",
             "cov11", "cov22", "cov33", "covse11", "covse22", "covse33"],
            rows,
        )
        outputs.append(f"stats_{scheme}.csv")
        for k, t in enumerate(res.checkpoints):
            grid = empirical_marginal(res.states[t], 1, params, bins=int(sec.get("bins", 64)))
            name = f"marginal_{scheme}_cp{k}.csv"
            grid.save_csv(os.path.join(outdir, name))
            outputs.append(name)
        last = res.checkpoints[-1]
        if isinstance(initial, str) and initial == "uniform":
            st = res.stats[last]
            dev = np.abs(st.mean - params.u0)
            ok = bool(np.all(dev <= 3.0 * st.mean_stderr + 1e-12))
            checks.append(
                check_item(
                    f"uniform_mean_{scheme}",
                    float(dev.max()),
                    float(st.mean_stderr.max()),
                    float(3.0 * st.mean_stderr.max()),
                    ok,
                )
            )
        if sec.get("chaos", False):
            cm = chaos_metric(res.stats[last], params)
            expected = -2.0 * params.eps0 / (3.0 * (params.n_particles - 1))
            dev = abs(float(np.mean(np.diag(cm.pair_cov))) - expected)
            se = float(np.mean(np.diag(cm.pair_cov_stderr)))
            checks.append(check_item(f"pair_cov_{scheme}", dev, se, 3.0 * se, dev <= 3.0 * se))
    checks.extend(conservation_report(results, tolerance=tol))
    _write_json(os.path.join(outdir, "conservation_report.json"), checks)
    outputs.append("conservation_report.json")
    return checks, outputs


def _spectral_initial(sec, params, n, truncation):
    spec = sec.get("initial", "dirac_pole")
    if spec == "dirac_pole":
        return "dirac_pole"
    if isinstance(spec, dict) and spec.get("type") == "hermite_perturbation":
        axis = int(spec.get("axis", 0))
        degree = int(spec.get("degree", 3))
        coeff = float(spec.get("coefficient", 0.2))
        zero = MultiIndex(0, (0,) * (3 * n))
        m = [0] * (3 * n)
        m[axis] = degree
        idx = MultiIndex(degree, tuple(m))
        return SpectralExpansion(
            params=params, n=n, truncation=truncation, coefficients={zero: 1.0, idx: coeff}
        )
    raise ConfigError(f"unknown spectral initial {spec!r}")


def run_spectral(cfg: dict, outdir: str, seed: int, check: bool) -> list:
    sec = cfg.get("spectral", {})
    _require_keys(sec, _STUDY_KEYS["spectral"], "spectral")
    params = _params(cfg)
    n = int(sec.get("n", 1))
    truncation = int(sec.get("truncation", 8))
    taus = [float(t) for t in sec.get("tau_values", [0.0, 0.2, 1.0])]
    jmax = int(sec.get("eigen_max_j", max(truncation, 8)))
    rows = [
        [j, eigenvalue(j, params.n_particles, params.eps0), limit_eigenvalue(j, params.eps0),
         degeneracy(j, params.n_particles)]
        for j in range(jmax + 1)
    ]
    _write_csv(
        os.path.join(outdir, "eigen_table.csv"),
        ["j", "lambda_finiteN", "lambda_limit", "degeneracy"],
        [[r[0], float(r[1]), float(r[2]), r[3]] for r in rows],
    )
    outputs = ["eigen_table.csv"]
    checks = []

    initial = _spectral_initial(sec, params, n, truncation)
    span = float(sec.get("grid_span_sigmas", 4.0)) * math.sqrt(params.temperature)
    pts = int(sec.get("grid_points", 81))
    if initial == "dirac_pole":
        if params.n_particles != 2:
            raise ConfigError("dirac_pole initial data needs n_particles = 2")
        y = np.linspace(-params.radius, params.radius, pts)
        for k, t in enumerate(taus):
            dens = sphere_heat_axis_density(params, t, y, j_max=max(truncation, 20))
            name = f"axis_density_tau{k}.csv"
            _write_csv(os.path.join(outdir, name), ["w11", "density"], list(zip(y.tolist(), dens.tolist())))
            outputs.append(name)
    else:
        mode = sec.get("mode", "limit")
        x = np.linspace(-span, span, pts)
        v_block = np.zeros((pts, n, 3)) + params.u0
        v_block[:, 0, 0] = params.u0[0] + x
        for k, t in enumerate(taus):
            vals = evolve_marginal_series(initial, t, mode, v_block)
            name = f"marginal_series_tau{k}.csv"
            _write_csv(os.path.join(outdir, name), ["v11", "density"], list(zip(x.tolist(), vals.tolist())))
            outputs.append(name)

    max_j = int(sec.get("consistency_max_j", 0))
    if max_j > 0:
        defects = []
        worst = 0.0
        for j in range(max_j + 1):
            for idx in multi_index_set(j, n + 1):
                d = marginal_consistency_check(idx, n, params)
                defects.append({"m": list(idx.m), "defect": d})
                worst = max(worst, d)
        _write_json(os.path.join(outdir, "marginal_consistency.json"), defects)
        outputs.append("marginal_consistency.json")
        checks.append(check_item("marginal_consistency_defect", worst, 0.0, 1e-8, worst < 1e-8))
    return checks, outputs


def _kinetic_initial(sec, params, nodes):
    spec = sec.get("initial", {"type": "displaced_maxwellian", "displacement": [0.6, 0.0, 0.0]})
    grid = maxwellian_grid(params, nodes)
    meshes = grid.meshes()
    v = np.stack(meshes, axis=-1)
    if spec.get("type") == "displaced_maxwellian":
        a = np.asarray(spec.get("displacement", [0.6, 0.0, 0.0]), dtype=float)
        c = 3.0 / (4.0 * params.eps0)
        diff = v - params.u0 - a
        vals = (c / math.pi) ** 1.5 * np.exp(-c * np.sum(diff * diff, axis=-1))
        return grid.with_values(vals)
    if spec.get("type") == "hermite_perturbation":
        from .specfun import hermite

        degree = int(spec.get("degree", 3))
        coeff = float(spec.get("coefficient", 0.2))
        scale = math.sqrt(3.0 / (4.0 * params.eps0))
        xi = scale * (meshes[0] - params.u0[0])
        vals = maxwellian(params, v) * (1.0 + coeff * hermite(degree, xi) / 2.0**degree)
        return grid.with_values(vals)
    raise ConfigError(f"unknown kinetic initial {spec!r}")


def run_kinetic(cfg: dict, outdir: str, seed: int, check: bool) -> list:
    sec = cfg.get("kinetic", {})
    _require_keys(sec, _STUDY_KEYS["kinetic"], "kinetic")
    params = _params(cfg)
    nodes = int(sec.get("gh_nodes", 40))
    t_values = [float(t) for t in sec.get("t_values", [0.1, 1.0, 5.0])]
    f0 = _kinetic_initial(sec, params, nodes)
    mom0 = functionals(f0)
    u = params.u0
    T = params.temperature
    rows = []
    mom_tol = float(sec.get("moment_tolerance", 1e-6))
    mass_tol = float(sec.get("mass_tolerance", 1e-8))
    worst_mom = 0.0
    worst_mass = 0.0
    for t in t_values:
        ft = propagate(f0, t, params=params)
        mt = functionals(ft)
        pred = moment_flow(mom0, u, T, t)
        defect = max(
            abs(mt.m - pred.m),
            float(np.max(np.abs(mt.p - pred.p))),
            abs(mt.e - pred.e),
        )
        worst_mom = max(worst_mom, defect)
        worst_mass = max(worst_mass, abs(mt.m - mom0.m))
        rows.append(
            [float(t), mt.m, *[float(x) for x in mt.p], mt.e,
             pred.m, *[float(x) for x in pred.p], pred.e, defect]
        )
    _write_csv(
        os.path.join(outdir, "moments.csv"),
        ["t", "m", "p1", "p2", "p3", "e", "m_pred", "p1_pred", "p2_pred", "p3_pred", "e_pred", "defect"],
        rows,
    )
    outputs = ["moments.csv"]
    checks = [
        check_item("moment_agreement", worst_mom, 0.0, mom_tol, worst_mom <= mom_tol),
        check_item("mass_defect", worst_mass, 0.0, mass_tol, worst_mass <= mass_tol),
    ]

    n_cp = int(sec.get("entropy_checkpoints", 50))
    t_max = float(sec.get("entropy_t_max", 2.5))
    ts = np.linspace(t_max / n_cp, t_max, n_cp)
    entropies = []
    for t in ts:
        ft = propagate(f0, float(t), params=params)
        entropies.append(relative_entropy(ft, params))
    entropies = np.array(entropies)
    _write_csv(os.path.join(outdir, "entropy.csv"), ["t", "S"], list(zip(ts.tolist(), entropies.tolist())))
    outputs.append("entropy.csv")
    monotone = bool(np.all(np.diff(entropies) >= -1e-12))
    checks.append(check_item("entropy_monotone", float(np.min(np.diff(entropies))), 0.0, 1e-12, monotone))
    rate_tol = float(sec.get("entropy_rate_tolerance", 0.05))
    try:
        fit = gap_estimate(ts, entropies, 0.0, noise_floor=1e-13)
        ok = abs(fit.rate - 2.0) <= rate_tol * 2.0
        checks.append(check_item("entropy_rate", fit.rate, fit.stderr, rate_tol * 2.0, ok))
    except ValueError:
        checks.append(check_item("entropy_rate", float("nan"), 0.0, rate_tol * 2.0, False))
    return checks, outputs


def run_asymptotics(cfg: dict, outdir: str, seed: int, check: bool) -> list:
    from .specfun import asymptotic_error

    sec = cfg.get("asymptotics", {})
    _require_keys(sec, _STUDY_KEYS["asymptotics"], "asymptotics")
    params = _params(cfg)
    s_max = int(sec.get("s_max", 4))
    w_values = [float(w) for w in sec.get("w_values", [0.5, 1.0, 2.0])]
    p_values = [int(p) for p in sec.get("p_values", [3, 4])]
    n_values = [int(N) for N in sec.get("n_values", [400, 1600, 6400])]
    slope_tol = float(sec.get("slope_tolerance", 0.1))
    rows = []
    slopes = []
    for s in range(s_max + 1):
        for r in range(s + 1):
            for w in w_values:
                for p in p_values:
                    errs = [asymptotic_error(s, r, w, params.eps0, p, N) for N in n_values]
                    for N, e in zip(n_values, errs):
                        rows.append([s, r, float(w), p, N, float(e)])
                    if all(e > 1e-13 for e in errs):
                        fit = convergence_order(n_values, errs, noise_allowance=2.0)
                        slopes.append(fit.slope)
    _write_csv(
        os.path.join(outdir, "legendre_errors.csv"),
        ["s", "r", "w", "p", "N", "error"],
        rows,
    )
    mean_slope = float(np.mean(slopes))
    worst = float(np.max(np.abs(np.array(slopes) + 0.5)))
    doc = {"slopes": slopes, "mean_slope": mean_slope, "worst_deviation": worst}
    _write_json(os.path.join(outdir, "legendre_slopes.json"), doc)
    checks = [
        check_item("legendre_hermite_slope", mean_slope, 0.0, slope_tol, abs(mean_slope + 0.5) <= slope_tol)
    ]
    return checks, ["legendre_errors.csv", "legendre_slopes.json"]


def _read_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    return header, np.array(rows)


def run_report(cfg: dict, outdir: str, seed: int, check: bool) -> list:
    sec = cfg.get("report", {})
    _require_keys(sec, _STUDY_KEYS["report"], "report")
    inputs = sec.get("inputs", [])
    if not inputs:
        raise ConfigError("report needs a list of input directories")
    make_figures = bool(sec.get("figures", True))
    collected = []
    figures = []
    for indir in inputs:
        man_path = os.path.join(indir, "run_manifest.json")
        if not os.path.exists(man_path):
            raise ConfigError(f"no run_manifest.json in {indir}")
        with open(man_path) as fh:
            manifest = json.load(fh)
        collected.append({"input": indir, "study": manifest["study"], "checks": manifest["checks"]})
        if make_figures:
            figures.extend(_render_figures(indir, manifest, outdir))
    doc = {"inputs": collected, "all_pass": all(c["pass"] for e in collected for c in e["checks"])}
    _write_json(os.path.join(outdir, "report.json"), doc)
    checks = [
        check_item("aggregated_pass", 1.0 if doc["all_pass"] else 0.0, 0.0, 1.0, doc["all_pass"])
    ]
    return checks, ["report.json"] + figures


def _render_figures(indir, manifest, outdir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    made = []
    study = manifest["study"]
    tag = os.path.basename(os.path.normpath(indir))

    def _save(fig, name):
        path = os.path.join(outdir, name)
        fig.savefig(path, dpi=140, bbox_inches="tight")
        plt.close(fig)
        made.append(name)

    if study == "kinetic":
        header, rows = _read_csv(os.path.join(indir, "moments.csv"))
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.plot(rows[:, 0], rows[:, 5], "o-", label="energy (quadrature)")
        ax.plot(rows[:, 0], rows[:, 10], "k--", label="energy (closed form)")
        ax.set_xlabel("t")
        ax.set_ylabel("e(f)")
        ax.legend(frameon=False)
        _save(fig, f"moments_{tag}.png")
        header, rows = _read_csv(os.path.join(indir, "entropy.csv"))
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.semilogy(rows[:, 0], np.abs(rows[:, 1]), "o-")
        ax.set_xlabel("t")
        ax.set_ylabel("|S(f | f_M)|")
        _save(fig, f"entropy_{tag}.png")
    elif study == "asymptotics":
        header, rows = _read_csv(os.path.join(indir, "legendre_errors.csv"))
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.loglog(rows[:, 4], rows[:, 5], ".", alpha=0.5)
        ns = np.unique(rows[:, 4])
        ref = rows[rows[:, 4] == ns[0], 5].mean() * (ns / ns[0]) ** -0.5
        ax.loglog(ns, ref, "k--", label="slope -1/2")
        ax.set_xlabel("N")
        ax.set_ylabel("|finite - limit|")
        ax.legend(frameon=False)
        _save(fig, f"legendre_{tag}.png")
    elif study == "simulate":
        for name in manifest["outputs"]:
            if name.startswith("marginal_") and name.endswith(".csv"):
                grid = DensityGrid.load_csv(os.path.join(indir, name))
                if grid.ndim != 1:
                    continue
                fig, ax = plt.subplots(figsize=(5, 3.4))
                ax.step(grid.axes[0].nodes, grid.values, where="mid")
                ax.set_xlabel("v11 - u1")
                ax.set_ylabel("density")
                _save(fig, name.replace(".csv", f"_{tag}.png"))
    elif study == "spectral":
        for name in manifest["outputs"]:
            if name.startswith(("axis_density_", "marginal_series_")) and name.endswith(".csv"):
                header, rows = _read_csv(os.path.join(indir, name))
                fig, ax = plt.subplots(figsize=(5, 3.4))
                ax.plot(rows[:, 0], rows[:, 1])
                ax.set_xlabel(header[0])
                ax.set_ylabel(header[1])
                _save(fig, name.replace(".csv", f"_{tag}.png"))
    return made


# -- entry point -----------------------------------------------------------------


_RUNNERS = {
    "simulate": run_simulate,
    "spectral": run_spectral,
    "kinetic": run_kinetic,
    "asymptotics": run_asymptotics,
    "report": run_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kacdiff", description=__doc__)
    parser.add_argument("study", choices=STUDIES)
    parser.add_argument("config", help="JSON configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--check", action="store_true", help="exit 3 if any tolerance check fails")
    parser.add_argument("--outdir", default=None)
    args = parser.parse_args(argv)

    t0 = time.monotonic()
    try:
        cfg = load_config(args.config, args.overrides)
        outdir = args.outdir or os.environ.get("KACDIFF_OUTDIR") or cfg.get("outdir") or "."
        os.makedirs(outdir, exist_ok=True)
        seed = int(cfg.get("seed", 0))
        threads = os.environ.get("KACDIFF_THREADS")
        if threads:
            try:
                import numba

                numba.set_num_threads(max(1, int(threads)))
            except (ImportError, ValueError):
                pass
        runner = _RUNNERS[args.study]
        checks, outputs = runner(cfg, outdir, seed, args.check)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    resolved = copy.deepcopy(cfg)
    resolved.setdefault("seed", seed)
    manifest = {
        "artifact": "kacdiff",
        "version": __version__,
        "study": args.study,
        "seed": seed,
        "config": resolved,
        "outputs": outputs,
        "checks": checks,
        "wall_clock_seconds": round(time.monotonic() - t0, 3),
    }
    _write_json(os.path.join(outdir, "run_manifest.json"), manifest)

    failed = [c for c in checks if not c["pass"]]
    for c in checks:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"[{status}] {c['metric']}: value={c['value']:.6g} tolerance={c['tolerance']:.6g}")
    if args.check and failed:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
