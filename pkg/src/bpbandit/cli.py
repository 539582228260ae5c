"""Command-line entry points: simulate, offline, curvature, deff-sweep.

Outputs are RFC-4180-style CSV files (UTF-8, '.' decimal, repr-formatted
floats so identical configs and seeds reproduce byte-identical files) plus a
metadata sidecar with the config hash and library versions.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bp import BPObjective
from .config import ExperimentConfig, load_ratings_matrix, parse_config
from .curvature import (submodular_curvature, supermodular_curvature,
                        weak_submod_report)
from .errors import (BpbError, ConfigError, InfeasibleBaselineError,
                     NumericalError)
from .instances import (DeskInstance, build_bp_desk, build_ws_desk,
                        make_instance, random_bp_instance, random_ws_instance)
from .kernels import KernelSpec, effective_dimension, gram, information_gain_bound
from .oracles import (GroundSet, SetFunctionOracle, make_concave_over_modular,
                      make_modular, make_sum_dispersion, sum_oracles)
from .offline import check_robust_bound
from .sim import run_trials

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(h, "")) for h in header) + "\r\n")


def write_metadata(out: Path, cfg: ExperimentConfig, files: list[str]) -> None:
    meta = {
        "config_hash": cfg.config_hash(),
        "bp_bandit_version": __version__,
        "numpy_version": np.__version__,
        "files": sorted(files),
        "config": cfg.raw,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def _load_desk(cfg: ExperimentConfig) -> DeskInstance:
    if cfg.ratings_csv is not None:
        return _ratings_desk(cfg)
    params = dict(cfg.instance_params)
    if cfg.instance_kind == "bp_desk":
        desk = build_bp_desk(cfg.instance_seed, n=cfg.instance_n, **params)
    elif cfg.instance_kind == "ws_desk":
        desk = build_ws_desk(cfg.instance_seed, n=cfg.instance_n, **params)
    else:
        raise ConfigError([f"instance.kind: {cfg.instance_kind!r} is not a "
                           f"simulatable multi-context instance "
                           f"(use bp_desk or ws_desk)"])
    if cfg.t_q is not None:
        if len(cfg.t_q) != desk.m:
            raise ConfigError(["t_q: needs one entry per context"])
        desk.T_q = list(cfg.t_q)
    if cfg.noise_sigma is not None:
        desk.noise_sigma = cfg.noise_sigma
    if cfg.horizon is not None and cfg.horizon != desk.horizon and \
            cfg.arrival in ("round_robin", "trace"):
        raise ConfigError(["horizon: must equal sum(T_q) for this instance "
                           f"(= {desk.horizon})"])
    return desk


def _ratings_desk(cfg: ExperimentConfig) -> DeskInstance:
    if cfg.genres_csv is None:
        raise ConfigError(["instance.genres_csv: required with ratings_csv"])
    groups, movies, m, membership, genre_names = load_ratings_matrix(
        cfg.ratings_csv, cfg.genres_csv)
    n = len(movies)
    tau = float(np.median(m[m > 0])) if (m > 0).any() else 0.0
    shared_genre = (membership @ membership.T > 0).astype(float)
    np.fill_diagonal(shared_genre, 0.0)
    disp = make_sum_dispersion(0.1 * shared_genre)
    objectives = []
    for q in range(len(groups)):
        f = make_concave_over_modular(membership, m[q], tau)
        floor = 0.2 + 0.1 * m[q]
        g = sum_oracles(make_modular(floor), disp, name="floor+dispersion")
        fv, gv = f(range(n)), g(range(n))
        scale_g = 1.2 * max(fv, 1e-9) / max(gv, 1e-9)
        objectives.append(BPObjective(m[q], f, g, 1.0, scale_g,
                                      name=f"ratings[{groups[q]}]"))
    contexts = m / max(m.max(), 1e-9)
    ground = GroundSet(n, item_features=membership)
    if cfg.t_q is not None:
        T_q = list(cfg.t_q)
    else:
        per = max(1, (cfg.horizon or len(groups)) // len(groups))
        T_q = [min(per, n)] * len(groups)
    return DeskInstance("bp", ground, objectives, contexts, T_q,
                        noise_sigma=cfg.noise_sigma or 0.1)


@click.group()
def main() -> None:
    """Online BP / weakly-submodular maximization experiments."""


def _run_guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InfeasibleBaselineError as exc:
        click.echo(f"infeasible baseline: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical error: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except BpbError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)


_common = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=True), help="JSON config file"),
    click.option("--out", "out_dir", default=None, help="output directory"),
    click.option("--seeds", default=None, help="comma-separated seed list"),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _parse(config_path, out_dir, seeds, algorithms=None) -> ExperimentConfig:
    cfg = parse_config(config_path)
    if out_dir:
        cfg.out_dir = out_dir
    if seeds:
        try:
            cfg.seeds = [int(s) for s in seeds.split(",") if s]
        except ValueError:
            raise ConfigError(["--seeds: must be comma-separated integers"]) from None
    if algorithms:
        cfg.algorithms = [a for a in algorithms.split(",") if a]
    return cfg


@main.command()
@_with_common
@click.option("--algorithms", default=None, help="comma-separated algorithm list")
def simulate(config_path, out_dir, seeds, algorithms):
    """Run the bandit algorithms and emit per-round and aggregate CSVs."""

    def body():
        cfg = _parse(config_path, out_dir, seeds, algorithms)
        desk = _load_desk(cfg)
        results = run_trials(desk, cfg.algorithms, cfg.kernel, cfg.nystrom,
                             cfg.beta, cfg.seeds, baseline=cfg.baseline,
                             arrival=cfg.arrival, trace_arrivals=cfg.trace,
                             noise_sigma=cfg.noise_sigma,
                             horizon=cfg.horizon if cfg.arrival == "iid_uniform"
                             else None)
        out = Path(cfg.out_dir)
        files = []
        round_header = ["t", "u_t", "v_t", "y", "beta", "G_size",
                        "cum_regret_bp", "cum_regret_bp2", "cum_reward"]
        agg_header = ["t", "mean_cum_regret", "std_cum_regret", "algorithm",
                      "seed_count", "mean_cum_reward", "std_cum_reward"]
        for name, agg in results.items():
            for seed, trace in zip(agg.seeds, agg.traces):
                rows = []
                for i, r in enumerate(trace.rows):
                    row = {"t": r["t"], "u_t": r["u"], "v_t": r["v"],
                           "y": r["y"], "beta": r["beta"], "G_size": r["g_size"],
                           "cum_reward": trace.cum_reward[i]}
                    if "bp" in trace.cum_regret:
                        row["cum_regret_bp"] = trace.cum_regret["bp"][i]
                    elif "ws" in trace.cum_regret:
                        row["cum_regret_bp"] = trace.cum_regret["ws"][i]
                    if "bp2" in trace.cum_regret:
                        row["cum_regret_bp2"] = trace.cum_regret["bp2"][i]
                    rows.append(row)
                fname = f"{name}_seed{seed}.csv"
                write_csv(out / fname, round_header, rows)
                files.append(fname)
            fname = f"{name}_aggregate.csv"
            write_csv(out / fname, agg_header, agg.rows())
            files.append(fname)
        write_metadata(out, cfg, files)
        click.echo(f"wrote {len(files)} CSV files to {out}")

    _run_guarded(body)


@main.command()
@_with_common
def offline(config_path, out_dir, seeds):
    """Robustness-bound sweep: slack-injected greedy vs its guarantees."""

    def body():
        cfg = _parse(config_path, out_dir, seeds)
        sl = cfg.slack
        which = sl.get("which", "bp")
        rng = np.random.default_rng(sl.get("seed", 0))
        rows, violations, tightest = [], 0, float("inf")
        for i in range(int(sl.get("instances", 200))):
            if which == "ws":
                h = random_ws_instance(rng)
                V = GroundSet(h.n)
                k = int(rng.integers(1, min(3, h.n) + 1))
                report = check_robust_bound(h, V, k, int(sl.get("trials", 2)),
                                            sl.get("policy", "worst-feasible"),
                                            "ws", rng)
            else:
                obj, k = random_bp_instance(rng)
                V = GroundSet(obj.n)
                report = check_robust_bound(obj, V, k, int(sl.get("trials", 2)),
                                            sl.get("policy", "worst-feasible"),
                                            which, rng)
            violations += report.violations
            tightest = min(tightest, report.tightest_margin)
            for r in report.rows:
                rows.append({"instance_id": i, "alpha": r["alpha"],
                             "h_opt": r["h_opt"], "h_alg": r["h_alg"],
                             "slack_sum": r["slack_sum"], "margin": r["margin"]})
        out = Path(cfg.out_dir)
        write_csv(out / "robustness.csv",
                  ["instance_id", "alpha", "h_opt", "h_alg", "slack_sum",
                   "margin"], rows)
        write_metadata(out, cfg, ["robustness.csv"])
        click.echo(f"{which}: {violations} violations over {len(rows)} runs; "
                   f"tightest margin {tightest:.6g}")
        if violations:
            sys.exit(EXIT_NUMERICAL)

    _run_guarded(body)


@main.command()
@_with_common
def curvature(config_path, out_dir, seeds):
    """Structural constants (kappa_f, kappa_g, gamma, zeta) of an instance."""

    def body():
        cfg = _parse(config_path, out_dir, seeds)
        inst = make_instance(cfg.instance_kind, cfg.instance_n,
                             cfg.instance_seed, cfg.instance_params)
        V = GroundSet(cfg.instance_n)
        row = {"kind": cfg.instance_kind, "n": cfg.instance_n,
               "seed": cfg.instance_seed}
        if isinstance(inst, BPObjective):
            kf, kg = inst.curvatures()
            row["kappa_f"], row["kappa_g"] = kf, kg
            h = inst.total
        elif isinstance(inst, SetFunctionOracle):
            h = inst
            try:
                row["kappa_f"] = submodular_curvature(inst, V)[0]
            except BpbError:
                row["kappa_f"] = ""
            try:
                row["kappa_g"] = supermodular_curvature(inst, V)[0]
            except BpbError:
                row["kappa_g"] = ""
        else:
            raise ConfigError(["instance.kind: curvature needs a single-"
                               "objective instance, not a desk bundle"])
        if cfg.instance_n <= 12:
            rep = weak_submod_report(h, V)
            row["gamma"], row["zeta"] = rep.gamma, rep.zeta
        out = Path(cfg.out_dir)
        write_csv(out / "curvature.csv",
                  ["kind", "n", "seed", "kappa_f", "kappa_g", "gamma", "zeta"],
                  [row])
        write_metadata(out, cfg, ["curvature.csv"])
        click.echo(",".join(f"{k}={row.get(k, '')}" for k in
                            ("kappa_f", "kappa_g", "gamma", "zeta")))

    _run_guarded(body)


@main.command(name="deff-sweep")
@_with_common
def deff_sweep(config_path, out_dir, seeds):
    """Effective dimension of an RBF Gram matrix vs bandwidth and horizon."""

    def body():
        cfg = _parse(config_path, out_dir, seeds)
        sw = cfg.deff_sweep
        rng = np.random.default_rng(int(sw.get("seed", 0)))
        dim = int(sw.get("dim", 3))
        lam = float(sw.get("lam", 1.0))
        n_clusters = int(sw.get("clusters", 10))
        horizons = sorted(int(t) for t in sw.get("horizons", [50, 100, 200]))
        centers = rng.normal(size=(n_clusters, dim)) * 2.0
        T_max = horizons[-1]
        pts = centers[rng.integers(n_clusters, size=T_max)] \
            + 0.3 * rng.normal(size=(T_max, dim))
        rows = []
        from .kernels import ContextPoint
        for bw in sw.get("bandwidths", [0.1, 1.0, 10.0]):
            spec = KernelSpec("rbf", operand="item", bandwidth=float(bw))
            points = [ContextPoint(item_features=p) for p in pts]
            K_full = gram(spec, points)
            for T in horizons:
                K = K_full[:T, :T]
                rows.append({"bandwidth": bw, "T": T,
                             "d_eff": effective_dimension(K, lam),
                             "info_gain": information_gain_bound(K, lam)})
        out = Path(cfg.out_dir)
        write_csv(out / "deff_sweep.csv",
                  ["bandwidth", "T", "d_eff", "info_gain"], rows)
        write_metadata(out, cfg, ["deff_sweep.csv"])
        click.echo(f"wrote {len(rows)} rows to {out / 'deff_sweep.csv'}")

    _run_guarded(body)


if __name__ == "__main__":
    main()
