"""Experiment configuration: JSON in, validated ExperimentConfig out.

Validation collects every problem it finds and reports them together with
field paths, so a bad config fails with one actionable message.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, OracleInputError
from .instances import INSTANCE_KINDS
from .kernels import KernelSpec, composite_kernel
from .nystrom import BetaSchedule
from .sim import ALGORITHMS, ARRIVALS

_TOP_LEVEL_KEYS = {
    "instance", "kernel", "algorithms", "horizon", "t_q", "arrival", "trace",
    "nystrom", "beta", "noise_sigma", "seeds", "baseline", "out_dir",
    "slack", "curvature", "deff_sweep",
}


@dataclass
class ExperimentConfig:
    instance_kind: str = "bp_desk"
    instance_n: int = 30
    instance_seed: int = 42
    instance_params: dict = field(default_factory=dict)
    ratings_csv: Optional[str] = None
    genres_csv: Optional[str] = None
    kernel: KernelSpec = field(default_factory=composite_kernel)
    algorithms: list[str] = field(default_factory=lambda: ["mnn_ucb"])
    horizon: Optional[int] = None
    t_q: Optional[list[int]] = None
    arrival: str = "round_robin"
    trace: Optional[list[int]] = None
    nystrom: dict = field(default_factory=lambda: {"lam": 1.0, "eta": 0.0, "b": 1.0})
    beta: BetaSchedule = field(default_factory=lambda: BetaSchedule("constant", 1.5))
    noise_sigma: Optional[float] = None
    seeds: list[int] = field(default_factory=lambda: [0])
    baseline: str = "auto"
    out_dir: str = "out"
    slack: dict = field(default_factory=lambda: {
        "instances": 200, "trials": 2, "policy": "worst-feasible", "which": "bp",
        "seed": 0})
    curvature: dict = field(default_factory=dict)
    deff_sweep: dict = field(default_factory=lambda: {
        "bandwidths": [0.1, 1.0, 10.0], "horizons": [50, 100, 200],
        "dim": 3, "lam": 1.0, "seed": 0, "clusters": 10})
    raw: dict = field(default_factory=dict, repr=False)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def parse_config(document) -> ExperimentConfig:
    """Parse and validate a config document (dict, JSON string, or path)."""
    if isinstance(document, (str, Path)):
        p = Path(document)
        if p.exists():
            text = p.read_text()
        else:
            text = str(document)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"document: not valid JSON ({exc})"]) from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ConfigError(["document: top level must be a JSON object"])

    errors: list[str] = []
    for key in doc:
        if key not in _TOP_LEVEL_KEYS:
            errors.append(f"{key}: unknown field")
    cfg = ExperimentConfig(raw=doc)

    inst = doc.get("instance", {})
    if not isinstance(inst, dict):
        errors.append("instance: must be an object")
        inst = {}
    for key in inst:
        if key not in ("kind", "n", "seed", "parameters", "ratings_csv", "genres_csv"):
            errors.append(f"instance.{key}: unknown field")
    cfg.instance_kind = inst.get("kind", cfg.instance_kind)
    if cfg.instance_kind not in INSTANCE_KINDS:
        errors.append(f"instance.kind: unknown kind {cfg.instance_kind!r}")
    cfg.instance_n = _expect_int(inst, "n", cfg.instance_n, errors, "instance.n", low=1)
    cfg.instance_seed = _expect_int(inst, "seed", cfg.instance_seed, errors,
                                    "instance.seed")
    params = inst.get("parameters", {})
    if not isinstance(params, dict):
        errors.append("instance.parameters: must be an object")
    else:
        cfg.instance_params = params
    cfg.ratings_csv = inst.get("ratings_csv")
    cfg.genres_csv = inst.get("genres_csv")

    if "kernel" in doc:
        try:
            cfg.kernel = KernelSpec.from_dict(doc["kernel"])
        except (OracleInputError, TypeError, AttributeError) as exc:
            errors.append(f"kernel: {exc}")

    algos = doc.get("algorithms", cfg.algorithms)
    if not isinstance(algos, list) or not algos:
        errors.append("algorithms: must be a nonempty list")
    else:
        for a in algos:
            if a not in ALGORITHMS:
                errors.append(f"algorithms: unknown algorithm {a!r}")
        cfg.algorithms = list(algos)

    if "horizon" in doc:
        cfg.horizon = _expect_int(doc, "horizon", None, errors, "horizon", low=1)
    if "t_q" in doc:
        tq = doc["t_q"]
        if not isinstance(tq, list) or not all(isinstance(x, int) and x >= 1 for x in tq):
            errors.append("t_q: must be a list of positive integers")
        else:
            cfg.t_q = tq
    cfg.arrival = doc.get("arrival", cfg.arrival)
    if cfg.arrival not in ARRIVALS:
        errors.append(f"arrival: unknown arrival model {cfg.arrival!r}")
    cfg.trace = doc.get("trace", None)

    nys = doc.get("nystrom", {})
    if not isinstance(nys, dict):
        errors.append("nystrom: must be an object")
        nys = {}
    for key in nys:
        if key not in ("lam", "eta", "b"):
            errors.append(f"nystrom.{key}: unknown field")
    merged = dict(cfg.nystrom)
    merged.update({k: nys[k] for k in ("lam", "eta", "b") if k in nys})
    if not merged["lam"] > 0:
        errors.append("nystrom.lam: must be > 0")
    if merged["eta"] < 0:
        errors.append("nystrom.eta: must be >= 0")
    if merged["b"] < 0:
        errors.append("nystrom.b: must be >= 0")
    cfg.nystrom = merged

    betadoc = doc.get("beta", {})
    if betadoc:
        try:
            cfg.beta = BetaSchedule(
                mode=betadoc.get("mode", "constant"),
                value=float(betadoc.get("value", 1.5)),
                B=float(betadoc.get("B", 1.0)),
                lam=float(betadoc.get("lam", cfg.nystrom["lam"])),
                horizon=int(betadoc.get("horizon", cfg.horizon or 1)),
                d_eff=float(betadoc.get("d_eff", 0.0)))
        except (OracleInputError, ValueError, TypeError) as exc:
            errors.append(f"beta: {exc}")

    if "noise_sigma" in doc:
        try:
            cfg.noise_sigma = float(doc["noise_sigma"])
            if cfg.noise_sigma < 0:
                errors.append("noise_sigma: must be >= 0")
        except (TypeError, ValueError):
            errors.append("noise_sigma: must be a number")

    seeds = doc.get("seeds", cfg.seeds)
    if not isinstance(seeds, list) or not seeds or \
            not all(isinstance(s, int) for s in seeds):
        errors.append("seeds: must be a nonempty list of integers")
    else:
        cfg.seeds = seeds

    cfg.baseline = doc.get("baseline", cfg.baseline)
    if cfg.baseline not in ("auto", "exact", "greedy_surrogate"):
        errors.append(f"baseline: unknown mode {cfg.baseline!r}")
    cfg.out_dir = doc.get("out_dir", cfg.out_dir)

    for section in ("slack", "curvature", "deff_sweep"):
        if section in doc:
            if not isinstance(doc[section], dict):
                errors.append(f"{section}: must be an object")
            else:
                merged = dict(getattr(cfg, section))
                merged.update(doc[section])
                setattr(cfg, section, merged)

    # cross-field constraints
    if cfg.t_q is not None and cfg.horizon is not None and \
            cfg.arrival in ("round_robin", "trace") and sum(cfg.t_q) != cfg.horizon:
        errors.append("t_q: sum(t_q) must equal horizon for "
                      "round_robin/trace arrivals")
    if cfg.arrival == "trace" and cfg.trace is None:
        errors.append("trace: required when arrival is 'trace'")

    if errors:
        raise ConfigError(errors)
    return cfg


def _expect_int(doc: dict, key: str, default, errors: list, path: str,
                low: Optional[int] = None):
    if key not in doc:
        return default
    v = doc[key]
    if not isinstance(v, int) or isinstance(v, bool):
        errors.append(f"{path}: must be an integer")
        return default
    if low is not None and v < low:
        errors.append(f"{path}: must be >= {low}")
        return default
    return v


def load_ratings_matrix(ratings_path, genres_path):
    """Group-averaged ratings plus genre memberships from two CSV files.

    ratings: header user_group,movie_id,rating; genres: header
    movie_id,genre_list with genres separated by '|'.  Returns (group ids,
    movie ids, mean-rating matrix m_q(v), membership matrix, genre names).
    """
    ratings_rows = _read_csv(ratings_path, ("user_group", "movie_id", "rating"))
    genre_rows = _read_csv(genres_path, ("movie_id", "genre_list"))

    genres_of: dict[str, list[str]] = {}
    for line_no, row in genre_rows:
        genres_of[row["movie_id"]] = [g for g in row["genre_list"].split("|") if g]

    totals: dict[tuple[str, str], list[float]] = {}
    groups, movies = [], []
    for line_no, row in ratings_rows:
        movie = row["movie_id"]
        if movie not in genres_of:
            raise ConfigError([f"{ratings_path}:{line_no}: movie {movie!r} "
                               f"missing from the genre file"])
        try:
            rating = float(row["rating"])
        except ValueError:
            raise ConfigError([f"{ratings_path}:{line_no}: rating "
                               f"{row['rating']!r} is not a number"]) from None
        if row["user_group"] not in groups:
            groups.append(row["user_group"])
        if movie not in movies:
            movies.append(movie)
        totals.setdefault((row["user_group"], movie), []).append(rating)

    groups = sorted(groups)
    movies = sorted(movies)
    genre_names = sorted({g for gl in genres_of.values() for g in gl})
    m = np.zeros((len(groups), len(movies)))
    for (grp, mov), vals in totals.items():
        m[groups.index(grp), movies.index(mov)] = float(np.mean(vals))
    membership = np.zeros((len(movies), len(genre_names)))
    for j, mov in enumerate(movies):
        for gname in genres_of.get(mov, []):
            membership[j, genre_names.index(gname)] = 1.0
    return groups, movies, m, membership, genre_names


def _read_csv(path, expected_header):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError([f"{path}: empty file"]) from None
        if [h.strip() for h in header] != list(expected_header):
            raise ConfigError([f"{path}: expected header "
                               f"{','.join(expected_header)}"])
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ConfigError([f"{path}:{line_no}: expected "
                                   f"{len(expected_header)} fields, got {len(row)}"])
            rows.append((line_no, dict(zip(expected_header, (c.strip() for c in row)))))
    return rows
