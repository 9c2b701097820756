"""Design-space generators and JSON configuration parsing.

Two generators cover the supported study types:

* ``cluster_trial``: K clusters observed over T periods with a fixed
  number of individuals per cluster-period cell and a binary K x T
  treatment pattern (an explicit matrix or the ``stepped_wedge``
  shorthand). Units can be single observations, whole cells, or whole
  cluster sequences. Cohort sampling keeps the same individuals across
  periods.
* ``spatial_lattice``: a regular grid of sampling locations on the unit
  square observed once each, paired with a point-source mean model.

``parse_config`` validates a configuration dictionary, fills defaults and
returns a :class:`ResolvedConfig` that can build the design problem. Error
messages carry the JSON path of the offending field.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceSpec, ObservationMeta
from .design import DesignProblem, DesignSpace, ExperimentalUnit
from .errors import ConfigError
from .families import FamilyLink, LinearIndicatorMean, PointSourceMean
from .model import ModelSpec
from .search import ALGORITHMS, SearchConfig

UNIT_GRANULARITIES = ("observation", "cell", "cluster_sequence")


def stepped_wedge_pattern(n_clusters: int, n_periods: int) -> np.ndarray:
    """Staggered crossover pattern: every cluster starts in control and
    crosses to intervention at an evenly spaced period >= 2."""
    if n_clusters < 1 or n_periods < 2:
        raise ConfigError("stepped wedge needs at least one cluster and two periods")
    pattern = np.zeros((n_clusters, n_periods), dtype=np.int64)
    for k in range(n_clusters):
        crossover = 2 + (k * (n_periods - 1)) // n_clusters
        pattern[k, crossover - 1 :] = 1
    return pattern


def cluster_trial_space(
    n_clusters: int,
    n_periods: int,
    per_cell: int,
    pattern,
    cohort: bool = False,
    unit: str = "observation",
) -> DesignSpace:
    pattern = np.asarray(pattern)
    if pattern.shape != (n_clusters, n_periods) or not np.isin(pattern, (0, 1)).all():
        raise ConfigError("treatment_pattern must be a binary clusters x periods matrix")
    if unit not in UNIT_GRANULARITIES:
        raise ConfigError(f"unknown unit granularity {unit!r}")
    metas = []
    for k in range(n_clusters):
        for t in range(1, n_periods + 1):
            for i in range(per_cell):
                metas.append(
                    ObservationMeta(
                        cluster=k,
                        period=t,
                        individual=k * per_cell + i if cohort else None,
                        treated=bool(pattern[k, t - 1]),
                    )
                )
    units = []
    if unit == "observation":
        units = [ExperimentalUnit(i, (i,)) for i in range(len(metas))]
    elif unit == "cell":
        for k in range(n_clusters):
            for t in range(n_periods):
                start = (k * n_periods + t) * per_cell
                units.append(
                    ExperimentalUnit(k * n_periods + t, tuple(range(start, start + per_cell)))
                )
    else:
        obs_per_cluster = n_periods * per_cell
        for k in range(n_clusters):
            start = k * obs_per_cluster
            units.append(ExperimentalUnit(k, tuple(range(start, start + obs_per_cluster))))
    return DesignSpace(units, metas)


def spatial_lattice_space(grid) -> DesignSpace:
    gx, gy = int(grid[0]), int(grid[1])
    if gx < 1 or gy < 1:
        raise ConfigError("grid dimensions must be positive")
    metas = []
    for i in range(gx):
        for j in range(gy):
            metas.append(ObservationMeta(coord=((i + 0.5) / gx, (j + 0.5) / gy)))
    units = [ExperimentalUnit(i, (i,)) for i in range(len(metas))]
    return DesignSpace(units, metas)


# --------------------------------------------------------------------------
# configuration parsing
# --------------------------------------------------------------------------


def _get(d, key, path, required=False, default=None):
    if key in d:
        return d[key]
    if required:
        raise ConfigError(f"missing required field {path}.{key}")
    return default


def _expect(cond, message):
    if not cond:
        raise ConfigError(message)


def _as_sd(value, param_scale):
    if value is None:
        return None
    _expect(value >= 0, "scale parameters must be non-negative")
    return math.sqrt(value) if param_scale == "var" else float(value)


def _parse_covariance(d, path, param_scale):
    kind = _get(d, "kind", path, required=True)
    sigma1 = _as_sd(_get(d, "sigma1", path, required=True), param_scale)
    resid_sd = _as_sd(_get(d, "resid_sd", path), param_scale)
    cohort_sd = _as_sd(_get(d, "cohort_sd", path, default=0.0), param_scale)
    if kind == "exchangeable":
        sigma2 = _as_sd(_get(d, "sigma2", path, required=True), param_scale)
        return CovarianceSpec.exchangeable(sigma1, sigma2, cohort_sd=cohort_sd, resid_sd=resid_sd)
    if kind == "ar1":
        decay = float(_get(d, "decay", path, required=True))
        return CovarianceSpec.ar1(sigma1, decay, cohort_sd=cohort_sd, resid_sd=resid_sd)
    if kind == "exponential_spatial":
        decay = float(_get(d, "decay", path, required=True))
        return CovarianceSpec.exponential_spatial(sigma1, decay, resid_sd=resid_sd)
    raise ConfigError(f"{path}.kind: unknown covariance kind {kind!r}")


def _parse_mean(d, path, n_periods):
    kind = _get(d, "kind", path, required=True)
    if kind == "linear_indicators":
        _expect(n_periods is not None, f"{path}: linear_indicators requires a cluster_trial space")
        effects = _get(d, "period_effects", path)
        return LinearIndicatorMean(
            n_periods=n_periods,
            treatment_effect=_get(d, "treatment_effect", path),
            period_effects=None if effects is None else tuple(float(x) for x in effects),
        )
    if kind == "point_source":
        beta = _get(d, "beta", path, required=True)
        _expect(len(beta) == 3, f"{path}.beta must have three entries")
        source = _get(d, "source", path, required=True)
        _expect(len(source) == 2, f"{path}.source must be a coordinate pair")
        return PointSourceMean(
            beta0=float(beta[0]),
            beta1=float(beta[1]),
            beta2=float(beta[2]),
            source=(float(source[0]), float(source[1])),
        )
    raise ConfigError(f"{path}.kind: unknown mean model {kind!r}")


def _parse_model(d, path, param_scale, n_periods, default_attenuate):
    family = _get(d, "family", path, required=True)
    link = _get(d, "link", path, required=True)
    fl = FamilyLink(family, link)
    mean = _parse_mean(_get(d, "mean", path, required=True), path + ".mean", n_periods)
    cov = _parse_covariance(
        _get(d, "covariance", path, required=True), path + ".covariance", param_scale
    )
    attenuate = bool(_get(d, "attenuate", path, default=default_attenuate))
    return ModelSpec(family_link=fl, mean=mean, covariance=cov, attenuate=attenuate)


@dataclass
class ResolvedConfig:
    m: int
    c: np.ndarray
    algorithm: str
    starts: int
    seed: int
    threads: int
    greedy_start_size: int | None
    param_scale: str
    models: list
    model_weights: list
    space: DesignSpace
    echo: dict

    def build_problem(self) -> DesignProblem:
        return DesignProblem(self.space, self.models, self.c, weights=self.model_weights)

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            m=self.m,
            starts=self.starts,
            seed=self.seed,
            algorithm=self.algorithm,
            greedy_start_size=self.greedy_start_size,
            threads=self.threads,
        )


def resolve_threads(config_threads, cli_threads=None):
    """COPT_THREADS beats the CLI flag, which beats the config; 0 = all cores."""
    env = os.environ.get("COPT_THREADS")
    if env is not None:
        try:
            threads = int(env)
        except ValueError as exc:
            raise ConfigError(f"COPT_THREADS must be an integer, got {env!r}") from exc
    elif cli_threads is not None:
        threads = cli_threads
    else:
        threads = config_threads
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError("threads must be >= 1 (or 0 for all cores)")
    return threads


def parse_config(cfg: dict) -> ResolvedConfig:
    """Validate a configuration dictionary and fill defaults."""
    _expect(isinstance(cfg, dict), "configuration must be a JSON object")
    param_scale = _get(cfg, "param_scale", "$", default="sd")
    _expect(param_scale in ("sd", "var"), "$.param_scale must be 'sd' or 'var'")

    space_cfg = _get(cfg, "design_space", "$", required=True)
    kind = _get(space_cfg, "kind", "$.design_space", required=True)
    n_periods = None
    if kind == "cluster_trial":
        n_clusters = int(_get(space_cfg, "clusters", "$.design_space", required=True))
        n_periods = int(_get(space_cfg, "periods", "$.design_space", required=True))
        per_cell = int(_get(space_cfg, "per_cell", "$.design_space", required=True))
        _expect(n_clusters >= 1 and n_periods >= 1 and per_cell >= 1,
                "$.design_space: clusters, periods and per_cell must be >= 1")
        pattern = _get(space_cfg, "treatment_pattern", "$.design_space", required=True)
        if isinstance(pattern, str):
            _expect(pattern == "stepped_wedge",
                    "$.design_space.treatment_pattern must be a matrix or 'stepped_wedge'")
            pattern = stepped_wedge_pattern(n_clusters, n_periods)
        unit = _get(space_cfg, "unit", "$.design_space", default="observation")
        cohort = bool(_get(space_cfg, "cohort", "$.design_space", default=False))
        space = cluster_trial_space(
            n_clusters, n_periods, per_cell, pattern, cohort=cohort, unit=unit
        )
        space_echo = {
            "kind": kind,
            "clusters": n_clusters,
            "periods": n_periods,
            "per_cell": per_cell,
            "treatment_pattern": np.asarray(pattern).astype(int).tolist(),
            "cohort": cohort,
            "unit": unit,
        }
    elif kind == "spatial_lattice":
        grid = _get(space_cfg, "grid", "$.design_space", required=True)
        _expect(len(grid) == 2, "$.design_space.grid must be [nx, ny]")
        space = spatial_lattice_space(grid)
        space_echo = {"kind": kind, "grid": [int(grid[0]), int(grid[1])]}
    else:
        raise ConfigError(f"$.design_space.kind: unknown design space {kind!r}")

    default_attenuate = bool(_get(cfg, "attenuate", "$", default=False))
    if "models" in cfg:
        entries = cfg["models"]
        _expect(isinstance(entries, list) and entries, "$.models must be a non-empty list")
        models, weights = [], []
        for i, entry in enumerate(entries):
            models.append(
                _parse_model(entry, f"$.models[{i}]", param_scale, n_periods, default_attenuate)
            )
            weights.append(float(_get(entry, "weight", f"$.models[{i}]", default=1.0)))
            _expect(weights[-1] > 0, f"$.models[{i}].weight must be positive")
    elif "model" in cfg:
        models = [_parse_model(cfg["model"], "$.model", param_scale, n_periods, default_attenuate)]
        weights = [1.0]
    else:
        raise ConfigError("configuration needs either $.model or $.models")

    m = int(_get(cfg, "m", "$", required=True))
    _expect(m >= 1, "$.m must be >= 1")
    c = np.asarray(_get(cfg, "c", "$", required=True), dtype=np.float64)
    algorithm = _get(cfg, "algorithm", "$", default="local")
    _expect(algorithm in ALGORITHMS, f"$.algorithm must be one of {ALGORITHMS}")
    starts = int(_get(cfg, "starts", "$", default=1))
    _expect(starts >= 1, "$.starts must be >= 1")
    seed = int(_get(cfg, "seed", "$", default=0))
    threads = int(_get(cfg, "threads", "$", default=1))
    gss = _get(cfg, "greedy_start_size", "$")
    gss = None if gss is None else int(gss)

    echo = {
        "m": m,
        "c": c.tolist(),
        "algorithm": algorithm,
        "starts": starts,
        "seed": seed,
        "threads": threads,
        "greedy_start_size": gss,
        "param_scale": param_scale,
        "attenuate": default_attenuate,
        "design_space": space_echo,
        "models": [
            {
                "family": spec.family_link.family,
                "link": spec.family_link.link,
                "attenuate": spec.attenuate,
                "weight": float(w),
                "mean": _mean_echo(spec.mean),
                "covariance": _covariance_echo(spec.covariance),
            }
            for spec, w in zip(models, np.asarray(weights) / np.sum(weights))
        ],
    }
    return ResolvedConfig(
        m=m,
        c=c,
        algorithm=algorithm,
        starts=starts,
        seed=seed,
        threads=threads,
        greedy_start_size=gss,
        param_scale=param_scale,
        models=models,
        model_weights=weights,
        space=space,
        echo=echo,
    )


def _mean_echo(mean):
    if isinstance(mean, LinearIndicatorMean):
        return {
            "kind": "linear_indicators",
            "treatment_effect": mean.treatment_effect,
            "period_effects": None if mean.period_effects is None else list(mean.period_effects),
        }
    return {
        "kind": "point_source",
        "beta": [mean.beta0, mean.beta1, mean.beta2],
        "source": list(mean.source),
    }


def _covariance_echo(cov):
    # Echoed in SD scale regardless of the input param_scale.
    out = {"kind": cov.kind, "sigma1_sd": cov.sigma1}
    if cov.kind == "exchangeable":
        out["sigma2_sd"] = cov.sigma2
    else:
        out["decay"] = cov.decay
    out["cohort_sd"] = cov.cohort_sd
    out["resid_sd"] = cov.resid_sd
    return out


def load_config(path) -> ResolvedConfig:
    """Read and validate a JSON configuration file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path}: {exc}") from exc
    try:
        return parse_config(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
