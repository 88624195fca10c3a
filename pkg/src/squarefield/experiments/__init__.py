"""Experiment registry: every numerical experiment with its frozen defaults and tolerances."""

from __future__ import annotations

import logging

from squarefield.experiments.base import resolve_grid
from squarefield.experiments.counterexample_runs import run_counterexample
from squarefield.experiments.models import ExperimentContext, ExperimentInfo
from squarefield.experiments.semigroup_runs import (
    run_caccioppoli,
    run_converse,
    run_offdiag,
    run_semigroup_squarefn,
)
from squarefield.experiments.squarefn_runs import run_compare, run_identity, run_weighted
from squarefield.report import ExperimentReport, VerdictStatus
from squarefield.services.runner import RowRunner
from squarefield.settings import ConfigError, ExperimentConfig

logger = logging.getLogger(__name__)

_STANDARD_GRID = (1, 8.0, 256, 0.01, 8.0, 64)

EXPERIMENTS = [
    ExperimentInfo(
        key="identity",
        label="Averaging identity",
        description=(
            "||S F||_2^2 against |B(0,1)| ||V F||_2^2 on a corpus of smooth fields, "
            "at the default grid and once refined."
        ),
        grid=_STANDARD_GRID,
        defaults={"corpus_size": 50},
        # the residual falls like an order-2.7 scheme: ratio about 0.16 per doubling
        tolerances={"residual": 0.02, "refinement_ratio": 0.25, "refinement_floor": 0.08},
        informational=(),
        execute=run_identity,
    ),
    ExperimentInfo(
        key="compare",
        label="Conical against vertical",
        description=(
            "Ratios ||V F||_p / ||S F||_p for the squared and L1 functionals; the explicit "
            "bound below p = 2, the identity at p = 2, an aperture profile."
        ),
        grid=_STANDARD_GRID,
        defaults={"corpus_size": 100, "p_values": [0.5, 1.0, 1.5, 2.0, 4.0]},
        tolerances={"slack": 0.0, "identity_ratio": 0.02, "ratio_ceiling": 3.0},
        informational=("ratio_ceiling",),
        execute=run_compare,
    ),
    ExperimentInfo(
        key="counterexample",
        label="Counterexample families",
        description=(
            "Norm ratios of the lower and upper families against N with a fitted log-log "
            "slope, monotonicity and the exact closed-form checks."
        ),
        grid=None,
        defaults={
            "lower": {"p": 0.5, "scales": [16, 32, 64, 128, 256]},
            "upper": {"p": 2.0, "scales": [4, 8, 16, 32]},
        },
        tolerances={"slope": 0.1, "monotone": 1e-12, "exactness": 1e-12},
        informational=(),
        execute=run_counterexample,
    ),
    ExperimentInfo(
        key="weighted",
        label="Weighted comparisons",
        description=(
            "Weighted norm ratios against the A_p / reverse Holder characteristics, scale "
            "invariance, the weighted averaging identity and the L2 endpoint bounds."
        ),
        grid=_STANDARD_GRID,
        defaults={"corpus_size": 50, "p_values": [4.0, 1.0], "weights": ["unit", "power(0.5)"]},
        tolerances={
            "ratio_ceiling": 3.0,
            "scale_invariance": 1e-12,
            "weighted_identity": 0.03,
            "l2_bound": 1.1,
        },
        informational=("ratio_ceiling", "l2_bound"),
        execute=run_weighted,
    ),
    ExperimentInfo(
        key="semigroup-squarefn",
        label="Semigroup square functions",
        description=(
            "Heat and Poisson square functions of mean-free functions: the L2 identities for "
            "the Laplacian, the ellipticity sandwich, conical against vertical, an Lp scan."
        ),
        grid=(1, 8.0, 256, 1e-4, 40.0, 160),
        defaults={
            "corpus_size": 10,
            "operators": ["identity", "smooth-scalar", "checkerboard"],
            "p_values": [1.5, 2.0, 3.0, 4.0, 6.0],
        },
        tolerances={
            "gh_identity": 0.01,
            "gp_identity": 0.03,
            "sandwich": 0.02,
            "conical_vertical": 0.03,
            "lp_scan": 10.0,
        },
        informational=("lp_scan",),
        execute=run_semigroup_squarefn,
    ),
    ExperimentInfo(
        key="offdiag",
        label="Off-diagonal decay",
        description=(
            "L2(E) to L2(F) norms of the heat semigroup against d(E,F)^2 / t with a fitted "
            "Gaussian exponent."
        ),
        grid=(1, 16.0, 1024, 0.01, 1.0, 16),
        defaults={
            "operators": ["identity", "smooth-scalar", "checkerboard", "complex-perturbed"],
            "E": (-1.0, 0.0),
            "F": (2.0, 6.0),
        },
        tolerances={"exponent": 0.2, "slope": 0.0, "contraction": 1.0 + 1e-8},
        informational=(),
        execute=run_offdiag,
    ),
    ExperimentInfo(
        key="caccioppoli",
        label="Caccioppoli decomposition",
        description=(
            "Conical Poisson functional bounded by the three heat-side terms at points of the "
            "torus, at the default grid and once refined."
        ),
        grid=(1, 8.0, 128, 0.01, 16.0, 64),
        defaults={
            "corpus_size": 10,
            "operator": "identity",
            "m_values": [0, 1],
            "x_list": [-1.0, -0.5, 0.0, 0.5, 1.0],
        },
        tolerances={"undefined": 0.0, "refinement": 0.3, "ratio_ceiling": 10.0},
        informational=("ratio_ceiling",),
        execute=run_caccioppoli,
    ),
    ExperimentInfo(
        key="converse-lowerbound",
        label="Converse duality pairing",
        description=(
            "|<f, g>| against (Lambda + 1) ||G_L f||_p ||G g||_p' on mean-free pairs, "
            "including the equality pair f = g."
        ),
        grid=(1, 8.0, 128, 1e-4, 40.0, 128),
        defaults={
            "corpus_size": 20,
            "operators": ["identity", "smooth-scalar", "checkerboard", "complex-perturbed"],
            "p_values": [2.0],
        },
        tolerances={"slack": 0.0, "equality_slack": -1e-2},
        informational=(),
        execute=run_converse,
    ),
]

_BY_KEY = {info.key: info for info in EXPERIMENTS}


def get_experiment(key: str) -> ExperimentInfo:
    try:
        return _BY_KEY[key]
    except KeyError:
        raise ConfigError(f"Unknown experiment: {key}") from None


def _tolerances(info: ExperimentInfo, overrides: dict[str, float]) -> dict[str, float]:
    merged = dict(info.tolerances)
    for name, value in overrides.items():
        if name not in merged:
            raise ConfigError(f"{info.key} has no tolerance named {name}")
        merged[name] = float(value)
    return merged


def run(config: ExperimentConfig) -> ExperimentReport:
    """Validate config, run the experiment on a row runner and return its report."""
    config.validate()
    info = get_experiment(config.experiment)
    grid = resolve_grid(info, config.grid)
    tolerances = _tolerances(info, config.run.tolerances)
    logger.info("Running %s with %d worker(s)", info.key, config.run.workers)
    with RowRunner(config.run.workers) as runner:
        ctx = ExperimentContext(info, config, grid, runner, tolerances)
        try:
            report = info.execute(ctx)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"{info.key}: {e}") from e
    failed = [v.name for v in report.verdicts if v.status is VerdictStatus.FAIL]
    if failed:
        logger.warning("%s: %d verdict(s) failed: %s", info.key, len(failed), ", ".join(failed))
    return report


def describe(key: str) -> str:
    info = get_experiment(key)
    lines = [f"{info.key}: {info.label}", "", info.description, ""]
    if info.grid is not None:
        n, ell, nx, t_min, t_max, nt = info.grid
        lines.append(f"grid: n={n} l={ell:g} nx={nx} tmin={t_min:g} tmax={t_max:g} nt={nt}")
    else:
        lines.append("grid: built per scale")
    for name, value in info.defaults.items():
        lines.append(f"{name}: {value}")
    lines.append("tolerances:")
    for name, value in info.tolerances.items():
        suffix = " (informational)" if name in info.informational else ""
        lines.append(f"  {name} = {value:g}{suffix}")
    return "\n".join(lines) + "\n"
