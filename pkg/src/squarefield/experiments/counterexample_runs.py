"""Run for the two counterexample families."""

from __future__ import annotations

import logging

import numpy as np

from squarefield.counterexamples import Family, FamilySpec, build_family, ratio_scan
from squarefield.experiments.base import finite_max, relative_gap, stage, verdict
from squarefield.experiments.models import ExperimentContext
from squarefield.report import ExperimentReport
from squarefield.settings import ConfigError
from squarefield.squarefns import S_TILDE, V_TILDE, apply_squarefn

logger = logging.getLogger(__name__)

COLUMNS = [
    "family", "n", "p", "N", "norm_S_tilde_p", "norm_V_tilde_p", "ratio",
    "fitted_slope", "expected_slope",
]


def _exactness(family: Family, N: float, n: int) -> float:
    """lower: max |V~ f_N - chi_B(0,1)|; upper: max |S~ f_N| outside B(0,2)."""
    spec = FamilySpec.create(family, N, n)
    field = build_family(spec)
    radius_sq = (spec.grid.coordinates() ** 2).sum(axis=0)
    if family is Family.LOWER:
        indicator = (radius_sq < 1.0).astype(float)
        return float(np.abs(apply_squarefn(V_TILDE, field).values - indicator).max())
    outside = radius_sq > 4.0
    return float(np.abs(apply_squarefn(S_TILDE, field).values[outside]).max())


def _monotonicity_defect(family: Family, ratios: tuple[float, ...]) -> float:
    """Largest relative step against the expected direction; <= 0 when monotone."""
    steps = [
        (a - b) / a if family is Family.LOWER else (b - a) / a
        for a, b in zip(ratios, ratios[1:])
    ]
    return max(steps, default=0.0)


def run_counterexample(ctx: ExperimentContext) -> ExperimentReport:
    run = ctx.config.run
    n = ctx.config.grid.n or 1
    if run.family is None:
        if run.p_values is not None or run.scales is not None:
            raise ConfigError("--p and --N need --family for the counterexample experiment")
        families = [Family.LOWER, Family.UPPER]
    else:
        families = [Family(run.family)]

    report = ctx.new_report(COLUMNS)
    for family in families:
        defaults = ctx.info.defaults[family.value]
        p_values = run.p_values if run.p_values is not None else [defaults["p"]]
        scales = sorted(run.scales if run.scales is not None else defaults["scales"])
        for p in p_values:
            with stage(report, f"{family.value}[p={p:g}]"):
                record = ratio_scan(family, p, scales, n, ctx.runner)
            for row in record.rows:
                report.add_row(
                    row.family, row.n, row.p, row.N, row.norm_s_tilde, row.norm_v_tilde, row.ratio,
                    record.slope, record.expected_slope,
                )
            tag = f"{family.value},p={p:g}"
            gap = (
                None if record.slope is None else relative_gap(record.slope, record.expected_slope)
            )
            defect = _monotonicity_defect(family, record.ratios)
            report.verdicts += [
                verdict(ctx, f"slope[{tag}]", gap, "slope"),
                verdict(ctx, f"monotone[{tag}]", defect, "monotone"),
            ]
        with stage(report, f"{family.value}[exactness]"):
            defects = ctx.runner.map(lambda N: _exactness(family, N, n), scales)
        name = "indicator_exact" if family is Family.LOWER else "support_outside_2"
        report.verdicts.append(
            verdict(ctx, f"{name}[{family.value}]", finite_max(defects), "exactness")
        )
    return report
