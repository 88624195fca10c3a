"""Runs for the averaging identity, the unweighted comparisons and the weighted comparisons."""

from __future__ import annotations

import logging
import math
from statistics import fmean

from squarefield.corpus import corpus_field
from squarefield.experiments.base import finite_max, finite_min, relative_gap, stage, verdict
from squarefield.experiments.models import ExperimentContext
from squarefield.report import ExperimentReport
from squarefield.squarefns import (
    S,
    V,
    aperture_profile,
    apply_squarefn,
    averaging_identity_residual,
    compare_norms,
    lp_norm,
)
from squarefield.weights import (
    ap_characteristic,
    rh_characteristic,
    weight_preset,
    weighted_averaging_identity,
    weighted_compare,
    weighted_l2_bounds,
)

logger = logging.getLogger(__name__)

APERTURES = (0.5, 1.0, 2.0, 4.0)


def run_identity(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    refined = grid.refined()
    report = ctx.new_report(["index", "residual", "residual_refined", "norm_S_2", "norm_V_2"])

    def row(i: int) -> tuple:
        field = corpus_field(grid, seed, i)
        return (
            i,
            averaging_identity_residual(field),
            averaging_identity_residual(corpus_field(refined, seed, i)),
            lp_norm(apply_squarefn(S, field), 2),
            lp_norm(apply_squarefn(V, field), 2),
        )

    with stage(report, "corpus"):
        rows = ctx.runner.map(row, range(ctx.param("corpus_size")))
    for r in rows:
        report.add_row(*r)

    residuals = [r[1] for r in rows]
    refined_residuals = [r[2] for r in rows]
    mean_base, mean_refined = fmean(residuals), fmean(refined_residuals)
    ratio = mean_refined / mean_base if mean_base > 0 else None
    report.scalars.update(
        {
            "unit_ball_volume": grid.unit_ball_volume,
            "mean_residual": mean_base,
            "mean_residual_refined": mean_refined,
            "refinement_ratio": ratio,
        }
    )
    report.verdicts += [
        verdict(ctx, "max_residual", finite_max(residuals), "residual"),
        verdict(ctx, "max_residual_refined", finite_max(refined_residuals), "residual"),
        verdict(ctx, "refinement_ratio", ratio, "refinement_ratio"),
        verdict(ctx, "refinement_ratio_floor", ratio, "refinement_floor", ">="),
    ]
    return report


def run_compare(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    p_values = [float(p) for p in ctx.param("p_values")]
    report = ctx.new_report(
        ["index", "kind", "p", "norm_S", "norm_V", "ratio", "explicit_bound", "slack"]
    )

    def row(i: int) -> tuple[list, list]:
        field = corpus_field(grid, seed, i)
        records = [compare_norms(field, p, kind) for kind in ("squared", "L1") for p in p_values]
        return records, aperture_profile(field, 2.0, APERTURES)

    with stage(report, "corpus"):
        results = ctx.runner.map(row, range(ctx.param("corpus_size")))

    by_key: dict[tuple[str, float], list] = {}
    for i, (records, _) in enumerate(results):
        for rec in records:
            report.add_row(
                i, rec.kind, rec.p, rec.norm_s, rec.norm_v, rec.ratio, rec.explicit_bound, rec.slack
            )
            by_key.setdefault((rec.kind, rec.p), []).append(rec)

    root_b = math.sqrt(grid.unit_ball_volume)
    for p in p_values:
        squared = by_key[("squared", p)]
        if p < 2:
            slack = finite_min(r.slack for r in squared)
            report.verdicts.append(verdict(ctx, f"min_slack[p={p:g}]", slack, "slack", ">="))
        elif p == 2:
            gaps = [None if r.ratio is None else relative_gap(r.ratio, root_b) for r in squared]
            report.verdicts.append(
                verdict(ctx, "max_identity_gap[p=2]", finite_max(gaps), "identity_ratio")
            )
        else:
            worst = finite_max(r.ratio for r in squared)
            report.verdicts.append(verdict(ctx, f"max_ratio[p={p:g}]", worst, "ratio_ceiling"))
        l1_ratios = [r.ratio for r in by_key[("L1", p)]]
        report.scalars[f"max_L1_ratio[p={p:g}]"] = finite_max(l1_ratios)

    for j, alpha in enumerate(APERTURES):
        values = [profile[j] for _, profile in results if profile[j] is not None]
        report.scalars[f"mean_aperture_ratio[alpha={alpha:g}]"] = fmean(values) if values else None
    return report


def run_weighted(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    p_values = [float(p) for p in ctx.param("p_values")]
    names = [ctx.config.run.weight] if ctx.config.run.weight else list(ctx.info.defaults["weights"])
    weights = [weight_preset(name, grid) for name in names]
    report = ctx.new_report(
        [
            "index", "weight", "p", "norm_S_w", "norm_V_w", "ratio", "bounded_ratio",
            "characteristic", "characteristic_value",
        ]
    )

    with stage(report, "characteristics"):
        invariance = {}
        for w in weights:
            tripled = w.scaled(3.0)
            pairs = [(ap_characteristic, 1.0), (rh_characteristic, math.inf)]
            for p in p_values:
                if p > 2:
                    pairs.append((ap_characteristic, p / 2))
                elif p < 2:
                    pairs.append((rh_characteristic, 2 / (2 - p)))
            gaps = [relative_gap(char(tripled, e), char(w, e)) for char, e in pairs]
            invariance[w.name] = max(gaps)

    def row(i: int) -> list:
        field = corpus_field(grid, seed, i)
        out = []
        for w in weights:
            records = [weighted_compare(field, p, w) for p in p_values]
            lhs, rhs = weighted_averaging_identity(field, w)
            bounds = weighted_l2_bounds(field, w)
            out.append((w.name, records, relative_gap(rhs, lhs), bounds))
        return out

    with stage(report, "corpus"):
        results = ctx.runner.map(row, range(ctx.param("corpus_size")))

    bounded: dict[tuple[str, float], list] = {}
    identity: dict[str, list] = {}
    upper: dict[str, list] = {}
    lower: dict[str, list] = {}
    for i, per_weight in enumerate(results):
        for name, records, gap, bounds in per_weight:
            for rec in records:
                if rec.ratio is None:
                    governed = None
                elif rec.p >= 2:
                    governed = rec.ratio
                else:
                    governed = None if rec.ratio == 0 else 1 / rec.ratio
                report.add_row(
                    i, name, rec.p, rec.norm_s, rec.norm_v, rec.ratio, governed,
                    rec.characteristic, rec.characteristic_value,
                )
                bounded.setdefault((name, rec.p), []).append(governed)
            identity.setdefault(name, []).append(gap)
            upper.setdefault(name, []).append(bounds.upper_ratio)
            lower.setdefault(name, []).append(bounds.lower_ratio)

    for w in weights:
        for p in p_values:
            worst = finite_max(bounded[(w.name, p)])
            report.verdicts.append(
                verdict(ctx, f"max_bounded_ratio[{w.name},p={p:g}]", worst, "ratio_ceiling")
            )
        report.verdicts += [
            verdict(ctx, f"scale_invariance[{w.name}]", invariance[w.name], "scale_invariance"),
            verdict(
                ctx,
                f"weighted_identity[{w.name}]",
                finite_max(identity[w.name]),
                "weighted_identity",
            ),
            verdict(ctx, f"l2_upper[{w.name}]", finite_max(upper[w.name]), "l2_bound"),
            verdict(ctx, f"l2_lower[{w.name}]", finite_max(lower[w.name]), "l2_bound"),
        ]
        report.scalars[f"A_1[{w.name}]"] = ap_characteristic(w, 1)
        report.scalars[f"RH_inf[{w.name}]"] = rh_characteristic(w, math.inf)
    return report
