"""Runs built on the elliptic semigroups: square-function identities, off-diagonal decay,
the Caccioppoli decomposition and the converse duality pairing."""

from __future__ import annotations

import logging
import math

import numpy as np

from squarefield.corpus import corpus_function, gaussian_bump
from squarefield.elliptic import (
    EllipticOperator,
    build_field,
    caccioppoli_check,
    offdiag_decay,
    operator_preset,
)
from squarefield.experiments.base import finite_max, finite_min, relative_gap, stage, verdict
from squarefield.experiments.models import ExperimentContext
from squarefield.halfspace import Grid, HalfSpaceField, SpatialFunction
from squarefield.report import ExperimentReport
from squarefield.squarefns import (
    S,
    S_PARABOLIC,
    V,
    V_PARABOLIC,
    SquareFunctionSpec,
    apply_squarefn,
    lp_norm,
)

logger = logging.getLogger(__name__)


def _operator_names(ctx: ExperimentContext) -> list[str]:
    if ctx.config.run.operator:
        return [ctx.config.run.operator]
    return list(ctx.info.defaults["operators"])


def _operators(ctx: ExperimentContext, grid: Grid) -> dict[str, EllipticOperator]:
    return {name: operator_preset(name, grid) for name in _operator_names(ctx)}


def _squared_norm(field: HalfSpaceField, spec: SquareFunctionSpec) -> float:
    return lp_norm(apply_squarefn(spec, field), 2) ** 2


def run_semigroup_squarefn(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    b = grid.unit_ball_volume
    scan_p = [float(p) for p in ctx.param("p_values")]
    report = ctx.new_report(
        [
            "operator", "index", "half_norm_f_sq", "G_h_sq", "G_P_sq", "cone_h_sq", "cone_P_sq",
            "lambda", "Lambda",
        ]
    )
    with stage(report, "assembly"):
        operators = _operators(ctx, grid)

    def row(item: tuple[str, int]) -> tuple:
        name, i = item
        op = operators[name]
        f = corpus_function(grid, seed, i, mean_free=True)
        heat_field = build_field(op, f, "grad_heat", difference="face")
        poisson_field = build_field(op, f, "grad_poisson_full", difference="face")
        g = apply_squarefn(V_PARABOLIC, heat_field)
        scan = [lp_norm(g, p) / lp_norm(f, p) for p in scan_p]
        return (
            name, i, 0.5 * f.l2_norm() ** 2,
            _squared_norm(heat_field, V_PARABOLIC), _squared_norm(poisson_field, V),
            _squared_norm(heat_field, S_PARABOLIC), _squared_norm(poisson_field, S),
            op.lower, op.upper, scan,
        )

    items = [(name, i) for name in operators for i in range(ctx.param("corpus_size"))]
    with stage(report, "fields"):
        rows = ctx.runner.map(row, items)
    for r in rows:
        report.add_row(*r[:-1])

    for name, op in operators.items():
        mine = [r for r in rows if r[0] == name]
        half, gh, gp, cone_h, cone_p = ([r[k] for r in mine] for k in range(2, 7))
        if name == "identity":
            heat_gap = finite_max(relative_gap(g, h) for g, h in zip(gh, half))
            poisson_gap = finite_max(relative_gap(g, h) for g, h in zip(gp, half))
            report.verdicts += [
                verdict(ctx, "G_h_identity", heat_gap, "gh_identity"),
                verdict(ctx, "G_P_identity", poisson_gap, "gp_identity"),
            ]
        if op.is_real and op.is_hermitian:
            # lambda ||G_h f||^2 <= ||f||^2 / 2 <= Lambda ||G_h f||^2
            above = finite_max(op.lower * g / h for g, h in zip(gh, half))
            below = finite_min(op.upper * g / h for g, h in zip(gh, half))
            report.verdicts += [
                verdict(
                    ctx, f"sandwich_lower[{name}]", None if above is None else above - 1, "sandwich"
                ),
                verdict(
                    ctx, f"sandwich_upper[{name}]", None if below is None else 1 - below, "sandwich"
                ),
            ]
        heat_cone = finite_max(relative_gap(c, b * g) for c, g in zip(cone_h, gh))
        poisson_cone = finite_max(relative_gap(c, b * g) for c, g in zip(cone_p, gp))
        report.verdicts += [
            verdict(ctx, f"conical_vertical_heat[{name}]", heat_cone, "conical_vertical"),
            verdict(ctx, f"conical_vertical_poisson[{name}]", poisson_cone, "conical_vertical"),
        ]
        for j, p in enumerate(scan_p):
            value = finite_max(r[-1][j] for r in mine)
            report.scalars[f"max_Lp_ratio[{name},p={p:g}]"] = value
            report.verdicts.append(verdict(ctx, f"Lp_scan[{name},p={p:g}]", value, "lp_scan"))
    return report


def _slab(grid: Grid, low: float, high: float) -> np.ndarray:
    x = grid.coordinates()[0]
    return (x >= low) & (x <= high)


def run_offdiag(ctx: ExperimentContext) -> ExperimentReport:
    grid = ctx.grid
    defaults = ctx.info.defaults
    E = _slab(grid, *defaults["E"])
    F = _slab(grid, *defaults["F"])
    report = ctx.new_report(["operator", "t", "d2_over_t", "amplitude", "fitted_slope"])
    with stage(report, "assembly"):
        operators = _operators(ctx, grid)

    with stage(report, "decay"):
        records = ctx.runner.map(
            lambda name: (name, offdiag_decay(operators[name], E, F)), list(operators)
        )

    for name, record in records:
        d_sq = record.distance**2
        for t, amplitude in zip(record.times, record.amplitudes):
            report.add_row(name, t, d_sq / t, amplitude, record.slope)
        if name == "identity":
            gap = None if record.slope is None else relative_gap(record.slope, -0.25)
            report.verdicts.append(verdict(ctx, "gaussian_exponent[identity]", gap, "exponent"))
        report.verdicts += [
            verdict(ctx, f"negative_slope[{name}]", record.slope, "slope", "<"),
            verdict(ctx, f"contraction[{name}]", max(record.amplitudes), "contraction"),
        ]
        report.scalars[f"distance[{name}]"] = record.distance
    return report


def run_caccioppoli(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    refined = grid.refined()
    name = ctx.config.run.operator or ctx.info.defaults["operator"]
    report = ctx.new_report(
        [
            "m", "index", "x", "lhs", "heat_scalar_term", "heat_full_term", "gap_term", "ratio",
            "ratio_refined",
        ]
    )
    with stage(report, "assembly"):
        op = operator_preset(name, grid)
        op_refined = operator_preset(name, refined)
    points = [(x,) * grid.n if grid.n > 1 else x for x in ctx.info.defaults["x_list"]]

    def row(item: tuple[int, int]) -> list:
        m, i = item
        base = caccioppoli_check(op, corpus_function(grid, seed, i), m, points)
        fine = caccioppoli_check(op_refined, corpus_function(refined, seed, i), m, points)
        return [(m, i, b, r) for b, r in zip(base, fine)]

    corpus_size = ctx.param("corpus_size")
    items = [(m, i) for m in ctx.info.defaults["m_values"] for i in range(corpus_size)]
    with stage(report, "decomposition"):
        results = ctx.runner.map(row, items)

    ratios, drift = [], []
    for chunk in results:
        for m, i, b, r in chunk:
            report.add_row(
                m, i, b.x[0] if grid.n == 1 else str(b.x), b.lhs, b.heat_scalar_term,
                b.heat_full_term, b.gap_term, b.ratio, r.ratio,
            )
            ratios += [b.ratio, r.ratio]
            if b.ratio is not None and r.ratio is not None:
                drift.append(relative_gap(r.ratio, b.ratio))
            elif b.ratio is not None or r.ratio is not None:
                drift.append(None)
    undefined = sum(1 for v in ratios if v is None or not math.isfinite(v))
    report.scalars["undefined_ratios"] = undefined
    report.verdicts += [
        verdict(ctx, "undefined_ratios", undefined, "undefined"),
        verdict(ctx, "refinement_drift", finite_max(drift), "refinement"),
        verdict(ctx, "max_ratio", finite_max(v for v in ratios if v is not None), "ratio_ceiling"),
    ]
    return report


def _vertical_heat(op: EllipticOperator, f: SpatialFunction) -> SpatialFunction:
    return apply_squarefn(V_PARABOLIC, build_field(op, f, "grad_heat", difference="face"))


def run_converse(ctx: ExperimentContext) -> ExperimentReport:
    grid, seed = ctx.grid, ctx.config.run.seed
    p_values = [float(p) for p in ctx.param("p_values")]
    pairs = ctx.param("corpus_size")
    report = ctx.new_report(["operator", "pair", "p", "pairing", "bound", "slack"])
    with stage(report, "assembly"):
        operators = _operators(ctx, grid)
        laplacian = operators.get("identity") or operator_preset("identity", grid)

    bump = gaussian_bump(grid, grid.ell / 16).mean_free()
    functions = [
        (corpus_function(grid, seed, 2 * i, True), corpus_function(grid, seed, 2 * i + 1, True))
        for i in range(pairs)
    ] + [(bump, bump)]
    g_side = ctx.runner.map(lambda pair: _vertical_heat(laplacian, pair[1]), functions)

    def row(item: tuple[str, int]) -> list:
        name, k = item
        op = operators[name]
        f, g = functions[k]
        pairing = abs(np.sum(f.values * np.conj(g.values))) * grid.cell_volume
        gf = _vertical_heat(op, f)
        out = []
        for p in p_values:
            dual = p / (p - 1)
            bound = (op.coefficient_bound + 1) * lp_norm(gf, p) * lp_norm(g_side[k], dual)
            out.append((name, k, p, float(pairing), bound, bound - float(pairing)))
        return out

    items = [(name, k) for name in operators for k in range(len(functions))]
    with stage(report, "pairs"):
        results = ctx.runner.map(row, items)
    equality = len(functions) - 1
    seeded, matched = [], []
    for chunk in results:
        for r in chunk:
            report.add_row(*r)
            # f = g meets the bound with equality up to discretization
            (matched if r[1] == equality else seeded).append(r[5] / r[4] if r[4] > 0 else None)
    report.scalars["equality_pair"] = equality
    report.verdicts += [
        verdict(ctx, "min_relative_slack", finite_min(seeded), "slack", ">="),
        verdict(ctx, "equality_relative_slack", finite_min(matched), "equality_slack", ">="),
    ]
    return report
