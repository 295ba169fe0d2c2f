"""Service operations: pure functions from request models to response models.

The HTTP app and the command line both call these, so one code path serves
both transports.
"""

from __future__ import annotations

import numpy as np

from .. import __version__, context
from ..bounding import amgm_bound, verify_bound
from ..conservative import g_matrix, gc_estimate, gc_kernel
from ..designs import (
    Design,
    DesignDistribution,
    draw_assignments,
    enumerate_design,
    expand_assignment,
)
from ..errors import SchemaError
from ..estimators import full_contrast, make_estimator, point_estimate
from ..harness import (
    StudyConfig,
    ingest_csv,
    reduced_synthetic,
    run_study,
    synthetic_paluck_green,
)
from ..kernel import compute_d, compute_p
from ..oc import (
    bbar_mean,
    bias_estimate,
    bias_kernels,
    oc0,
    oc1,
    oc2,
    q_from_mean,
    spectral_split,
)
from ..sandwich import build_gs_kernel, gs_estimate, hc_refinement, o0_mean
from . import schemas as sm

ALL_VAREST_NAMES = ("gs", "oc0", "oc1", "oc2", "gc", "hc0", "hc1", "hc2", "cr0", "cr1", "cr2")


def health() -> sm.HealthResponse:
    return sm.HealthResponse(status="ok", version=__version__)


def _distribution(design: Design, opts: sm.MomentsOptions) -> DesignDistribution:
    if opts.mode == "exact":
        return enumerate_design(design, opts.max_support)
    return DesignDistribution(design=design, mode="sampled", seed=opts.seed, draws=opts.draws)


def _estimator_spec(design: Design, model: sm.EstimatorModel, pi: np.ndarray):
    covariates = None
    expansion = "none"
    if model.covariates is not None:
        covariates = np.asarray(model.covariates.columns, dtype=float)
        expansion = model.covariates.layout
    m = model.m if isinstance(model.m, str) else np.asarray(model.m, dtype=float)
    return make_estimator(
        model.kind,
        design.n_units,
        design.k_arms,
        pi=pi,
        covariates=covariates,
        expansion=expansion,
        m=m,
    )


def design_enumerate(req: sm.DesignEnumerateRequest) -> sm.DesignEnumerateResponse:
    dist = enumerate_design(req.design.to_core(), req.max_support)
    return sm.DesignEnumerateResponse(
        size=len(dist.support),
        assignments=[list(a.arm_of) for a, _ in dist.support],
        probabilities=[w for _, w in dist.support],
    )


def design_sample(req: sm.DesignSampleRequest) -> sm.DesignSampleResponse:
    draws = draw_assignments(req.design.to_core(), req.seed, req.draws)
    return sm.DesignSampleResponse(assignments=[list(a.arm_of) for a in draws])


def probs(req: sm.ProbsRequest) -> sm.ProbsResponse:
    design = req.design.to_core()
    dist = _distribution(design, req.options)
    joint = compute_p(dist)
    dmat = compute_d(joint)
    return sm.ProbsResponse(
        kn=joint.kn,
        pi=joint.pi.tolist(),
        p=joint.p.tolist(),
        d=dmat.d.tolist(),
        pi_se=None if joint.se is None else np.sqrt(np.diag(joint.se**2)).tolist(),
        p_se=None if joint.se is None else joint.se.tolist(),
        d_null_residual=dmat.null_residual(),
        d_min_eigenvalue=dmat.min_eigenvalue(),
    )


def bound(req: sm.BoundRequest) -> sm.BoundResponse:
    design = req.design.to_core()
    dist = _distribution(design, req.options)
    joint = compute_p(dist)
    dmat = compute_d(joint)
    bounded = amgm_bound(dmat.d, joint.p)
    report = verify_bound(bounded)
    return sm.BoundResponse(
        kn=joint.kn,
        d_tilde=bounded.d_tilde.tolist(),
        absorbed_cells=int(bounded.moved.sum()),
        report=sm.BoundReportModel(
            min_eig_diff=report.min_eig_diff,
            dominates=report.dominates,
            max_abs_on_zero_cells=report.max_abs_on_zero_cells,
            estimable=report.estimable,
        ),
    )


def estimate(req: sm.EstimateRequest) -> sm.EstimateResponse:
    design = req.design.to_core()
    dist = _distribution(design, req.options)
    joint = compute_p(dist)
    spec = _estimator_spec(design, req.estimator, joint.pi)
    c = full_contrast(spec, np.asarray(req.contrast, dtype=float))
    r = expand_assignment(np.asarray(req.data.assignment), design.k_arms)
    y = req.data.full_y(design.n_units, design.k_arms)
    return sm.EstimateResponse(estimate=point_estimate(spec, joint.pi, r, y, c))


def varest(req: sm.VarestRequest) -> sm.VarestResponse:
    design = req.design.to_core()
    unknown = [e for e in req.estimators if e not in ALL_VAREST_NAMES]
    if unknown:
        raise SchemaError(f"unknown estimators: {unknown}")
    dist = _distribution(design, req.options)
    joint = compute_p(dist)
    pi = joint.pi
    dmat = compute_d(joint)
    bounded = amgm_bound(dmat.d, joint.p)
    kernel = build_gs_kernel(bounded.d_tilde, joint.p, pi)
    spec = _estimator_spec(design, req.estimator, pi)
    c = full_contrast(spec, np.asarray(req.contrast, dtype=float))
    r = expand_assignment(np.asarray(req.data.assignment), design.k_arms)
    y = req.data.full_y(design.n_units, design.k_arms)

    wanted = set(req.estimators)
    q = None
    if wanted & {"oc0", "oc1", "oc2"}:
        key = context.combined_key("o0", dist, spec, c, bounded.d_tilde)
        mean_o = context.memo(key, lambda: o0_mean(spec, pi, kernel, dist, c).matrix)
        q = q_from_mean(mean_o, joint.p)
    kernels = None
    if "oc2" in wanted:
        tensor_key = context.combined_key("bbar", dist, spec, joint.p)
        tensor = context.load_or_build_tensor(
            req.tensor_cache, tensor_key, lambda: bbar_mean(spec, pi, joint.p, dist)
        )
        kernels = bias_kernels(spectral_split(tensor), joint.p, q)
    gck = None
    if "gc" in wanted:
        gck = gc_kernel(g_matrix(dist, spec, pi, c), joint.p)

    values: dict[str, float] = {}
    for name in req.estimators:
        if name == "gs":
            values[name] = gs_estimate(spec, pi, kernel, r, y, c).value
        elif name == "oc0":
            values[name] = oc0(q, r, y)
        elif name == "oc1":
            values[name] = oc1(spec, pi, q, r, y)
        elif name == "oc2":
            values[name] = oc2(spec, pi, q, kernels, r, y)
        elif name == "gc":
            values[name] = gc_estimate(gck, r, y)
        elif name.startswith("hc"):
            values[name] = hc_refinement(spec, pi, r, y, c, variant=int(name[2])).value
        else:
            values[name] = hc_refinement(
                spec, pi, r, y, c, variant=int(name[2]), cluster_of=design.cluster_of
            ).value
    return sm.VarestResponse(values=values, kn=joint.kn, mode=dist.mode)


def simulate(req: sm.SimulateRequest) -> sm.SimulateResponse:
    if req.data_csv is not None:
        ds = ingest_csv(req.data_csv)
    elif req.synthetic.kind == "paluck_green":
        ds = synthetic_paluck_green(req.synthetic.seed)
    else:
        ds = reduced_synthetic(req.synthetic.seed)
    config = StudyConfig(
        estimators=tuple(req.estimators),
        contrast=tuple(req.contrast),
        covariates=None if req.covariates is None else tuple(req.covariates),
        scale=None if req.scale is None else (req.scale[0], req.scale[1]),
        effect=req.effect,
        seed=req.seed,
        mc_draws=req.mc_draws,
        max_support=req.max_support,
        tensor_cache=req.tensor_cache,
    )
    result = run_study(ds, config)
    return sm.SimulateResponse(
        rows=[
            sm.MetricRowModel(
                name=row.name,
                e_ratio=row.e_ratio,
                se_ratio=row.se_ratio,
                bias_ratio=row.bias_ratio,
                rmse_ratio=row.rmse_ratio,
                cv=row.cv,
            )
            for row in result.rows
        ],
        ratios=result.ratios,
        true_var=result.true_var,
        estimand_mean=result.estimand_mean,
        n_assignments=result.n_assignments,
        n_units=result.n_units,
        kn=result.kn,
        runtime_s=result.runtime_s,
    )


def check(req: sm.CheckRequest) -> sm.CheckResponse:
    """Conjecture and bound diagnostics for one design and estimator."""
    design = req.design.to_core()
    dist = _distribution(design, req.options)
    joint = compute_p(dist)
    pi = joint.pi
    dmat = compute_d(joint)
    bounded = amgm_bound(dmat.d, joint.p)
    report = verify_bound(bounded)
    kernel = build_gs_kernel(bounded.d_tilde, joint.p, pi)
    spec = _estimator_spec(design, req.estimator, pi)
    c = full_contrast(spec, np.asarray(req.contrast, dtype=float))

    key = context.combined_key("o0", dist, spec, c, bounded.d_tilde)
    mean_o = context.memo(key, lambda: o0_mean(spec, pi, kernel, dist, c).matrix)
    q = q_from_mean(mean_o, joint.p)
    tensor_key = context.combined_key("bbar", dist, spec, joint.p)
    tensor = context.load_or_build_tensor(
        req.tensor_cache, tensor_key, lambda: bbar_mean(spec, pi, joint.p, dist)
    )
    split = spectral_split(tensor)
    kernels = bias_kernels(split, joint.p, q)

    if req.y is not None:
        y = np.asarray(req.y, dtype=float)
        if y.size != joint.kn:
            raise SchemaError(f"y has length {y.size}, expected kn={joint.kn}")
    else:
        y = np.random.default_rng(np.random.SeedSequence(req.options.seed)).normal(
            size=joint.kn
        )
    raw_max = 0.0
    for a, _ in dist.weighted_support():
        r = expand_assignment(a, design.k_arms)
        raw_max = max(raw_max, abs(bias_estimate(spec, pi, kernels, r, y).term_raw))

    return sm.CheckResponse(
        kn=joint.kn,
        lambda_max=float(split.lam.max()),
        lambda_min=float(split.lam.min()),
        in_unit_interval=split.in_unit_interval,
        tensor_asymmetry=split.asymmetry,
        raw_term_max=raw_max,
        bound_min_eig_diff=report.min_eig_diff,
        bound_dominates=report.dominates,
        d_null_residual=dmat.null_residual(),
        d_min_eigenvalue=dmat.min_eigenvalue(),
    )
