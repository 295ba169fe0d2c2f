"""Release gate: the eleven properties the library must exhibit end to end.

Core claims:
     1. enumerated design kernel on the 2/2 complete toy equals closed values
     2. AM-GM bounds dominate both the design kernel and the variance matrix
     3. the realized bound estimator is enumeration-unbiased for the bound
     4. GS on Bernoulli with identity weights reproduces a textbook HC0
     5. E[OC0] = E[GS] = the quadratic form in the mean center matrix
     6. OC1/OC2/GS ignore regressor-span shifts; OC0 and GC0 do not
     7. the bias estimate closes the E[OC1]-E[GS] gap and its raw term dies
     8. tensor spectra sit in [0, 1] and the series limit is certified
     9. GC is exact when every cell is identified, conservative otherwise
    10. the full 7-pair study enumerates in minutes and its metrics cohere
    11. sampled moments match exact enumeration within reported errors
"""

import numpy as np
import pytest

from ocvar.bounding import amgm_bound
from ocvar.conservative import g_bound, g_matrix, gc_estimate, gc_kernel, gc_mean, true_variance
from ocvar.designs import (
    DesignDistribution,
    enumerate_design,
    expand_assignment,
    sample_assignment,
)
from ocvar.estimators import full_contrast, make_estimator
from ocvar.harness import StudyConfig, reduced_synthetic, run_study, synthetic_paluck_green
from ocvar.kernel import compute_d, compute_p
from ocvar.oc import (
    bbar_mean,
    bias_estimate,
    bias_kernels,
    oc0,
    oc1,
    oc2,
    q_from_mean,
    series_closed_form,
    series_partial,
    spectral_split,
)
from ocvar.sandwich import build_gs_kernel, gs_estimate, o0_mean
from ocvar.toys import bernoulli_toy, reduced_pair7_toy, single_assignment_toy, toy_cr4


def _quad(mat: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise quadratic forms y_i' mat y_i."""
    return np.einsum("ij,jk,ik->i", ys, mat, ys)


# -- 1. design-moment oracle -----------------------------------------------------


def test_criterion_01_design_kernel_closed_values(cr4):
    d = cr4.dmat.d
    n = 4
    for a in range(8):
        for b in range(8):
            arm_a, unit_a = divmod(a, n)
            arm_b, unit_b = divmod(b, n)
            if a == b:
                want = 1.0
            elif unit_a == unit_b:
                want = -1.0
            elif arm_a == arm_b:
                want = -1.0 / 3.0
            else:
                want = 1.0 / 3.0
            assert abs(d[a, b] - want) < 1e-12
    assert np.linalg.eigvalsh((d + d.T) / 2.0).min() > -1e-12
    print("criterion 1: PASS - enumerated design kernel matches closed values and is PSD")


# -- 2. bound contract -----------------------------------------------------------


def test_criterion_02_bounds_dominate(cr4, pair2):
    rng = np.random.default_rng(1002)
    for bundle in (cr4, pair2):
        kn = bundle.spec.kn
        ys = rng.normal(size=(1000, kn))
        pairs = [(bundle.dmat.d, bundle.bounded.d_tilde)]
        g = g_matrix(bundle.dist, bundle.spec, bundle.pi, bundle.c)
        pairs.append((g.g, g_bound(g, bundle.joint.p).d_tilde))
        for base, bound in pairs:
            diff = bound - base
            assert np.linalg.eigvalsh((diff + diff.T) / 2.0).min() >= -1e-9
            slack = _quad(bound, ys) - _quad(base, ys)
            assert slack.min() >= -1e-9 * np.abs(_quad(bound, ys)).max()
    print("criterion 2: PASS - AM-GM bounds dominate the design kernel and the variance matrix")


# -- 3. unbiased bound estimation ------------------------------------------------


def test_criterion_03_realized_bound_is_unbiased(cr4, pair2):
    rng = np.random.default_rng(1003)
    for bundle in (cr4, pair2):
        kn = bundle.spec.kn
        zs = rng.normal(size=(100, kn))
        want = _quad(bundle.bounded.d_tilde, zs)
        got = np.zeros(100)
        for a, w in bundle.dist.support:
            rz = zs * expand_assignment(a, 2)
            got += w * _quad(bundle.kernel.weighted, rz)
        rel = np.abs(got - want) / np.maximum(np.abs(want), 1e-12)
        assert rel.max() < 1e-10
    print("criterion 3: PASS - realized bound estimator is enumeration-unbiased for 100 z")


# -- 4. sandwich equals textbook HC0 ---------------------------------------------


def _hc0_oracle(y_obs: np.ndarray, x_obs: np.ndarray, a: np.ndarray) -> float:
    """Independently coded heteroskedasticity-robust variance, variant 0."""
    xtx_inv = np.linalg.inv(x_obs.T @ x_obs)
    resid = y_obs - x_obs @ (xtx_inv @ (x_obs.T @ y_obs))
    meat = x_obs.T @ (x_obs * resid[:, None] ** 2)
    return float(a @ xtx_inv @ meat @ xtx_inv @ a)


def test_criterion_04_gs_matches_hc0_on_bernoulli():
    design = bernoulli_toy(n=8, prob=0.5)
    dist = enumerate_design(design)
    joint = compute_p(dist)
    dmat = compute_d(joint)
    kernel = build_gs_kernel(amgm_bound(dmat.d, joint.p).d_tilde, joint.p, joint.pi)
    spec = make_estimator("wls", 8, 2, pi=joint.pi)
    c = full_contrast(spec, np.array([-1.0, 1.0]))
    rng = np.random.default_rng(1004)
    done, seed = 0, 0
    while done < 100:
        a = sample_assignment(design, 40_000 + seed)
        seed += 1
        if set(a.arm_of) != {1, 2}:
            continue  # regression needs both arms occupied
        r = expand_assignment(a, 2)
        y = rng.normal(size=16)
        got = gs_estimate(spec, joint.pi, kernel, r, y, c).value
        obs = r == 1.0
        want = _hc0_oracle(y[obs], spec.x[obs], np.array([-1.0, 1.0]))
        assert abs(got - want) < 1e-10 * max(abs(want), 1e-12)
        done += 1
    print("criterion 4: PASS - GS equals an independent HC0 oracle on 100 Bernoulli draws")


# -- 5. the fixed-center principle -----------------------------------------------


def test_criterion_05_oc0_and_gs_share_the_mean_form(cr4, pair2):
    rng = np.random.default_rng(1005)
    for bundle in (cr4, pair2):
        mean_o = o0_mean(bundle.spec, bundle.pi, bundle.kernel, bundle.dist, bundle.c)
        q = q_from_mean(mean_o.matrix, bundle.joint.p)
        y = rng.normal(size=bundle.spec.kn)
        want = float(y @ mean_o.matrix @ y)
        e_gs = e_oc0 = 0.0
        for a, w in bundle.dist.support:
            r = expand_assignment(a, 2)
            e_gs += w * gs_estimate(bundle.spec, bundle.pi, bundle.kernel, r, y, bundle.c).value
            e_oc0 += w * oc0(q, r, y)
        tol = 1e-10 * max(abs(want), 1e-12)
        assert abs(e_gs - want) < tol
        assert abs(e_oc0 - want) < tol
    print("criterion 5: PASS - E[OC0] = E[GS] = y'o0y on both toys")


# -- 6. invariance to regressor-span shifts --------------------------------------


def test_criterion_06_shift_invariance_and_witnesses(pair2):
    mean_o = o0_mean(pair2.spec, pair2.pi, pair2.kernel, pair2.dist, pair2.c)
    q = q_from_mean(mean_o.matrix, pair2.joint.p)
    tensor = bbar_mean(pair2.spec, pair2.pi, pair2.joint.p, pair2.dist)
    kernels = bias_kernels(spectral_split(tensor), pair2.joint.p, q)
    g = g_matrix(pair2.dist, pair2.spec, pair2.pi, pair2.c)
    gck = gc_kernel(g, pair2.joint.p)

    rng = np.random.default_rng(1006)
    y = rng.normal(size=14)
    a, _ = pair2.dist.support[0]
    r = expand_assignment(a, 2)
    base_gs = gs_estimate(pair2.spec, pair2.pi, pair2.kernel, r, y, pair2.c).value
    base_oc1 = oc1(pair2.spec, pair2.pi, q, r, y)
    base_oc2 = oc2(pair2.spec, pair2.pi, q, kernels, r, y)
    base_oc0 = oc0(q, r, y)
    base_gc0 = gc_estimate(gck, r, y)

    moved_oc0 = moved_gc0 = 0.0
    for _ in range(20):
        y2 = y + pair2.spec.x @ rng.normal(size=pair2.spec.x.shape[1])
        gs2 = gs_estimate(pair2.spec, pair2.pi, pair2.kernel, r, y2, pair2.c).value
        assert abs(gs2 - base_gs) < 1e-12 * abs(base_gs)
        assert abs(oc1(pair2.spec, pair2.pi, q, r, y2) - base_oc1) < 1e-12 * abs(base_oc1)
        assert abs(oc2(pair2.spec, pair2.pi, q, kernels, r, y2) - base_oc2) < 1e-12 * abs(base_oc2)
        moved_oc0 = max(moved_oc0, abs(oc0(q, r, y2) - base_oc0))
        moved_gc0 = max(moved_gc0, abs(gc_estimate(gck, r, y2) - base_gc0))
    assert moved_oc0 > 1e-8
    assert moved_gc0 > 1e-8
    print("criterion 6: PASS - GS/OC1/OC2 shift-invariant; OC0 and GC0 moved")


# -- 7. the bias estimate closes the expectation gap ------------------------------


def test_criterion_07_bias_estimate_closes_the_gap(pair2):
    mean_o = o0_mean(pair2.spec, pair2.pi, pair2.kernel, pair2.dist, pair2.c)
    q = q_from_mean(mean_o.matrix, pair2.joint.p)
    tensor = bbar_mean(pair2.spec, pair2.pi, pair2.joint.p, pair2.dist)
    kernels = bias_kernels(spectral_split(tensor), pair2.joint.p, q)
    rng = np.random.default_rng(1007)
    y = rng.normal(size=14)
    e_gs = e_oc1 = e_oc2 = e_bias = 0.0
    for a, w in pair2.dist.support:
        r = expand_assignment(a, 2)
        e_gs += w * gs_estimate(pair2.spec, pair2.pi, pair2.kernel, r, y, pair2.c).value
        e_oc1 += w * oc1(pair2.spec, pair2.pi, q, r, y)
        e_oc2 += w * oc2(pair2.spec, pair2.pi, q, kernels, r, y)
        est = bias_estimate(pair2.spec, pair2.pi, kernels, r, y)
        e_bias += w * est.total
        assert abs(est.term_raw) <= 1e-10  # conjectured-zero raw term, every assignment
    scale = max(abs(e_gs), 1e-12)
    assert abs(e_bias - (e_oc1 - e_gs)) < 1e-9 * max(1.0, scale)
    assert abs(e_oc2 - e_gs) < 1e-9 * scale
    print("criterion 7: PASS - E[bias] = E[OC1]-E[GS], raw term <= 1e-10, E[OC2] = E[GS]")


# -- 8. spectral diagnostic and series certificate --------------------------------


def test_criterion_08_spectra_and_series(cr4, pair2):
    cases = [(cr4.spec, cr4.pi, cr4.joint.p, cr4.dist), (pair2.spec, pair2.pi, pair2.joint.p, pair2.dist)]
    for design, kind in ((bernoulli_toy(6, 0.5), "ht"), (single_assignment_toy(), "wls"), (reduced_pair7_toy(), "wls")):
        dist = enumerate_design(design)
        joint = compute_p(dist)
        spec = make_estimator(kind, design.n_units, design.k_arms, pi=joint.pi)
        cases.append((spec, joint.pi, joint.p, dist))
    for spec, pi, p, dist in cases:
        split = spectral_split(bbar_mean(spec, pi, p, dist))
        assert split.in_unit_interval
        assert split.lam.min() >= -1e-8
        assert split.lam.max() <= 1.0 + 1e-8
        closed = series_closed_form(split)
        gap = np.linalg.norm(closed - series_partial(split.b_mid, 6))
        lam = split.lam_mid_max
        if split.mid.any():
            assert gap <= lam**6 / (1.0 - lam) * np.linalg.norm(closed) + 1e-12
        else:
            assert gap <= 1e-12
    print("criterion 8: PASS - spectra in [0, 1+1e-8]; 6-term series within the certified gap")


# -- 9. guaranteed-conservative sharpness ----------------------------------------


def test_criterion_09_gc_exact_when_identified_else_conservative(pair2):
    # fully identified: independent assignment, inverse-probability weights,
    # single-arm mean; unidentified cells then carry zero variance weight
    design = bernoulli_toy(6, 0.5)
    dist = enumerate_design(design)
    joint = compute_p(dist)
    spec = make_estimator("ht", 6, 2, pi=joint.pi)
    with pytest.warns(UserWarning):
        c = full_contrast(spec, np.array([1.0, 0.0]))
    rng = np.random.default_rng(1009)
    obs = rng.normal(size=6)
    y = np.concatenate([obs, obs])  # same outcome in both arms
    g = g_matrix(dist, spec, joint.pi, c)
    assert np.abs(g.g[joint.p == 0]).max() == 0.0
    kernel = gc_kernel(g, joint.p)
    v = true_variance(g, y)
    assert v > 0.0
    ratio = gc_mean(kernel, y) / v
    assert abs(ratio - 1.0) <= 1e-8

    # absorbed cells: paired clusters, arm contrast; the bound must only add
    for bundle_like in (pair2, None):
        if bundle_like is None:
            design = reduced_pair7_toy()
            dist = enumerate_design(design)
            joint = compute_p(dist)
            spec = make_estimator("wls", design.n_units, 2, pi=joint.pi)
            c = full_contrast(spec, np.array([-1.0, 1.0]))
        else:
            dist, joint, spec, c = bundle_like.dist, bundle_like.joint, bundle_like.spec, bundle_like.c
        n = spec.kn // 2
        obs = rng.normal(size=n)
        y = np.concatenate([obs, obs])
        g = g_matrix(dist, spec, joint.pi, c)
        kernel = gc_kernel(g, joint.p)
        assert kernel.bound.moved.any()
        v = true_variance(g, y)
        assert v > 0.0
        assert gc_mean(kernel, y) / v >= 1.0 - 1e-12
    print("criterion 9: PASS - GC ratio 1.000 when identified, >= 1 with absorbed cells")


# -- 10. study harness at published scale -----------------------------------------


def test_criterion_10_full_study_scale_and_coherence():
    ds = synthetic_paluck_green(seed=0)
    res = run_study(ds, StudyConfig(estimators=("cr0", "cr1", "cr2", "gs", "oc0", "oc1", "gc")))
    assert res.n_units == 497
    assert res.n_assignments == 128
    assert res.runtime_s < 300.0
    for row in res.rows:
        assert row.identity_residual() <= 1e-10
    names = {row.name for row in res.rows}
    assert names == {"cr0", "cr1", "cr2", "gs", "oc0", "oc1", "gc"}

    reduced = reduced_synthetic(seed=1)
    res2 = run_study(reduced, StudyConfig(estimators=("gs", "oc1", "oc2")))
    assert res2.kn <= 60  # inside the dense-tensor guard
    assert np.isfinite(res2.row("oc2").e_ratio)
    for row in res2.rows:
        assert row.identity_residual() <= 1e-10
    print("criterion 10: PASS - 497-unit study enumerated; rmse^2 = bias^2 + se^2; OC2 ran reduced")


# -- 11. Monte Carlo agrees with enumeration --------------------------------------


def _check_mc(exact: np.ndarray, sampled: np.ndarray, se: np.ndarray):
    diff = np.abs(exact - sampled)
    fixed = se == 0.0
    assert diff[fixed].max(initial=0.0) <= 1e-12  # no sampling error reported, none allowed
    assert (diff[~fixed] <= 3.0 * se[~fixed]).all()


def test_criterion_11_sampled_moments_within_reported_errors(cr4, pair2):
    draws = 100_000
    for bundle in (cr4, pair2):
        dist_s = DesignDistribution(design=bundle.design, mode="sampled", seed=123, draws=draws)
        o_exact = o0_mean(bundle.spec, bundle.pi, bundle.kernel, bundle.dist, bundle.c)
        o_samp = o0_mean(bundle.spec, bundle.pi, bundle.kernel, dist_s, bundle.c, with_se=True)
        _check_mc(o_exact.matrix, o_samp.matrix, o_samp.se)

        b_exact = bbar_mean(bundle.spec, bundle.pi, bundle.joint.p, bundle.dist)
        b_samp = bbar_mean(bundle.spec, bundle.pi, bundle.joint.p, dist_s, with_se=True)
        _check_mc(b_exact.bmat, b_samp.bmat, b_samp.se)

        g_exact = g_matrix(bundle.dist, bundle.spec, bundle.pi, bundle.c)
        g_samp = g_matrix(dist_s, bundle.spec, bundle.pi, bundle.c, with_se=True)
        _check_mc(g_exact.g, g_samp.g, g_samp.se)
    print("criterion 11: PASS - sampled o0, bbar, g within 3 reported SEs of enumeration")
