"""Rerandomization study harness: ingest, preprocess, enumerate, score.

The protocol: fix a dataset from a paired-cluster experiment, impute the
missing potential outcomes under the sharp null (optionally with a constant
added effect), score every variance estimator on every assignment the
design could have produced, and compare each estimator's distribution to
the exact design variance of the point estimator computed from the same
enumeration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import context
from .bounding import amgm_bound
from .conservative import g_matrix, gc_estimate, gc_kernel
from .designs import DEFAULT_MAX_SUPPORT, Design, DesignDistribution, enumerate_design, expand_assignment
from .errors import (
    AllMissing,
    ConsistencyError,
    OutOfScale,
    SchemaError,
    StructureError,
)
from .estimators import full_contrast, make_estimator, point_estimate
from .kernel import compute_d, compute_p
from .oc import bbar_mean, bias_kernels, oc0, oc1, oc2, q_from_mean, spectral_split
from .sandwich import build_gs_kernel, gs_estimate, hc_refinement, o0_mean, robust_variance

REQUIRED_COLUMNS = ("unit_id", "cluster_id", "pair_id", "arm", "outcome")
COVARIATE_PREFIX = "cov_"


@dataclass(frozen=True)
class Dataset:
    """One experiment's observed table, arm labels 1-based."""

    unit_id: np.ndarray
    cluster_id: np.ndarray
    pair_id: np.ndarray
    arm: np.ndarray
    outcome: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.unit_id.size
        if n == 0:
            raise SchemaError("dataset has no rows")
        for name in ("cluster_id", "pair_id", "arm", "outcome"):
            if getattr(self, name).size != n:
                raise StructureError(f"column {name} has wrong length")
        if np.any(self.arm < 1):
            raise StructureError("arm labels must be 1-based positive integers")
        pair_of: dict = {}
        arm_of: dict = {}
        for c, p, a in zip(self.cluster_id, self.pair_id, self.arm):
            if pair_of.setdefault(c, p) != p:
                raise StructureError(f"cluster {c} appears in multiple pairs")
            if arm_of.setdefault(c, a) != a:
                raise StructureError(f"cluster {c} has mixed observed arms")
        members: dict = {}
        for c, p in pair_of.items():
            members.setdefault(p, set()).add(c)
        bad = {p: sorted(cs) for p, cs in members.items() if len(cs) != 2}
        if bad:
            raise StructureError(f"pairs without exactly 2 clusters: {bad}")

    @property
    def n(self) -> int:
        return self.unit_id.size

    def report(self) -> pd.DataFrame:
        """Unit counts by pair and observed arm."""
        frame = pd.DataFrame({"pair": self.pair_id, "arm": self.arm})
        return frame.value_counts(["pair", "arm"]).unstack(fill_value=0).sort_index()


def ingest_csv(path) -> Dataset:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as err:
        raise SchemaError(f"cannot parse {path}: {err}") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")
    if frame.empty:
        raise SchemaError("dataset has no rows")
    covs = {
        c: frame[c].to_numpy(dtype=float)
        for c in frame.columns
        if c.startswith(COVARIATE_PREFIX)
    }
    return Dataset(
        unit_id=frame["unit_id"].to_numpy(dtype=str),
        cluster_id=frame["cluster_id"].to_numpy(dtype=str),
        pair_id=frame["pair_id"].to_numpy(dtype=str),
        arm=frame["arm"].to_numpy(dtype=np.int64),
        outcome=frame["outcome"].to_numpy(dtype=float),
        covariates=covs,
    )


def write_csv(ds: Dataset, path) -> None:
    frame = pd.DataFrame(
        {
            "unit_id": ds.unit_id,
            "cluster_id": ds.cluster_id,
            "pair_id": ds.pair_id,
            "arm": ds.arm,
            "outcome": ds.outcome,
        }
    )
    for name, col in ds.covariates.items():
        frame[name] = col
    frame.to_csv(path, index=False)


def mean_impute(ds: Dataset, column: str) -> tuple[Dataset, int]:
    """Fill a covariate's missing entries with its observed mean."""
    if column not in ds.covariates:
        raise SchemaError(f"no covariate named {column}")
    values = ds.covariates[column]
    mask = np.isnan(values)
    if mask.all():
        raise AllMissing(f"covariate {column} has no observed values")
    if not mask.any():
        return ds, 0
    filled = values.copy()
    filled[mask] = values[~mask].mean()
    covs = dict(ds.covariates)
    covs[column] = filled
    return replace(ds, covariates=covs), int(mask.sum())


def center_midpoint(ds: Dataset, scale_min: float, scale_max: float) -> Dataset:
    """Shift outcomes by the scale midpoint (min + max) / 2.

    Makes recorded values identical across location-shifted integer scales
    and keeps non-invariant estimators away from large-mean instability.
    """
    y = ds.outcome
    if np.nanmin(y) < scale_min or np.nanmax(y) > scale_max:
        raise OutOfScale(
            f"outcomes in [{np.nanmin(y)}, {np.nanmax(y)}] exceed scale "
            f"[{scale_min}, {scale_max}]"
        )
    return replace(ds, outcome=y - (scale_min + scale_max) / 2.0)


def impute_sharp_null(ds: Dataset, k: int = 2, effect: float = 0.0) -> np.ndarray:
    """Full kn potential-outcome vector with every arm equal to the observed
    outcomes; a constant effect is added to each non-first arm block."""
    if np.isnan(ds.outcome).any():
        raise StructureError("outcomes contain missing values; resolve before imputing")
    y = np.tile(ds.outcome, k)
    if effect != 0.0:
        y[ds.n :] += effect
    return y


def design_from_dataset(ds: Dataset) -> Design:
    pair_of = {}
    for c, p in zip(ds.cluster_id, ds.pair_id):
        pair_of[str(c)] = str(p)
    return Design(
        kind="paired_cluster",
        n_units=ds.n,
        k_arms=2,
        cluster_of=tuple(str(c) for c in ds.cluster_id),
        pair_of=pair_of,
    )


def observed_outcomes(y: np.ndarray, r: np.ndarray, k: int) -> np.ndarray:
    """Per-unit observed outcome under one assignment."""
    n = y.size // k
    return (r * y).reshape(k, n).sum(axis=0)


# ---------------------------------------------------------------------------
# study configuration and metrics

KNOWN_ESTIMATORS = ("cr0", "cr1", "cr2", "hc0", "hc1", "hc2", "gs", "oc0", "oc1", "oc2", "gc")


@dataclass(frozen=True)
class StudyConfig:
    estimators: tuple[str, ...] = ("cr0", "cr1", "cr2", "gs", "oc0", "oc1", "gc")
    contrast: tuple[float, ...] = (-1.0, 1.0)
    covariates: Optional[tuple[str, ...]] = None
    scale: Optional[tuple[float, float]] = None
    effect: float = 0.0
    seed: int = 0
    mc_draws: Optional[int] = None
    max_support: int = DEFAULT_MAX_SUPPORT
    tensor_cache: Optional[str] = None

    def __post_init__(self):
        unknown = [e for e in self.estimators if e not in KNOWN_ESTIMATORS]
        if unknown:
            raise SchemaError(f"unknown estimators: {unknown}")


@dataclass(frozen=True)
class MetricRow:
    """Table 2/3-style summary of one estimator against the true variance."""

    name: str
    e_ratio: float
    se_ratio: float
    bias_ratio: float
    rmse_ratio: float
    cv: float

    def identity_residual(self) -> float:
        return abs(self.rmse_ratio**2 - (self.bias_ratio**2 + self.se_ratio**2))


@dataclass(frozen=True)
class StudyResult:
    rows: tuple[MetricRow, ...]
    ratios: dict[str, dict[str, dict[str, float]]]
    true_var: float
    estimand_mean: float
    n_assignments: int
    n_units: int
    kn: int
    runtime_s: float

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        data = {
            "estimator": [r.name for r in self.rows],
            "e_ratio": [r.e_ratio for r in self.rows],
            "se_ratio": [r.se_ratio for r in self.rows],
            "bias_ratio": [r.bias_ratio for r in self.rows],
            "rmse_ratio": [r.rmse_ratio for r in self.rows],
            "cv": [r.cv for r in self.rows],
        }
        frame = pd.DataFrame(data)
        for ref, block in self.ratios.items():
            frame[f"rmse_vs_{ref}"] = [
                block.get(r.name, {}).get("rmse", np.nan) for r in self.rows
            ]
            frame[f"cv_vs_{ref}"] = [
                block.get(r.name, {}).get("cv", np.nan) for r in self.rows
            ]
        return frame


def _metric_row(name: str, values: np.ndarray, weights: np.ndarray, true_var: float) -> MetricRow:
    ratio = values / true_var
    e = float(weights @ ratio)
    se = float(np.sqrt(max(weights @ (ratio - e) ** 2, 0.0)))
    rmse = float(np.sqrt(weights @ (ratio - 1.0) ** 2))
    return MetricRow(
        name=name,
        e_ratio=e,
        se_ratio=se,
        bias_ratio=e - 1.0,
        rmse_ratio=rmse,
        cv=se / e if e != 0.0 else np.nan,
    )


def _covariate_matrix(ds: Dataset, names: Optional[Sequence[str]]):
    if not names:
        return None, ds
    cols = []
    out = ds
    for name in names:
        if name not in out.covariates:
            raise SchemaError(f"no covariate named {name}")
        if np.isnan(out.covariates[name]).any():
            out, _ = mean_impute(out, name)
        cols.append(out.covariates[name])
    return np.column_stack(cols), out


def _pair_dummies(ds: Dataset) -> np.ndarray:
    labels = list(dict.fromkeys(ds.pair_id.tolist()))
    return np.column_stack([(ds.pair_id == lab).astype(float) for lab in labels])


def run_study(ds: Dataset, config: StudyConfig) -> StudyResult:
    """Score every configured estimator on every assignment of the design.

    The same enumeration provides the true variance denominator and every
    estimator's distribution, so there is no sampling drift between them.
    """
    t0 = time.perf_counter()
    if config.scale is not None:
        ds = center_midpoint(ds, *config.scale)
    x_units, ds = _covariate_matrix(ds, config.covariates)

    design = design_from_dataset(ds)
    n, k = ds.n, 2
    y = impute_sharp_null(ds, k=k, effect=config.effect)
    if config.mc_draws:
        dist = DesignDistribution(
            design=design, mode="sampled", seed=config.seed, draws=config.mc_draws
        )
    else:
        dist = enumerate_design(design, config.max_support)

    joint = compute_p(dist)
    pi = joint.pi
    dmat = compute_d(joint)
    bound = amgm_bound(dmat.d, joint.p)
    kernel = build_gs_kernel(bound.d_tilde, joint.p, pi)

    spec = make_estimator(
        "wls",
        n,
        k,
        pi=pi,
        covariates=x_units,
        expansion="pooled" if x_units is not None else "none",
        m="identity",
    )
    c_full = full_contrast(spec, np.asarray(config.contrast, dtype=float))

    wanted = set(config.estimators)
    q = None
    if wanted & {"oc0", "oc1", "oc2"}:
        key = context.combined_key("o0", dist, spec, c_full, bound.d_tilde)
        mean_o = context.memo(
            key, lambda: o0_mean(spec, pi, kernel, dist, c_full).matrix
        )
        q = q_from_mean(mean_o, joint.p)
    kernels = None
    if "oc2" in wanted:
        tensor_key = context.combined_key("bbar", dist, spec, joint.p)
        tensor = context.load_or_build_tensor(
            config.tensor_cache, tensor_key, lambda: bbar_mean(spec, pi, joint.p, dist)
        )
        kernels = bias_kernels(spectral_split(tensor), joint.p, q)
    gck = None
    if "gc" in wanted:
        gck = gc_kernel(g_matrix(dist, spec, pi, c_full), joint.p)

    cr_fixed = None
    if wanted & {"cr0", "cr1", "cr2"}:
        parts = [_pair_dummies(ds)]
        if x_units is not None:
            parts.append(x_units)
        cr_fixed = np.column_stack(parts)

    rows = dist.weighted_support()
    weights = np.array([w for _, w in rows])
    deltas = np.empty(len(rows))
    values: dict[str, np.ndarray] = {name: np.empty(len(rows)) for name in config.estimators}
    for i, (a, _) in enumerate(rows):
        r = expand_assignment(a, k)
        deltas[i] = point_estimate(spec, pi, r, y, c_full)
        y_obs = None
        for name in config.estimators:
            if name == "gs":
                v = gs_estimate(spec, pi, kernel, r, y, c_full).value
            elif name == "oc0":
                v = oc0(q, r, y)
            elif name == "oc1":
                v = oc1(spec, pi, q, r, y)
            elif name == "oc2":
                v = oc2(spec, pi, q, kernels, r, y)
            elif name == "gc":
                v = gc_estimate(gck, r, y)
            elif name.startswith("hc"):
                v = hc_refinement(spec, pi, r, y, c_full, variant=int(name[2])).value
            else:  # cr0/1/2 with pair fixed effects, clustered on cluster_id
                if y_obs is None:
                    y_obs = observed_outcomes(y, r, k)
                    treat = (np.asarray(a.arm_of) == 2).astype(float)
                    x_cr = np.column_stack([treat[:, None], cr_fixed])
                    c_cr = np.zeros(x_cr.shape[1])
                    c_cr[0] = 1.0
                v = robust_variance(
                    y_obs, x_cr, c_cr, variant=int(name[2]), clusters=ds.cluster_id
                ).value
            values[name][i] = v

    mean_delta = float(weights @ deltas)
    true_var = float(weights @ (deltas - mean_delta) ** 2)
    if true_var <= 0.0:
        raise ConsistencyError("true variance of the point estimator is zero")

    metric_rows = tuple(
        _metric_row(name, values[name], weights, true_var) for name in config.estimators
    )
    refs = [r for r in ("gs", "oc2", "oc1", "gc") if r in values]
    ratios: dict[str, dict[str, dict[str, float]]] = {}
    by_name = {row.name: row for row in metric_rows}
    for ref in refs:
        base = by_name[ref]
        ratios[ref] = {
            row.name: {
                "rmse": row.rmse_ratio / base.rmse_ratio if base.rmse_ratio else np.nan,
                "cv": row.cv / base.cv if base.cv else np.nan,
            }
            for row in metric_rows
        }
    return StudyResult(
        rows=metric_rows,
        ratios=ratios,
        true_var=true_var,
        estimand_mean=mean_delta,
        n_assignments=len(rows),
        n_units=n,
        kn=k * n,
        runtime_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# synthetic data with the published cluster sizes

CONTROL_SIZES = (37, 39, 39, 39, 33, 37, 43)
TREATED_SIZES = (33, 37, 36, 37, 38, 20, 29)


def synthetic_paluck_green(seed: int = 0) -> Dataset:
    """Paired-cluster dataset with the published per-village unit counts
    (n=497) and a 13-valued outcome built as the mean of four 1-4 items."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    unit_ids, cluster_ids, pair_ids, arms = [], [], [], []
    latent = []
    for pair_idx in range(7):
        pair = f"p{pair_idx + 1}"
        pair_shift = rng.normal(0.0, 0.35)
        for arm, size in ((1, CONTROL_SIZES[pair_idx]), (2, TREATED_SIZES[pair_idx])):
            village = f"v{pair_idx + 1}{'c' if arm == 1 else 't'}"
            village_shift = rng.normal(0.0, 0.3)
            for _ in range(size):
                unit_ids.append(f"u{len(unit_ids) + 1:04d}")
                cluster_ids.append(village)
                pair_ids.append(pair)
                arms.append(arm)
                latent.append(pair_shift + village_shift)
    n = len(unit_ids)
    latent = np.asarray(latent)
    items = np.clip(
        np.rint(2.5 + latent[:, None] + rng.normal(0.0, 0.9, size=(n, 4))), 1, 4
    )
    outcome = items.mean(axis=1)
    age = rng.integers(18, 76, size=n).astype(float)
    age[rng.choice(n, size=5, replace=False)] = np.nan
    covs = {
        "cov_displaced": rng.integers(0, 2, size=n).astype(float),
        "cov_sex": rng.integers(0, 2, size=n).astype(float),
        "cov_age": age,
        "cov_radio": rng.integers(1, 5, size=n).astype(float),
    }
    return Dataset(
        unit_id=np.asarray(unit_ids),
        cluster_id=np.asarray(cluster_ids),
        pair_id=np.asarray(pair_ids),
        arm=np.asarray(arms, dtype=np.int64),
        outcome=outcome,
        covariates=covs,
    )


def reduced_synthetic(seed: int = 1) -> Dataset:
    """Small 7-pair dataset (kn <= 60) so the tensor-based OC2 path can run
    the full study protocol."""
    from .toys import REDUCED_CONTROL_SIZES, REDUCED_TREATED_SIZES

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    unit_ids, cluster_ids, pair_ids, arms = [], [], [], []
    for pair_idx in range(7):
        for arm, size in (
            (1, REDUCED_CONTROL_SIZES[pair_idx]),
            (2, REDUCED_TREATED_SIZES[pair_idx]),
        ):
            village = f"c{pair_idx + 1}{'a' if arm == 1 else 'b'}"
            for _ in range(size):
                unit_ids.append(f"u{len(unit_ids) + 1:03d}")
                cluster_ids.append(village)
                pair_ids.append(f"p{pair_idx + 1}")
                arms.append(arm)
    n = len(unit_ids)
    items = np.clip(np.rint(2.5 + rng.normal(0.0, 1.0, size=(n, 4))), 1, 4)
    return Dataset(
        unit_id=np.asarray(unit_ids),
        cluster_id=np.asarray(cluster_ids),
        pair_id=np.asarray(pair_ids),
        arm=np.asarray(arms, dtype=np.int64),
        outcome=items.mean(axis=1),
        covariates={},
    )
