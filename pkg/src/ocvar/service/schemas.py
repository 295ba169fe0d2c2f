"""Request and response models shared by the HTTP service and the CLI."""

from __future__ import annotations

from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..designs import Assignment, Design
from ..errors import SchemaError


class CustomRow(BaseModel):
    arm_of: list[int]
    prob: float


class DesignModel(BaseModel):
    kind: Literal["bernoulli", "complete", "cluster_complete", "paired_cluster", "custom"]
    n_units: int
    k_arms: int
    arm_probs: Optional[Union[list[float], list[list[float]]]] = None
    arm_counts: Optional[list[int]] = None
    cluster_of: Optional[list[Union[str, int]]] = None
    pair_of: Optional[dict[str, Union[str, int]]] = None
    custom_table: Optional[list[CustomRow]] = None

    def to_core(self) -> Design:
        table = None
        if self.custom_table is not None:
            table = tuple(
                (Assignment(tuple(row.arm_of)), row.prob) for row in self.custom_table
            )
        cluster_of = None
        pair_of = None
        if self.cluster_of is not None:
            cluster_of = tuple(str(c) for c in self.cluster_of)
        if self.pair_of is not None:
            pair_of = {str(c): str(p) for c, p in self.pair_of.items()}
        return Design(
            kind=self.kind,
            n_units=self.n_units,
            k_arms=self.k_arms,
            arm_probs=None if self.arm_probs is None else np.asarray(self.arm_probs, dtype=float),
            arm_counts=None if self.arm_counts is None else tuple(self.arm_counts),
            cluster_of=cluster_of,
            pair_of=pair_of,
            custom_table=table,
        )


class CovariatesModel(BaseModel):
    layout: Literal["pooled", "by_arm"] = "pooled"
    columns: list[list[float]]  # n rows, q columns


class EstimatorModel(BaseModel):
    kind: Literal["ht", "wls"] = "wls"
    m: Union[Literal["identity", "inv_pi"], list[float]] = "identity"
    covariates: Optional[CovariatesModel] = None


class MomentsOptions(BaseModel):
    mode: Literal["exact", "sampled"] = "exact"
    seed: int = 0
    draws: int = 100_000
    max_support: int = 65_536


class DesignEnumerateRequest(BaseModel):
    design: DesignModel
    max_support: int = 65_536


class DesignEnumerateResponse(BaseModel):
    size: int
    assignments: list[list[int]]
    probabilities: list[float]


class DesignSampleRequest(BaseModel):
    design: DesignModel
    seed: int = 0
    draws: int = 1


class DesignSampleResponse(BaseModel):
    assignments: list[list[int]]


class ProbsRequest(BaseModel):
    design: DesignModel
    options: MomentsOptions = Field(default_factory=MomentsOptions)


class ProbsResponse(BaseModel):
    kn: int
    pi: list[float]
    p: list[list[float]]
    d: list[list[float]]
    pi_se: Optional[list[float]] = None
    p_se: Optional[list[list[float]]] = None
    d_null_residual: float
    d_min_eigenvalue: float


class BoundRequest(BaseModel):
    design: DesignModel
    options: MomentsOptions = Field(default_factory=MomentsOptions)


class BoundReportModel(BaseModel):
    min_eig_diff: float
    dominates: bool
    max_abs_on_zero_cells: float
    estimable: bool


class BoundResponse(BaseModel):
    kn: int
    d_tilde: list[list[float]]
    absorbed_cells: int
    report: BoundReportModel


class DataInput(BaseModel):
    """Outcomes for one realized assignment.

    Either y (full kn potential vector; untreated slots ignored) or y_obs
    (per-unit observed outcomes, expanded internally).
    """

    assignment: list[int]
    y: Optional[list[float]] = None
    y_obs: Optional[list[float]] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.y is None) == (self.y_obs is None):
            raise ValueError("provide exactly one of y, y_obs")
        return self

    def full_y(self, n: int, k: int) -> np.ndarray:
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.size != k * n:
                raise SchemaError(f"y has length {y.size}, expected kn={k * n}")
            return y
        obs = np.asarray(self.y_obs, dtype=float)
        if obs.size != n:
            raise SchemaError(f"y_obs has length {obs.size}, expected n={n}")
        return np.tile(obs, k)


class EstimateRequest(BaseModel):
    design: DesignModel
    estimator: EstimatorModel = Field(default_factory=EstimatorModel)
    contrast: list[float]
    data: DataInput
    options: MomentsOptions = Field(default_factory=MomentsOptions)


class EstimateResponse(BaseModel):
    estimate: float


class VarestRequest(BaseModel):
    design: DesignModel
    estimator: EstimatorModel = Field(default_factory=EstimatorModel)
    contrast: list[float]
    data: DataInput
    estimators: list[str] = ["gs"]
    options: MomentsOptions = Field(default_factory=MomentsOptions)
    tensor_cache: Optional[str] = None


class VarestResponse(BaseModel):
    values: dict[str, float]
    kn: int
    mode: str


class SyntheticSpec(BaseModel):
    kind: Literal["paluck_green", "reduced"] = "paluck_green"
    seed: int = 0


class SimulateRequest(BaseModel):
    data_csv: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    estimators: list[str] = ["cr0", "cr1", "cr2", "gs", "oc0", "oc1", "gc"]
    contrast: list[float] = [-1.0, 1.0]
    covariates: Optional[list[str]] = None
    scale: Optional[list[float]] = None
    effect: float = 0.0
    seed: int = 0
    mc_draws: Optional[int] = None
    max_support: int = 65_536
    tensor_cache: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.data_csv is None) == (self.synthetic is None):
            raise ValueError("provide exactly one of data_csv, synthetic")
        return self


class MetricRowModel(BaseModel):
    name: str
    e_ratio: float
    se_ratio: float
    bias_ratio: float
    rmse_ratio: float
    cv: float


class SimulateResponse(BaseModel):
    rows: list[MetricRowModel]
    ratios: dict[str, dict[str, dict[str, float]]]
    true_var: float
    estimand_mean: float
    n_assignments: int
    n_units: int
    kn: int
    runtime_s: float


class CheckRequest(BaseModel):
    design: DesignModel
    estimator: EstimatorModel = Field(default_factory=EstimatorModel)
    contrast: list[float]
    y: Optional[list[float]] = None
    options: MomentsOptions = Field(default_factory=MomentsOptions)
    tensor_cache: Optional[str] = None


class CheckResponse(BaseModel):
    kn: int
    lambda_max: float
    lambda_min: float
    in_unit_interval: bool
    tensor_asymmetry: float
    raw_term_max: float
    bound_min_eig_diff: float
    bound_dominates: bool
    d_null_residual: float
    d_min_eigenvalue: float


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
