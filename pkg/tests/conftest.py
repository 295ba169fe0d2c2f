"""Shared fixtures: enumerated toy designs with their moment pipelines."""

from dataclasses import dataclass

import numpy as np
import pytest

from ocvar.bounding import BoundedMatrix, amgm_bound
from ocvar.designs import Design, DesignDistribution, enumerate_design
from ocvar.estimators import EstimatorSpec, full_contrast, make_estimator
from ocvar.kernel import DesignMatrix, JointProbs, compute_d, compute_p
from ocvar.sandwich import GsKernel, build_gs_kernel
from ocvar.toys import bernoulli_toy, pair2_cluster_toy, toy_cr4


@dataclass(frozen=True)
class Bundle:
    """One toy design with everything downstream of enumeration."""

    design: Design
    dist: DesignDistribution
    joint: JointProbs
    pi: np.ndarray
    dmat: DesignMatrix
    bounded: BoundedMatrix
    kernel: GsKernel
    spec: EstimatorSpec  # wls, identity weights, arm intercepts only
    c: np.ndarray  # full contrast for arm contrast (-1, 1)


def _bundle(design: Design) -> Bundle:
    dist = enumerate_design(design)
    joint = compute_p(dist)
    dmat = compute_d(joint)
    bounded = amgm_bound(dmat.d, joint.p)
    kernel = build_gs_kernel(bounded.d_tilde, joint.p, joint.pi)
    spec = make_estimator("wls", design.n_units, design.k_arms, pi=joint.pi)
    c = full_contrast(spec, np.array([-1.0, 1.0]))
    return Bundle(
        design=design,
        dist=dist,
        joint=joint,
        pi=joint.pi,
        dmat=dmat,
        bounded=bounded,
        kernel=kernel,
        spec=spec,
        c=c,
    )


@pytest.fixture(scope="session")
def cr4() -> Bundle:
    return _bundle(toy_cr4())


@pytest.fixture(scope="session")
def pair2() -> Bundle:
    return _bundle(pair2_cluster_toy())


@pytest.fixture(scope="session")
def bern6() -> Bundle:
    return _bundle(bernoulli_toy(n=6, prob=0.5))


@pytest.fixture(scope="session")
def bern8() -> Bundle:
    return _bundle(bernoulli_toy(n=8, prob=0.5))
