"""Small built-in designs used by diagnostics and tests.

These are the fixtures every conjecture check and oracle comparison runs on:
tiny enough for exact enumeration and dense tensor work, structured enough
to exercise clusters, pairs, and unidentified cells.
"""

from __future__ import annotations

import numpy as np

from .designs import Design


def toy_cr4() -> Design:
    """4 units, 2 arms, complete randomization 2/2: 6 assignments."""
    return Design(kind="complete", n_units=4, k_arms=2, arm_counts=(2, 2))


def pair2_cluster_toy() -> Design:
    """2 pairs of clusters sized (2,2) and (1,2): n=7, 4 assignments."""
    cluster_of = ("c1", "c1", "c2", "c2", "c3", "c4", "c4")
    pair_of = {"c1": "p1", "c2": "p1", "c3": "p2", "c4": "p2"}
    return Design(
        kind="paired_cluster",
        n_units=7,
        k_arms=2,
        cluster_of=cluster_of,
        pair_of=pair_of,
    )


def bernoulli_toy(n: int = 6, prob: float = 0.5, k: int = 2) -> Design:
    """Independent per-unit assignment, equal probabilities by default."""
    probs = np.full((n, k), 1.0 / k)
    if k == 2:
        probs = np.column_stack([np.full(n, 1.0 - prob), np.full(n, prob)])
    return Design(kind="bernoulli", n_units=n, k_arms=k, arm_probs=probs)


def single_assignment_toy(n: int = 3) -> Design:
    """Degenerate design: everyone in arm 1 of 1 with certainty."""
    return Design(kind="complete", n_units=n, k_arms=1, arm_counts=(n,))


REDUCED_CONTROL_SIZES = (2, 2, 1, 2, 1, 2, 2)
REDUCED_TREATED_SIZES = (1, 2, 2, 1, 2, 1, 2)


def reduced_pair7_toy() -> Design:
    """7 pairs with small clusters (n=23, kn=46): the full 128-assignment
    pair structure at a size the dense tensor path can handle."""
    cluster_of = []
    pair_of = {}
    for p in range(7):
        ctrl = f"c{p + 1}a"
        trt = f"c{p + 1}b"
        pair_of[ctrl] = f"p{p + 1}"
        pair_of[trt] = f"p{p + 1}"
        cluster_of += [ctrl] * REDUCED_CONTROL_SIZES[p]
        cluster_of += [trt] * REDUCED_TREATED_SIZES[p]
    return Design(
        kind="paired_cluster",
        n_units=len(cluster_of),
        k_arms=2,
        cluster_of=tuple(cluster_of),
        pair_of=pair_of,
    )
