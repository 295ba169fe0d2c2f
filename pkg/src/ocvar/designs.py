"""Randomization designs, their assignment distributions, and indicator expansion.

A design describes the randomization mechanism of an experiment with n units
and k arms.  Supported kinds: independent per-unit (bernoulli), complete
randomization of units or clusters, paired-cluster randomization, and custom
explicit tables.  All downstream moments use the block slot layout: slot
a = (arm-1)*n + unit, i.e. all units under arm 1, then arm 2, and so on.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    ArmOutOfRange,
    EmptySupport,
    InvalidDesign,
    SupportTooLarge,
)

DEFAULT_MAX_SUPPORT = 65_536

PROB_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Assignment:
    """One realized assignment: arm_of[i] in 1..k for each unit i."""

    arm_of: tuple[int, ...]

    @property
    def n_units(self) -> int:
        return len(self.arm_of)

    def key(self) -> bytes:
        return np.asarray(self.arm_of, dtype=np.int64).tobytes()


@dataclass(frozen=True)
class Design:
    """A randomization design; validated on construction."""

    kind: str  # bernoulli | complete | cluster_complete | paired_cluster | custom
    n_units: int
    k_arms: int
    arm_probs: Optional[np.ndarray] = None  # (n,k) for bernoulli
    arm_counts: Optional[tuple[int, ...]] = None  # per-arm unit or cluster counts
    cluster_of: Optional[tuple] = None  # unit -> cluster label
    pair_of: Optional[dict] = None  # cluster label -> pair label
    custom_table: Optional[tuple[tuple[Assignment, float], ...]] = None

    def __post_init__(self):
        if self.n_units < 1 or self.k_arms < 1:
            raise InvalidDesign("need at least one unit and one arm")
        validator = {
            "bernoulli": self._check_bernoulli,
            "complete": self._check_complete,
            "cluster_complete": self._check_cluster_complete,
            "paired_cluster": self._check_paired_cluster,
            "custom": self._check_custom,
        }.get(self.kind)
        if validator is None:
            raise InvalidDesign(f"unknown design kind {self.kind!r}")
        validator()

    # -- validation ---------------------------------------------------------

    def _check_bernoulli(self):
        if self.arm_probs is None:
            raise InvalidDesign("bernoulli design needs arm_probs")
        probs = np.asarray(self.arm_probs, dtype=float)
        if probs.ndim == 1:
            probs = np.tile(probs, (self.n_units, 1))
        if probs.shape != (self.n_units, self.k_arms):
            raise InvalidDesign(
                f"arm_probs shape {probs.shape} != ({self.n_units}, {self.k_arms})"
            )
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidDesign("arm probabilities must lie in [0, 1]")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > PROB_TOL:
            raise InvalidDesign("per-unit arm probabilities must sum to 1")
        object.__setattr__(self, "arm_probs", _freeze(probs))

    def _check_complete(self):
        counts = self._counts_or_raise()
        if sum(counts) != self.n_units:
            raise InvalidDesign("arm_counts must sum to n_units")

    def _check_cluster_complete(self):
        clusters = self._clusters_or_raise()
        counts = self._counts_or_raise()
        if sum(counts) != len(clusters):
            raise InvalidDesign("arm_counts must sum to the number of clusters")

    def _check_paired_cluster(self):
        if self.k_arms != 2:
            raise InvalidDesign("paired_cluster designs require exactly 2 arms")
        clusters = self._clusters_or_raise()
        if self.pair_of is None:
            raise InvalidDesign("paired_cluster design needs pair_of")
        missing = [c for c in clusters if c not in self.pair_of]
        if missing:
            raise InvalidDesign(f"clusters without a pair: {missing}")
        sizes: dict = {}
        for c in clusters:
            sizes.setdefault(self.pair_of[c], []).append(c)
        bad = {p: cs for p, cs in sizes.items() if len(cs) != 2}
        if bad:
            raise InvalidDesign(f"each pair must contain exactly 2 clusters, got {bad}")

    def _check_custom(self):
        if not self.custom_table:
            raise InvalidDesign("custom design needs a nonempty custom_table")
        total = 0.0
        for a, prob in self.custom_table:
            self.validate_assignment(a)
            if prob < 0:
                raise InvalidDesign("custom probabilities must be nonnegative")
            total += prob
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidDesign(f"custom probabilities sum to {total}, expected 1")

    def _counts_or_raise(self) -> tuple[int, ...]:
        if self.arm_counts is None:
            raise InvalidDesign(f"{self.kind} design needs arm_counts")
        counts = tuple(int(c) for c in self.arm_counts)
        if len(counts) != self.k_arms or any(c < 0 for c in counts):
            raise InvalidDesign("arm_counts must be k nonnegative integers")
        return counts

    def _clusters_or_raise(self) -> list:
        if self.cluster_of is None:
            raise InvalidDesign(f"{self.kind} design needs cluster_of")
        if len(self.cluster_of) != self.n_units:
            raise InvalidDesign("cluster_of must map every unit")
        seen: list = []
        for c in self.cluster_of:
            if c not in seen:
                seen.append(c)
        return seen

    # -- structure helpers --------------------------------------------------

    @property
    def clusters(self) -> list:
        """Cluster labels in order of first appearance."""
        return self._clusters_or_raise()

    @property
    def pairs(self) -> list:
        """Pair labels in order of first appearance, each with its 2 clusters."""
        clusters = self._clusters_or_raise()
        order: list = []
        members: dict = {}
        for c in clusters:
            p = self.pair_of[c]
            if p not in members:
                members[p] = []
                order.append(p)
            members[p].append(c)
        return [(p, tuple(members[p])) for p in order]

    def units_of_cluster(self, label) -> list[int]:
        return [i for i, c in enumerate(self.cluster_of) if c == label]

    def validate_assignment(self, a: Assignment) -> None:
        if a.n_units != self.n_units:
            raise InvalidDesign("assignment has wrong number of units")
        if any(j < 1 or j > self.k_arms for j in a.arm_of):
            raise ArmOutOfRange(f"arm labels must lie in 1..{self.k_arms}")
        if self.cluster_of is not None:
            arms: dict = {}
            for i, c in enumerate(self.cluster_of):
                arms.setdefault(c, set()).add(a.arm_of[i])
            split = {c: s for c, s in arms.items() if len(s) > 1}
            if split:
                raise InvalidDesign(f"clusters assigned to multiple arms: {sorted(split)}")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "n_units": self.n_units, "k_arms": self.k_arms}
        if self.arm_probs is not None:
            out["arm_probs"] = np.asarray(self.arm_probs).tolist()
        if self.arm_counts is not None:
            out["arm_counts"] = list(self.arm_counts)
        if self.cluster_of is not None:
            out["cluster_of"] = list(self.cluster_of)
        if self.pair_of is not None:
            out["pair_of"] = dict(self.pair_of)
        if self.custom_table is not None:
            out["custom_table"] = [
                {"arm_of": list(a.arm_of), "prob": p} for a, p in self.custom_table
            ]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Design":
        table = None
        if d.get("custom_table") is not None:
            table = tuple(
                (Assignment(tuple(int(j) for j in row["arm_of"])), float(row["prob"]))
                for row in d["custom_table"]
            )
        return cls(
            kind=d["kind"],
            n_units=int(d["n_units"]),
            k_arms=int(d["k_arms"]),
            arm_probs=None if d.get("arm_probs") is None else np.asarray(d["arm_probs"], dtype=float),
            arm_counts=None if d.get("arm_counts") is None else tuple(int(c) for c in d["arm_counts"]),
            cluster_of=None if d.get("cluster_of") is None else tuple(d["cluster_of"]),
            pair_of=None if d.get("pair_of") is None else dict(d["pair_of"]),
            custom_table=table,
        )

    def content_key(self) -> str:
        """Stable hash of the design, used for cache addressing."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class DesignDistribution:
    """Exact support of a design, or a seeded Monte Carlo handle on it."""

    design: Design
    mode: str  # exact | sampled
    support: Optional[tuple[tuple[Assignment, float], ...]] = None
    seed: Optional[int] = None
    draws: Optional[int] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.mode == "exact":
            if not self.support:
                raise EmptySupport("exact distribution with empty support")
            total = sum(p for _, p in self.support)
            if abs(total - 1.0) > PROB_TOL:
                raise InvalidDesign(f"support probabilities sum to {total}")
            for a, _ in self.support:
                self.design.validate_assignment(a)
        elif self.mode == "sampled":
            if self.seed is None or not self.draws:
                raise InvalidDesign("sampled distribution needs seed and draws")
        else:
            raise InvalidDesign(f"unknown distribution mode {self.mode!r}")

    @property
    def n_draws(self) -> Optional[int]:
        return self.draws if self.mode == "sampled" else None

    def weighted_support(self) -> list[tuple[Assignment, float]]:
        """(assignment, weight) pairs; exact probabilities, or empirical draw
        frequencies grouped by distinct assignment for sampled mode.

        Grouping makes weighted sums identical to a per-draw loop while doing
        each distinct assignment's work once.
        """
        if self.mode == "exact":
            return list(self.support)
        if "grouped" not in self._cache:
            groups: dict[bytes, list] = {}
            for a in draw_assignments(self.design, self.seed, self.draws):
                entry = groups.setdefault(a.key(), [a, 0])
                entry[1] += 1
            self._cache["grouped"] = [
                (a, count / self.draws) for a, count in groups.values()
            ]
        return self._cache["grouped"]

    def content_key(self) -> str:
        blob = json.dumps(
            {
                "design": self.design.to_dict(),
                "mode": self.mode,
                "seed": self.seed,
                "draws": self.draws,
            },
            sort_keys=True,
            default=str,
        ).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# enumeration


def _multiset_permutations(counts: list[int]) -> Iterator[list[int]]:
    """All distinct arrangements of a multiset given per-symbol counts (1-based symbols)."""
    total = sum(counts)
    out = [0] * total

    def rec(pos: int):
        if pos == total:
            yield list(out)
            return
        for sym in range(len(counts)):
            if counts[sym] > 0:
                counts[sym] -= 1
                out[pos] = sym + 1
                yield from rec(pos + 1)
                counts[sym] += 1

    yield from rec(0)


def support_size(design: Design) -> int:
    """Number of assignments in the exact support."""
    if design.kind == "bernoulli":
        return design.k_arms**design.n_units
    if design.kind == "complete":
        counts = design.arm_counts
        size = math.factorial(design.n_units)
        for c in counts:
            size //= math.factorial(c)
        return size
    if design.kind == "cluster_complete":
        n_c = len(design.clusters)
        size = math.factorial(n_c)
        for c in design.arm_counts:
            size //= math.factorial(c)
        return size
    if design.kind == "paired_cluster":
        return 2 ** len(design.pairs)
    if design.kind == "custom":
        return len(design.custom_table)
    raise InvalidDesign(design.kind)


def _clusters_to_units(design: Design, cluster_arm: dict) -> Assignment:
    return Assignment(tuple(cluster_arm[c] for c in design.cluster_of))


def enumerate_design(design: Design, max_support: int = DEFAULT_MAX_SUPPORT) -> DesignDistribution:
    """Exact assignment distribution of a design.

    Raises SupportTooLarge when the combinatorial count exceeds max_support;
    callers should fall back to sampled mode in that case.
    """
    count = support_size(design)
    if count > max_support:
        raise SupportTooLarge(f"support size {count} exceeds max_support {max_support}")

    rows: list[tuple[Assignment, float]] = []
    if design.kind == "bernoulli":
        probs = np.asarray(design.arm_probs)
        for arms in _multiset_permutations_product(design.n_units, design.k_arms):
            p = float(np.prod([probs[i, arms[i] - 1] for i in range(design.n_units)]))
            if p > 0.0:
                rows.append((Assignment(tuple(arms)), p))
    elif design.kind == "complete":
        w = 1.0 / count
        for arms in _multiset_permutations(list(design.arm_counts)):
            rows.append((Assignment(tuple(arms)), w))
    elif design.kind == "cluster_complete":
        clusters = design.clusters
        w = 1.0 / count
        for arms in _multiset_permutations(list(design.arm_counts)):
            cluster_arm = dict(zip(clusters, arms))
            rows.append((_clusters_to_units(design, cluster_arm), w))
    elif design.kind == "paired_cluster":
        pairs = design.pairs
        w = 1.0 / count
        for bits in range(count):
            cluster_arm = {}
            for b, (_, (c1, c2)) in enumerate(pairs):
                flip = (bits >> b) & 1
                cluster_arm[c1] = 1 + flip
                cluster_arm[c2] = 2 - flip
            rows.append((_clusters_to_units(design, cluster_arm), w))
    elif design.kind == "custom":
        rows = list(design.custom_table)
    if not rows:
        raise EmptySupport("design has no assignments with positive probability")
    return DesignDistribution(design=design, mode="exact", support=tuple(rows))


def _multiset_permutations_product(n: int, k: int) -> Iterator[list[int]]:
    """All k^n arm vectors (1-based), lexicographic."""
    arms = [1] * n
    while True:
        yield list(arms)
        pos = n - 1
        while pos >= 0 and arms[pos] == k:
            arms[pos] = 1
            pos -= 1
        if pos < 0:
            return
        arms[pos] += 1


# ---------------------------------------------------------------------------
# sampling


def sample_assignment(design: Design, seed: int) -> Assignment:
    """One assignment drawn from the design law; pure in (design, seed)."""
    return _sample_with_rng(design, np.random.default_rng(np.random.SeedSequence(seed)))


def draw_assignments(design: Design, seed: int, draws: int) -> list[Assignment]:
    """Deterministic draw list with one child RNG stream per draw.

    Per-draw streams keep the draw list independent of batching, so any
    module averaging over the same (seed, draws) sees identical assignments.
    """
    children = np.random.SeedSequence(seed).spawn(draws)
    return [_sample_with_rng(design, np.random.default_rng(c)) for c in children]


def _sample_with_rng(design: Design, rng: np.random.Generator) -> Assignment:
    if design.kind == "bernoulli":
        probs = np.asarray(design.arm_probs)
        u = rng.random(design.n_units)
        cut = np.cumsum(probs, axis=1)
        arms = 1 + (u[:, None] >= cut).sum(axis=1)
        arms = np.minimum(arms, design.k_arms)
        return Assignment(tuple(int(a) for a in arms))
    if design.kind == "complete":
        template = np.repeat(np.arange(1, design.k_arms + 1), design.arm_counts)
        return Assignment(tuple(int(a) for a in rng.permutation(template)))
    if design.kind == "cluster_complete":
        clusters = design.clusters
        template = np.repeat(np.arange(1, design.k_arms + 1), design.arm_counts)
        cluster_arm = dict(zip(clusters, (int(a) for a in rng.permutation(template))))
        return _clusters_to_units(design, cluster_arm)
    if design.kind == "paired_cluster":
        cluster_arm = {}
        flips = rng.integers(0, 2, size=len(design.pairs))
        for flip, (_, (c1, c2)) in zip(flips, design.pairs):
            cluster_arm[c1] = 1 + int(flip)
            cluster_arm[c2] = 2 - int(flip)
        return _clusters_to_units(design, cluster_arm)
    if design.kind == "custom":
        probs = np.asarray([p for _, p in design.custom_table])
        idx = rng.choice(len(design.custom_table), p=probs / probs.sum())
        return design.custom_table[idx][0]
    raise InvalidDesign(design.kind)


# ---------------------------------------------------------------------------
# indicator expansion


def expand_assignment(assignment: Assignment | Sequence[int], k: int) -> np.ndarray:
    """kn indicator vector in block layout: slots 0..n-1 are arm-1 indicators,
    n..2n-1 arm-2, and so on. Exactly n entries are 1."""
    arms = np.asarray(
        assignment.arm_of if isinstance(assignment, Assignment) else assignment,
        dtype=np.int64,
    )
    if arms.size and (arms.min() < 1 or arms.max() > k):
        raise ArmOutOfRange(f"arm labels must lie in 1..{k}")
    n = arms.size
    out = np.zeros(k * n, dtype=float)
    out[(arms - 1) * n + np.arange(n)] = 1.0
    return out
