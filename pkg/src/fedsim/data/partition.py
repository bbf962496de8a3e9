"""Dirichlet label-skew partitioning with equal client sizes.

Each client draws class proportions from Dirichlet(alpha * 1_K) and
requests ``samples_per_client`` indices accordingly.  Because per-class
pools are finite, requests are reconciled globally: oversubscribed classes
are scaled down pro rata and the resulting deficits are redistributed over
classes that still have stock, proportionally to each client's remaining
probability mass.  The reconciliation works on the whole demand matrix at
once, so the outcome does not depend on the order clients are processed
in.  Extreme alpha with many clients can therefore distort realized
proportions relative to the raw Dirichlet draw; that is the documented
price of exact equal client sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import PartitionError
from .. import rng as rngmod
from .datasets import Dataset


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int = 20
    alpha: float = 1.0
    samples_per_client: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise PartitionError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.alpha <= 0:
            raise PartitionError(f"alpha must be positive, got {self.alpha}")
        if self.samples_per_client < 1:
            raise PartitionError(f"samples_per_client must be >= 1, got {self.samples_per_client}")


@dataclass
class Partition:
    assignments: list[np.ndarray]   # per-client sample indices, pairwise disjoint
    histograms: np.ndarray          # (n_clients, class_count) realized class counts
    spec: PartitionSpec

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def entropies(self) -> np.ndarray:
        """Shannon entropy (nats) of each client's class histogram."""
        p = self.histograms / self.histograms.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, -p * np.log(p), 0.0)
        return terms.sum(axis=1)

    def dominant_shares(self) -> np.ndarray:
        return self.histograms.max(axis=1) / self.histograms.sum(axis=1)


def _dirichlet_row(gen: np.random.Generator, alpha: float, k: int) -> np.ndarray:
    draws = gen.gamma(alpha, 1.0, size=k)
    total = draws.sum()
    if total <= 0.0 or not np.isfinite(total):
        # Gamma(alpha) underflows to zero for tiny alpha; the alpha -> 0
        # limit of the Dirichlet is a one-hot draw.
        row = np.zeros(k)
        row[gen.integers(k)] = 1.0
        return row
    return draws / total


def _round_preserving_sum(values: np.ndarray, target: int) -> np.ndarray:
    """Round nonnegative reals to integers summing to ``target`` (largest remainder)."""
    floors = np.floor(values).astype(np.int64)
    short = int(target - floors.sum())
    if short < 0:
        # can happen after pro-rata scaling when floats overshoot; trim from
        # the smallest remainders upward
        order = np.argsort(values - floors, kind="stable")
        for i in order:
            if short == 0:
                break
            if floors[i] > 0:
                floors[i] -= 1
                short += 1
    elif short > 0:
        order = np.argsort(-(values - floors), kind="stable")
        floors[order[:short]] += 1
    return floors


def _reconcile(targets: np.ndarray, proportions: np.ndarray, avail: np.ndarray,
               per_client: int) -> np.ndarray:
    """Cap demands at per-class availability, redistributing deficits."""
    t = targets.copy()
    k = t.shape[1]
    closed = np.zeros(k, dtype=bool)
    for _ in range(k + 1):
        col = t.sum(axis=0)
        over = (col > avail) & ~closed
        for c in np.nonzero(over)[0]:
            scaled = t[:, c] * (avail[c] / col[c])
            t[:, c] = _round_preserving_sum(scaled, int(avail[c]))
            closed[c] = True
        deficits = per_client - t.sum(axis=1)
        if not deficits.any():
            return t
        open_c = np.nonzero(~closed)[0]
        if open_c.size == 0:
            raise PartitionError("per-class pools exhausted before clients were filled")
        slack = avail[open_c] - t[:, open_c].sum(axis=0)
        for cl in np.nonzero(deficits > 0)[0]:
            mass = proportions[cl, open_c].sum()
            if mass > 0:
                want = deficits[cl] * proportions[cl, open_c] / mass
            else:
                want = deficits[cl] * slack / max(slack.sum(), 1)
            t[cl, open_c] += _round_preserving_sum(want, int(deficits[cl]))
    raise PartitionError("partition reconciliation did not converge")


def dirichlet_partition(
    ds: Dataset,
    spec: PartitionSpec,
    stream_ids: Optional[Sequence[int]] = None,
) -> Partition:
    """Draw a label-skew partition of ``ds`` per ``spec``.

    ``stream_ids`` relabels which random stream each client consumes
    (default: client index); useful for verifying that client identity is
    just a label.
    """
    n, s = spec.n_clients, spec.samples_per_client
    if n * s > len(ds):
        raise PartitionError(
            f"{n} clients x {s} samples = {n * s} exceeds dataset size {len(ds)}"
        )
    k = ds.class_count
    ids = list(stream_ids) if stream_ids is not None else list(range(n))
    if len(ids) != n:
        raise PartitionError(f"need {n} stream ids, got {len(ids)}")

    pools = []
    for c in range(k):
        idx = np.nonzero(ds.labels == c)[0]
        rngmod.stream(spec.seed, rngmod.PARTITION_POOL, c).shuffle(idx)
        pools.append(idx)
    avail = np.array([len(p) for p in pools], dtype=np.int64)

    proportions = np.stack(
        [_dirichlet_row(rngmod.stream(spec.seed, rngmod.PARTITION_CLIENT, i), spec.alpha, k)
         for i in ids]
    )
    targets = np.stack(
        [_round_preserving_sum(row * s, s) for row in proportions]
    )
    counts = _reconcile(targets, proportions, avail, s)

    offsets = np.zeros(k, dtype=np.int64)
    assignments = []
    for cl in range(n):
        taken = []
        for c in range(k):
            m = int(counts[cl, c])
            if m:
                taken.append(pools[c][offsets[c] : offsets[c] + m])
                offsets[c] += m
        assignments.append(np.sort(np.concatenate(taken)) if taken else np.empty(0, np.int64))
    return Partition(assignments, counts, spec)
