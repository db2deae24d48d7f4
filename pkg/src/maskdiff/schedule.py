"""Sequences, mask schedules, mask trajectories and the forward masking process.

Token ids are 0-based integers in ``[0, K)``.  A masked sequence is an integer
array in which hidden positions hold :data:`MASK`, a negative sentinel that can
never alias a token id whatever the vocabulary size.

A trajectory is stored through its increments ``D_1, ..., D_T`` where
``D_t = M_t \\ M_{t-1}`` is the set of positions masked at forward step ``t``
(equivalently revealed at reverse step ``t``).  The unmasked set after step
``t`` is ``W_t = D_{t+1} | ... | D_T``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgument, ScheduleInvalid, TooLarge

MASK = -1

TRAJECTORY_GUARD = 10**6


def project(x, keep: Iterable[int]) -> np.ndarray:
    """Return ``x`` with every position outside ``keep`` replaced by MASK."""
    x = np.asarray(x, dtype=np.int64)
    idx = np.fromiter(keep, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise InvalidArgument(f"keep indices out of range for length {x.shape[-1]}")
    out = np.full_like(x, MASK)
    out[..., idx] = x[..., idx]
    return out


def masked_positions(y) -> np.ndarray:
    return np.flatnonzero(np.asarray(y) == MASK)


@dataclass(frozen=True)
class MaskSchedule:
    """Forward mask sizes ``s_1..s_T`` with ``sum(s) == L``."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ScheduleInvalid(f"schedule sizes must all be >= 1, got {list(self.sizes)}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def L(self) -> int:
        return sum(self.sizes)

    @property
    def T(self) -> int:
        return len(self.sizes)

    @property
    def s_max(self) -> int:
        return max(self.sizes)

    @cached_property
    def cumulative(self) -> tuple[int, ...]:
        """``|M_t|`` for t = 1..T."""
        return tuple(itertools.accumulate(self.sizes))

    def n_trajectories(self) -> int:
        out = math.factorial(self.L)
        for s in self.sizes:
            out //= math.factorial(s)
        return out

    def block_labels(self) -> np.ndarray:
        """Length-L array ``1,..,1,2,..,T`` with label t repeated ``s_t`` times."""
        return np.repeat(np.arange(1, self.T + 1, dtype=np.int32), self.sizes)

    def to_json(self) -> str:
        return json.dumps(list(self.sizes))

    @classmethod
    def from_json(cls, text: str, L: int | None = None) -> "MaskSchedule":
        sizes = json.loads(text)
        return validate_schedule(sizes, sum(sizes) if L is None else L)


def validate_schedule(sizes: Sequence[int], L: int) -> MaskSchedule:
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ScheduleInvalid(f"nonpositive mask size in {sizes}")
    if sum(sizes) != L:
        raise ScheduleInvalid(f"schedule {sizes} sums to {sum(sizes)}, expected L={L}")
    return MaskSchedule(tuple(sizes))


def balanced_schedule(L: int, T: int) -> MaskSchedule:
    """Sizes in ``{floor(L/T), ceil(L/T)}``, the larger ones first."""
    if not 1 <= T <= L:
        raise InvalidArgument(f"need 1 <= T <= L, got T={T}, L={L}")
    q, r = divmod(L, T)
    return MaskSchedule(tuple([q + 1] * r + [q] * (T - r)))


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def lower_bound_schedule(L: int, s_max: int, rng: np.random.Generator) -> MaskSchedule:
    """Random schedule with every size drawn uniformly from ``{s_max, s_max/2}``.

    Sizes are drawn i.i.d. while the running total is at most ``L - s_max``;
    whatever remains (0 or ``s_max/2`` by divisibility) is closed with a
    half-size step so the schedule sums to ``L`` exactly.
    """
    if s_max < 2 or not is_power_of_two(s_max):
        raise InvalidArgument(f"s_max must be a power of two >= 2, got {s_max}")
    half = s_max // 2
    if L % half or s_max > L:
        raise InvalidArgument(f"L={L} must be divisible by s_max/2={half} and >= s_max")
    sizes: list[int] = []
    total = 0
    while total <= L - s_max:
        s = s_max if rng.random() < 0.5 else half
        sizes.append(s)
        total += s
    while total < L:
        sizes.append(half)
        total += half
    return MaskSchedule(tuple(sizes))


@dataclass(frozen=True)
class RandomLowerBoundSchedule:
    """Schedule law of :func:`lower_bound_schedule`, redrawn per Monte-Carlo sample."""

    L: int
    s_max: int

    def __post_init__(self):
        lower_bound_schedule(self.L, self.s_max, np.random.default_rng(0))

    def draw(self, rng: np.random.Generator) -> MaskSchedule:
        return lower_bound_schedule(self.L, self.s_max, rng)


@dataclass(frozen=True)
class MaskTrajectory:
    """Nested mask sets ``M_1 <= ... <= M_T = [L]`` stored as sorted increments."""

    increments: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        incs = tuple(tuple(sorted(int(i) for i in d)) for d in self.increments)
        object.__setattr__(self, "increments", incs)
        flat = [i for d in incs for i in d]
        if sorted(flat) != list(range(len(flat))):
            raise InvalidArgument("trajectory increments must partition [L]")
        if any(len(d) == 0 for d in incs):
            raise InvalidArgument("every trajectory increment must be nonempty")

    @property
    def schedule(self) -> MaskSchedule:
        return MaskSchedule(tuple(len(d) for d in self.increments))

    @property
    def L(self) -> int:
        return sum(len(d) for d in self.increments)

    @property
    def T(self) -> int:
        return len(self.increments)

    @cached_property
    def labels(self) -> np.ndarray:
        """``labels[i] = t`` for ``i in D_t``; W_t is ``labels > t``."""
        out = np.empty(self.L, dtype=np.int32)
        for t, d in enumerate(self.increments, start=1):
            out[list(d)] = t
        return out

    def mask_set(self, t: int) -> tuple[int, ...]:
        """M_t (M_0 is empty)."""
        return tuple(int(i) for i in np.flatnonzero(self.labels <= t))

    def unmasked_set(self, t: int) -> tuple[int, ...]:
        """W_t = complement of M_t."""
        return tuple(int(i) for i in np.flatnonzero(self.labels > t))

    def revealed(self, t: int) -> tuple[int, ...]:
        """D_t, the positions revealed at reverse step t."""
        return self.increments[t - 1]

    def to_json(self) -> str:
        return json.dumps([list(d) for d in reversed(self.increments)])

    @classmethod
    def from_json(cls, text: str) -> "MaskTrajectory":
        return cls(tuple(tuple(d) for d in reversed(json.loads(text))))

    @classmethod
    def from_labels(cls, labels) -> "MaskTrajectory":
        labels = np.asarray(labels)
        T = int(labels.max())
        return cls(tuple(tuple(np.flatnonzero(labels == t)) for t in range(1, T + 1)))


def sample_trajectory(schedule: MaskSchedule, rng: np.random.Generator) -> MaskTrajectory:
    perm = rng.permutation(schedule.L)
    bounds = (0,) + schedule.cumulative
    return MaskTrajectory(tuple(tuple(perm[a:b]) for a, b in zip(bounds, bounds[1:])))


def sample_labels(schedule: MaskSchedule, n: int, rng: np.random.Generator) -> np.ndarray:
    """Batch of ``n`` trajectories under the forward law, as an (n, L) label array."""
    base = np.tile(schedule.block_labels(), (n, 1))
    return rng.permuted(base, axis=1)


def enumerate_trajectories(schedule: MaskSchedule) -> Iterator[tuple[MaskTrajectory, float]]:
    """Every trajectory of ``schedule`` with its probability under the forward law."""
    count = schedule.n_trajectories()
    if count > TRAJECTORY_GUARD:
        raise TooLarge(f"{count} trajectories exceeds guard {TRAJECTORY_GUARD}")
    prob = 1.0 / count

    def rec(remaining: tuple[int, ...], sizes: tuple[int, ...]):
        if not sizes:
            yield ()
            return
        for chosen in itertools.combinations(remaining, sizes[0]):
            rest = tuple(i for i in remaining if i not in chosen)
            for tail in rec(rest, sizes[1:]):
                yield (chosen,) + tail

    for incs in rec(tuple(range(schedule.L)), schedule.sizes):
        yield MaskTrajectory(incs), prob


def compositions(L: int, max_T: int | None = None) -> Iterator[MaskSchedule]:
    """All schedules of length L (ordered compositions), optionally with T <= max_T."""
    for cuts in itertools.product((False, True), repeat=L - 1):
        sizes, run = [], 1
        for cut in cuts:
            if cut:
                sizes.append(run)
                run = 1
            else:
                run += 1
        sizes.append(run)
        if max_T is None or len(sizes) <= max_T:
            yield MaskSchedule(tuple(sizes))
