"""Offspring laws for the branching dynamics.

A law is an explicit finite pmf, optionally followed by a geometric tail that
carries the leftover mass: ``P(Z = K + 1 + j) = (1 - sum(pmf)) * (1 - r) * r**j``
where ``K`` is the largest explicit value. Geometric tails are the only infinite
support admitted, so a finite exponential moment holds by construction.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

NORMALIZATION_TOL = 1e-12


class OffspringError(ValueError):
    pass


class NotNormalized(OffspringError):
    pass


class Supercritical(OffspringError):
    pass


class DegenerateOffspring(OffspringError):
    pass


class NoExponentialMoment(OffspringError):
    pass


@dataclass(frozen=True, eq=False)
class OffspringDistribution:
    """Validated offspring law plus the per-individual event rate.

    Build instances through :func:`validate` (or :func:`brw_offspring`); the
    constructor itself does not check the branching hypotheses.
    """

    pmf: Mapping[int, float]
    tail_ratio: float | None = None
    event_rate: float = 1.0
    mean: float = field(init=False)
    _values: tuple = field(init=False, repr=False)
    _cumulative: tuple = field(init=False, repr=False)

    def __post_init__(self):
        pmf = {int(k): float(p) for k, p in sorted(self.pmf.items()) if p > 0}
        object.__setattr__(self, "pmf", pmf)
        values = tuple(pmf)
        cum = tuple(np.cumsum([pmf[k] for k in values]).tolist())
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_cumulative", cum)
        mean = sum(k * p for k, p in pmf.items())
        if self.tail_ratio is not None and self.tail_mass > 0:
            r = self.tail_ratio
            mean += self.tail_mass * (self.support_max_explicit + 1 + r / (1 - r))
        object.__setattr__(self, "mean", mean)

    @property
    def support_max_explicit(self) -> int:
        return max(self.pmf) if self.pmf else -1

    @property
    def tail_mass(self) -> float:
        if self.tail_ratio is None:
            return 0.0
        return max(0.0, 1.0 - sum(self.pmf.values()))

    @property
    def support_max(self) -> int | None:
        """Largest possible offspring count, ``None`` for an infinite tail."""
        if self.tail_mass > 0:
            return None
        return self.support_max_explicit

    def prob(self, k: int) -> float:
        if k in self.pmf:
            return self.pmf[k]
        K = self.support_max_explicit
        if self.tail_mass > 0 and k > K:
            r = self.tail_ratio
            return self.tail_mass * (1 - r) * r ** (k - K - 1)
        return 0.0

    def pmf_array(self, kmax: int) -> np.ndarray:
        return np.array([self.prob(k) for k in range(kmax + 1)])

    def tail_beyond(self, kmax: int) -> float:
        """``P(Z > kmax)``."""
        explicit = sum(p for k, p in self.pmf.items() if k > kmax)
        if self.tail_mass > 0:
            K = self.support_max_explicit
            r = self.tail_ratio
            explicit += self.tail_mass * (r ** (kmax - K) if kmax >= K else 1.0)
        return explicit

    def sample(self, rng) -> int:
        u = rng.random()
        cum = self._cumulative
        i = bisect_right(cum, u)
        if i < len(cum):
            return self._values[i]
        tail = self.tail_mass
        if tail <= 0:
            # u landed in the rounding gap above the last cumulative value
            return self._values[-1]
        v = min((u - cum[-1]) / tail, 1.0 - 1e-16) if cum else u
        j = int(math.floor(math.log1p(-v) / math.log(self.tail_ratio)))
        return self.support_max_explicit + 1 + j

    def to_dict(self) -> dict:
        return {
            "pmf": {str(k): p for k, p in self.pmf.items()},
            "tail_ratio": self.tail_ratio,
            "event_rate": self.event_rate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping, check_hypotheses: bool = True) -> "OffspringDistribution":
        pmf = {int(k): float(v) for k, v in data["pmf"].items()}
        return validate(
            pmf,
            data.get("tail_ratio"),
            event_rate=float(data.get("event_rate", 1.0)),
            check_hypotheses=check_hypotheses,
        )

    @classmethod
    def from_json(cls, text: str, check_hypotheses: bool = True) -> "OffspringDistribution":
        return cls.from_dict(json.loads(text), check_hypotheses=check_hypotheses)


def validate(
    pmf: Mapping[int, float],
    tail_ratio: float | None = None,
    event_rate: float = 1.0,
    *,
    check_hypotheses: bool = True,
) -> OffspringDistribution:
    """Check an offspring law and return it as an :class:`OffspringDistribution`.

    With ``check_hypotheses=False`` only normalization and the tail are checked;
    that mode exists for degenerate test laws such as point masses.
    """
    for k, p in pmf.items():
        if int(k) < 0 or not math.isfinite(p) or p < 0:
            raise ValueError(f"invalid pmf entry {k!r}: {p!r}")
    if not event_rate > 0:
        raise ValueError("event_rate must be positive")
    total = sum(float(p) for p in pmf.values())
    if tail_ratio is not None:
        if not tail_ratio < 1:
            raise NoExponentialMoment(f"tail ratio {tail_ratio} >= 1")
        if not tail_ratio > 0:
            raise ValueError("tail ratio must lie in (0, 1)")
        if total > 1 + NORMALIZATION_TOL:
            raise NotNormalized(f"explicit mass {total} exceeds 1")
    elif abs(total - 1) > NORMALIZATION_TOL:
        raise NotNormalized(f"probabilities sum to {total}")
    dist = OffspringDistribution(dict(pmf), tail_ratio, float(event_rate))
    if check_hypotheses:
        if not dist.mean < 1:
            raise Supercritical(f"mean offspring {dist.mean} is not < 1")
        if dist.prob(0) + dist.prob(1) >= 1:
            raise DegenerateOffspring("P(Z=0) + P(Z=1) must be < 1")
    return dist


def brw_offspring(lam: float) -> OffspringDistribution:
    """Population-size projection of the branching random walk.

    Births at rate ``lam`` and deaths at rate 1 per particle compete, so each
    particle has an event at rate ``1 + lam``, which is a birth (one new
    particle, size +1, i.e. two "offspring") with probability ``lam/(1+lam)``.
    """
    if not 0 < lam < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return validate({0: 1 / (1 + lam), 2: lam / (1 + lam)}, event_rate=1 + lam)
