"""Multi-variant deployment pool and continue-rate statistics.

Each episode gets a uniformly drawn variant; the end-of-episode choice is
the outcome. Rates carry binomial standard errors, and factor effects
compare variants that differ in exactly one factor.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .scoring.rank import DecodingControl

FACTOR_NAMES = ("train_data", "size_tag", "negative_context", "decoding_control")


@dataclass(frozen=True)
class VariantFactors:
    train_data: str = "seed"  # "seed" | "seed+wild"
    size_tag: str = "base"
    negative_context: bool = True
    decoding_control: bool = False

    def __post_init__(self) -> None:
        if self.train_data not in ("seed", "seed+wild"):
            raise ValueError(f"unknown train_data level {self.train_data!r}")

    def as_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in FACTOR_NAMES}

    def level(self, factor: str) -> Any:
        if factor not in FACTOR_NAMES:
            raise ValueError(f"unknown factor {factor!r}")
        return getattr(self, factor)

    def matching_key(self, excluding: str) -> tuple:
        return tuple(getattr(self, n) for n in FACTOR_NAMES if n != excluding)


@dataclass
class ModelVariant:
    variant_id: str
    factors: VariantFactors = VariantFactors()
    checkpoint_path: str | None = None
    model: Any = None
    control: DecodingControl = field(default_factory=DecodingControl)
    episodes_served: int = 0
    continues: int = 0

    def __post_init__(self) -> None:
        if self.continues > self.episodes_served:
            raise ValueError("continues cannot exceed episodes_served")


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    stderr: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("estimate needs n >= 1")


def proportion_estimate(successes: int, n: int) -> RateEstimate:
    rate = successes / n
    return RateEstimate(rate=rate, stderr=math.sqrt(rate * (1.0 - rate) / n), n=n)


class ModelPool:
    """Active variants plus every variant ever deployed.

    Retired variants keep accepting outcomes: an episode that started before
    a swap finishes on its old snapshot and still reports its choice.
    """

    def __init__(self, variants: list[ModelVariant]):
        if not variants:
            raise ValueError("pool needs at least one variant")
        ids = [v.variant_id for v in variants]
        if len(set(ids)) != len(ids):
            raise ValueError("variant ids must be unique")
        self._registry: dict[str, ModelVariant] = {v.variant_id: v for v in variants}
        self._active: list[str] = list(ids)
        self._lock = threading.Lock()

    @property
    def active_variants(self) -> list[ModelVariant]:
        return [self._registry[vid] for vid in self._active]

    def variant(self, variant_id: str) -> ModelVariant:
        try:
            return self._registry[variant_id]
        except KeyError:
            raise KeyError(f"unknown variant {variant_id!r}") from None

    def assign(self, rng: np.random.Generator) -> ModelVariant:
        with self._lock:
            if not self._active:
                raise ValueError("no active variants")
            chosen = self._registry[self._active[int(rng.integers(len(self._active)))]]
            chosen.episodes_served += 1
            return chosen

    def record_outcome(self, variant_id: str, continued: bool) -> None:
        with self._lock:
            variant = self.variant(variant_id)
            if continued:
                variant.continues += 1
            if variant.continues > variant.episodes_served:
                raise RuntimeError(
                    f"variant {variant_id}: more continues than episodes served"
                )

    def replay(self, variant_id: str, continued: bool) -> None:
        """Re-apply one logged episode outcome during crash recovery.

        Bumps both counters at once since the original assign was already
        persisted as a stored episode.
        """
        with self._lock:
            variant = self.variant(variant_id)
            variant.episodes_served += 1
            if continued:
                variant.continues += 1

    def continue_rate(self, variant_id: str) -> RateEstimate:
        variant = self.variant(variant_id)
        if variant.episodes_served < 1:
            raise ValueError(f"variant {variant_id} has served no episodes")
        return proportion_estimate(variant.continues, variant.episodes_served)

    def factor_effect(self, factor: str, level_a: Any, level_b: Any) -> RateEstimate:
        """Mean continue-rate delta (b minus a) over exactly-matched pairs."""
        by_key_a: dict[tuple, ModelVariant] = {}
        by_key_b: dict[tuple, ModelVariant] = {}
        for v in self._registry.values():
            lvl = v.factors.level(factor)
            if lvl == level_a:
                by_key_a[v.factors.matching_key(factor)] = v
            elif lvl == level_b:
                by_key_b[v.factors.matching_key(factor)] = v
        keys = sorted(set(by_key_a) & set(by_key_b), key=repr)
        if not keys:
            raise ValueError(
                f"no variant pairs differ only in {factor} ({level_a!r} vs {level_b!r})"
            )
        deltas = []
        var_sum = 0.0
        total_n = 0
        for key in keys:
            ra = self.continue_rate(by_key_a[key].variant_id)
            rb = self.continue_rate(by_key_b[key].variant_id)
            deltas.append(rb.rate - ra.rate)
            var_sum += ra.stderr**2 + rb.stderr**2
            total_n += ra.n + rb.n
        mean_delta = sum(deltas) / len(deltas)
        stderr = math.sqrt(var_sum) / len(deltas)
        return RateEstimate(rate=mean_delta, stderr=stderr, n=total_n)

    def swap(self, new_variants: list[ModelVariant]) -> None:
        """Atomic replacement of the active set; retired variants stay queryable."""
        if not new_variants:
            raise ValueError("cannot swap to an empty pool")
        ids = [v.variant_id for v in new_variants]
        if len(set(ids)) != len(ids):
            raise ValueError("variant ids must be unique")
        with self._lock:
            for v in new_variants:
                if v.variant_id in self._registry:
                    raise ValueError(f"variant id {v.variant_id!r} already exists")
            for v in new_variants:
                self._registry[v.variant_id] = v
            self._active = ids

    def total_episodes_served(self) -> int:
        return sum(v.episodes_served for v in self._registry.values())

    def metrics(self) -> dict:
        rows = []
        for vid in sorted(self._registry):
            v = self._registry[vid]
            row = {
                "variant_id": vid,
                "active": vid in self._active,
                "factors": v.factors.as_dict(),
                "episodes_served": v.episodes_served,
                "continues": v.continues,
            }
            if v.episodes_served > 0:
                est = self.continue_rate(vid)
                row["continue_rate"] = est.rate
                row["stderr"] = est.stderr
            rows.append(row)
        return {
            "variants": rows,
            "total_episodes_served": self.total_episodes_served(),
            "uncertainty": "one binomial standard error",
        }
