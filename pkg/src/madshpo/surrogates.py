"""Static low-fidelity surrogates used to rank poll candidates.

Each surrogate trains a candidate briefly (fewer epochs and/or a data
subset) and charges a fixed fraction of one full blackbox evaluation.
Rankings are static: nothing is refit during a run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

from .space import Configuration

logger = logging.getLogger(__name__)

WORST_SCORE = 0.0

# kind -> (epoch budget, data fraction, cost ratio relative to one full evaluation)
SURROGATE_TABLE: dict[str, tuple[int, float, float]] = {
    "r1": (25, 1.0, 0.125),
    "r2": (10, 1.0, 0.05),
    "r3": (200, 0.2, 0.20),
    "r4": (200, 0.1, 0.10),
    "oracle": (200, 1.0, 1.0),
    "none": (0, 1.0, 0.0),
}


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str
    epoch_budget: int
    data_fraction: float
    cost_ratio: float

    def __post_init__(self) -> None:
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError("data_fraction must lie in (0, 1]")
        if self.cost_ratio < 0.0 or self.cost_ratio > 1.0:
            raise ValueError("cost_ratio must lie in [0, 1]")
        if self.kind in SURROGATE_TABLE:
            expected = SURROGATE_TABLE[self.kind]
            if (self.epoch_budget, self.data_fraction, self.cost_ratio) != expected:
                raise ValueError(
                    f"{self.kind} must use (epochs, fraction, cost) = {expected}"
                )
        elif self.kind != "custom":
            raise ValueError(f"unknown surrogate kind {self.kind!r}")

    @property
    def disabled(self) -> bool:
        return self.kind == "none"


def surrogate_by_name(name: str) -> SurrogateSpec:
    """Look up one of the named surrogates (r1..r4, oracle, none)."""
    key = name.lower()
    if key not in SURROGATE_TABLE:
        raise ValueError(f"unknown surrogate {name!r} (expected one of {sorted(SURROGATE_TABLE)})")
    epochs, fraction, cost = SURROGATE_TABLE[key]
    return SurrogateSpec(key, epochs, fraction, cost)


def custom_surrogate(epoch_budget: int, data_fraction: float, cost_ratio: float) -> SurrogateSpec:
    if epoch_budget < 1:
        raise ValueError("epoch_budget must be >= 1")
    return SurrogateSpec("custom", epoch_budget, data_fraction, cost_ratio)


def surrogate_cost(spec: SurrogateSpec) -> float:
    """Fractional blackbox-evaluation cost of one surrogate training."""
    return spec.cost_ratio


# Callback contract: (config, epochs, data_fraction) -> estimated accuracy.
FidelityEval = Callable[[Configuration, int, float], float]


def estimate(spec: SurrogateSpec, config: Configuration, blackbox: FidelityEval) -> float:
    """Low-fidelity accuracy estimate; failures score worst and are logged.

    Surrogate trainings never apply early stopping: the truncated budget is
    the whole point of the surrogate.
    """
    if spec.disabled:
        raise ValueError("cannot estimate with the disabled surrogate")
    try:
        return float(blackbox(config, spec.epoch_budget, spec.data_fraction))
    except Exception as exc:  # noqa: BLE001 - worst-score contract
        logger.warning("surrogate estimate failed: %s", exc)
        return WORST_SCORE


@dataclass(frozen=True)
class RankedCandidate:
    config: Configuration
    origin: str
    estimate: float | None


@dataclass(frozen=True)
class RankedPoll:
    """Poll candidates sorted best-estimate-first, plus the charged cost."""

    candidates: tuple[RankedCandidate, ...]
    cost: float


def rank_candidates(poll, spec: SurrogateSpec, blackbox: FidelityEval) -> RankedPoll:
    """Estimate every candidate and sort best-first (stable on ties).

    Charges ``len(poll) * cost_ratio`` fractional evaluations; the disabled
    surrogate returns the original order at zero cost.
    """
    items: Sequence = poll.candidates if hasattr(poll, "candidates") else poll
    if not items:
        raise ValueError("poll is empty")
    if spec.disabled:
        ranked = tuple(
            RankedCandidate(c.config, c.origin, None) for c in items
        )
        return RankedPoll(ranked, 0.0)
    scored = [
        RankedCandidate(c.config, c.origin, estimate(spec, c.config, blackbox))
        for c in items
    ]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].estimate, i))
    return RankedPoll(tuple(scored[i] for i in order), len(scored) * spec.cost_ratio)
