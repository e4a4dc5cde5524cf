"""Mesh adaptive direct search over the mixed hyperparameter space.

Each iteration polls the incumbent along a randomized maximal positive
basis scaled by the current mesh size, appends the categorical neighbors,
optionally sorts the candidates with a low-fidelity surrogate, and
evaluates them opportunistically (stop at the first improvement).  The
mesh doubles after a success (up to its initial size) and halves after a
failure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .early_stop import BaselineEnvelope, StoppingMonitor, update_baseline
from .ledger import KIND_FULL, KIND_RANKING, KIND_SURROGATE, LedgerRecord
from .space import (
    Configuration,
    Slot,
    SlotSpec,
    SpaceBounds,
    mesh_steps,
    neighbors,
    quantitative_slots,
    serialize,
    slot_arrays,
    snap_array,
    to_vector,
    validate,
    with_vector,
)
from .surrogates import RankedCandidate, SurrogateSpec, rank_candidates
from .util import hash_u64

logger = logging.getLogger(__name__)

ORIGIN_DIRECTION = "poll-direction"
ORIGIN_NEIGHBOR = "categorical-neighbor"
ORIGIN_INITIAL = "initial"
ORIGIN_SEARCH = "search"

WORST_SCORE = 0.0


@dataclass(frozen=True)
class Mesh:
    """Mesh size state: per-slot step = base step * 2**index.

    The base step for a slot is one tenth of its internal range (at least
    the granularity); ``index`` never exceeds ``max_index`` (its starting
    value) and a campaign terminates once it falls below the configured
    minimum.
    """

    index: int = 0
    max_index: int = 0

    def delta_for(self, spec: SlotSpec) -> float:
        span = spec.internal_upper - spec.internal_lower
        base = max(spec.granularity, span / 10.0)
        return base * 2.0**self.index

    def delta_vector(self, slots: Sequence[Slot]) -> np.ndarray:
        return np.array([self.delta_for(s.spec) for s in slots])

    def max_delta(self, slots: Sequence[Slot]) -> float:
        return float(self.delta_vector(slots).max())


@dataclass(frozen=True)
class IterationOutcome:
    success: bool
    evaluations_spent: float
    new_incumbent: tuple[Configuration, float] | None = None

    def __post_init__(self) -> None:
        if self.success != (self.new_incumbent is not None):
            raise ValueError("success iff a new incumbent is present")

    @property
    def status(self) -> str:
        return "success" if self.success else "failure"


@dataclass(frozen=True)
class PollCandidate:
    config: Configuration
    origin: str


@dataclass(frozen=True)
class PollSet:
    candidates: tuple[PollCandidate, ...]
    directions: np.ndarray


def poll_directions(n: int, seed: int) -> np.ndarray:
    """Maximal positive basis: a seeded random orthogonal set and its negation.

    Returns an (n, 2n) matrix whose columns are the directions.  The QR
    sign fix makes the basis a deterministic function of the seed; columns
    are rescaled to unit max-component so each direction advances its
    dominant slot by a full mesh step.
    """
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if n > 1:
        q = q / np.abs(q).max(axis=0, keepdims=True)
    return np.hstack([q, -q])


def generate_poll(
    incumbent: Configuration,
    mesh: Mesh,
    seed: int,
    bounds: SpaceBounds,
    include_neighbors: bool = True,
) -> PollSet:
    """Poll set around the incumbent: 2n direction points plus categorical neighbors.

    Every candidate is projected to the current mesh and clipped into
    bounds; duplicates (including copies of the incumbent) are dropped.
    Deterministic for a fixed (incumbent, mesh, seed).
    """
    slots = quantitative_slots(bounds, incumbent.n_conv, incumbent.n_fc)
    n = len(slots)
    directions = poll_directions(n, seed)
    deltas = mesh.delta_vector(slots)
    steps = mesh_steps(slots, deltas)
    _, lowers, uppers = slot_arrays(slots)
    x = to_vector(incumbent, bounds)
    points = x[:, None] + deltas[:, None] * directions

    seen = {serialize(incumbent)}
    candidates: list[PollCandidate] = []
    for j in range(points.shape[1]):
        vec = snap_array(points[:, j], steps, lowers, uppers)
        config = with_vector(incumbent, bounds, vec)
        key = serialize(config)
        if key not in seen:
            seen.add(key)
            candidates.append(PollCandidate(config, ORIGIN_DIRECTION))
    if include_neighbors:
        for neighbor in neighbors(incumbent, bounds):
            n_slots = quantitative_slots(bounds, neighbor.n_conv, neighbor.n_fc)
            n_deltas = mesh.delta_vector(n_slots)
            _, n_lo, n_hi = slot_arrays(n_slots)
            vec = snap_array(to_vector(neighbor, bounds), mesh_steps(n_slots, n_deltas), n_lo, n_hi)
            config = with_vector(neighbor, bounds, vec)
            key = serialize(config)
            if key not in seen:
                seen.add(key)
                candidates.append(PollCandidate(config, ORIGIN_NEIGHBOR))
    return PollSet(tuple(candidates), directions)


def update_mesh(mesh: Mesh, outcome: IterationOutcome) -> Mesh:
    """Coarsen after a success (capped at the starting index), refine after a failure."""
    if outcome.success:
        return Mesh(min(mesh.index + 1, mesh.max_index), mesh.max_index)
    return Mesh(mesh.index - 1, mesh.max_index)


def opportunistic_evaluate(
    candidates: Sequence,
    incumbent_score: float,
    evaluator: Callable,
) -> IterationOutcome:
    """Evaluate candidates in order, stopping at the first strict improvement.

    The evaluator maps a candidate to its score; an evaluator failure marks
    that candidate with the worst score and evaluation continues.  Each
    call costs one full evaluation.
    """
    spent = 0.0
    for candidate in candidates:
        try:
            score = float(evaluator(candidate))
        except Exception as exc:  # noqa: BLE001 - worst-score contract
            logger.warning("candidate evaluation failed: %s", exc)
            score = WORST_SCORE
        spent += 1.0
        if score > incumbent_score:
            return IterationOutcome(True, spent, (candidate.config, score))
    return IterationOutcome(False, spent)


# -- campaign loop -----------------------------------------------------------


@dataclass
class RunPlan:
    """Everything the campaign loop needs besides the initial point and budget."""

    bounds: SpaceBounds
    seed: int
    surrogate: SurrogateSpec
    stop_mode: str
    milestones: tuple[int, ...]
    margins: tuple[float, ...]
    full_eval: Callable  # (config, monitor | None) -> EvaluationResult
    fidelity_eval: Callable  # (config, epochs, data_fraction) -> float
    charge_ranking: bool = True
    min_mesh_index: int = -50
    max_iterations: int | None = None
    chance_level: float = 0.1
    search_hook: Callable | None = None
    scheduler_patience: int = 25
    scheduler_factor: float = 0.1
    scheduler_floor: float = 1e-8


@dataclass
class CampaignState:
    records: list[LedgerRecord] = field(default_factory=list)
    cumulative: float = 0.0
    incumbent: Configuration | None = None
    incumbent_score: float = -math.inf
    envelope: BaselineEnvelope | None = None
    mesh: Mesh = field(default_factory=Mesh)
    next_iteration: int = 0


@dataclass(frozen=True)
class CampaignResult:
    records: tuple[LedgerRecord, ...]
    best_config: Configuration
    best_score: float
    total_cost: float
    iterations: int
    termination: str
    final_mesh_index: int


def iteration_seed(seed: int, iteration: int) -> int:
    return hash_u64("poll-directions", seed, iteration)


def _make_monitor(plan: RunPlan, envelope: BaselineEnvelope) -> StoppingMonitor | None:
    if plan.stop_mode == "none":
        return None
    return StoppingMonitor(
        plan.stop_mode,
        envelope,
        patience=plan.scheduler_patience,
        lr_factor=plan.scheduler_factor,
        lr_floor=plan.scheduler_floor,
        chance_level=plan.chance_level,
    )


def _full_evaluation(state: CampaignState, plan: RunPlan, config: Configuration, iteration: int) -> float:
    """Run one full evaluation, charge it, record it, update incumbent/baseline."""
    from .blackbox import FAILED_REASON, EvaluationResult
    from .early_stop import TrainingHistory

    monitor = _make_monitor(plan, state.envelope)
    try:
        result = plan.full_eval(config, monitor)
    except Exception as exc:  # noqa: BLE001 - failed-candidate contract
        logger.warning("full evaluation raised: %s", exc)
        result = EvaluationResult(TrainingHistory(), WORST_SCORE, 0, FAILED_REASON, 0.0)
    state.cumulative += 1.0
    improved = result.final_val_accuracy > state.incumbent_score
    state.records.append(
        LedgerRecord(
            record_index=len(state.records),
            kind=KIND_FULL,
            config=serialize(config),
            score=result.final_val_accuracy,
            epochs_used=result.epochs_used,
            stop_reason=result.stop_reason,
            charged_cost=1.0,
            cumulative_cost=state.cumulative,
            incumbent=improved,
            iteration=iteration,
            mesh_index=state.mesh.index,
        )
    )
    if not result.failed:
        state.envelope = update_baseline(
            state.envelope, result.history, result.final_val_accuracy, state.incumbent_score
        )
    if improved:
        state.incumbent = config
        state.incumbent_score = result.final_val_accuracy
    return result.final_val_accuracy


def _record_ranking(state: CampaignState, plan: RunPlan, ranked, iteration: int) -> None:
    charge = plan.surrogate.cost_ratio if plan.charge_ranking else 0.0
    for cand in ranked.candidates:
        state.cumulative += charge
        state.records.append(
            LedgerRecord(
                record_index=len(state.records),
                kind=KIND_SURROGATE,
                config=serialize(cand.config),
                score=cand.estimate,
                epochs_used=plan.surrogate.epoch_budget,
                stop_reason="none",
                charged_cost=charge,
                cumulative_cost=state.cumulative,
                incumbent=False,
                iteration=iteration,
                mesh_index=state.mesh.index,
            )
        )
    top = ranked.candidates[0]
    state.records.append(
        LedgerRecord(
            record_index=len(state.records),
            kind=KIND_RANKING,
            config=serialize(top.config),
            score=top.estimate,
            epochs_used=0,
            stop_reason="none",
            charged_cost=0.0,
            cumulative_cost=state.cumulative,
            incumbent=False,
            iteration=iteration,
            mesh_index=state.mesh.index,
        )
    )


def start_state(initial: Configuration, plan: RunPlan) -> CampaignState:
    problems = validate(initial, plan.bounds)
    if problems:
        raise ValueError("invalid initial configuration: " + "; ".join(problems))
    state = CampaignState(
        envelope=BaselineEnvelope(None, plan.milestones, plan.margins),
        mesh=Mesh(0, 0),
        incumbent=initial,
    )
    return state


def run_campaign(initial: Configuration, budget_bbe: int, plan: RunPlan) -> CampaignResult:
    """Full campaign: initial evaluation, then poll iterations until the
    budget runs out, the mesh bottoms out, or the iteration cap is hit."""
    if budget_bbe <= 0:
        raise ValueError("budget_bbe must be positive")
    state = start_state(initial, plan)
    _full_evaluation(state, plan, initial, iteration=0)
    state.next_iteration = 1
    return continue_campaign(state, budget_bbe, plan)


def continue_campaign(state: CampaignState, budget_bbe: float, plan: RunPlan) -> CampaignResult:
    """Iterate from an existing state (used directly by resume)."""
    termination = "budget"
    while True:
        if state.mesh.index < plan.min_mesh_index:
            termination = "mesh"
            break
        if plan.max_iterations is not None and state.next_iteration > plan.max_iterations:
            termination = "iterations"
            break
        k = state.next_iteration
        poll = generate_poll(state.incumbent, state.mesh, iteration_seed(plan.seed, k), plan.bounds)
        ranking_cost = (
            len(poll.candidates) * plan.surrogate.cost_ratio
            if (not plan.surrogate.disabled and plan.charge_ranking)
            else 0.0
        )
        if state.cumulative + ranking_cost + 1.0 > budget_bbe + 1e-9:
            termination = "budget"
            break

        outcome: IterationOutcome | None = None
        if plan.search_hook is not None:
            outcome = _search_step(state, plan, k, budget_bbe)
        if outcome is None or not outcome.success:
            poll_outcome = _poll_step(state, plan, poll, k, budget_bbe)
            if outcome is not None:
                poll_outcome = IterationOutcome(
                    poll_outcome.success,
                    poll_outcome.evaluations_spent + outcome.evaluations_spent,
                    poll_outcome.new_incumbent,
                )
            outcome = poll_outcome
        state.mesh = update_mesh(state.mesh, outcome)
        state.next_iteration += 1

    best = state.incumbent
    return CampaignResult(
        records=tuple(state.records),
        best_config=best,
        best_score=state.incumbent_score,
        total_cost=state.cumulative,
        iterations=state.next_iteration - 1,
        termination=termination,
        final_mesh_index=state.mesh.index,
    )


def _search_step(state: CampaignState, plan: RunPlan, k: int, budget: float) -> IterationOutcome | None:
    """Optional search phase: evaluate hook proposals opportunistically."""
    from .space import project_to_mesh

    proposals = plan.search_hook(state.incumbent, state.mesh, k)
    if not proposals:
        return None
    projected = []
    for config in proposals:
        config = project_to_mesh(config, state.mesh, plan.bounds)
        if not validate(config, plan.bounds):
            projected.append(PollCandidate(config, ORIGIN_SEARCH))
    affordable = int(math.floor(budget - state.cumulative + 1e-9))
    if affordable <= 0 or not projected:
        return None
    start_score = state.incumbent_score
    return opportunistic_evaluate(
        projected[:affordable],
        start_score,
        lambda cand: _full_evaluation(state, plan, cand.config, k),
    )


def _poll_step(state: CampaignState, plan: RunPlan, poll: PollSet, k: int, budget: float) -> IterationOutcome:
    if not poll.candidates:
        return IterationOutcome(False, 0.0)
    if plan.surrogate.disabled:
        ordered = tuple(RankedCandidate(c.config, c.origin, None) for c in poll.candidates)
    else:
        ranked = rank_candidates(poll, plan.surrogate, plan.fidelity_eval)
        _record_ranking(state, plan, ranked, k)
        ordered = ranked.candidates
    affordable = int(math.floor(budget - state.cumulative + 1e-9))
    start_score = state.incumbent_score
    return opportunistic_evaluate(
        ordered[:affordable],
        start_score,
        lambda cand: _full_evaluation(state, plan, cand.config, k),
    )
