"""Campaign settings, persistence, and resume-by-replay.

A campaign writes ``ledger.csv`` (with its settings as header comments)
and ``summary.json`` into its output directory.  Resuming truncates the
ledger back to the last completed iteration boundary and replays forward;
because every source of randomness is derived from the seed, the final
file is byte-identical to an uninterrupted run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

from . import mads
from .blackbox import (
    EvaluationRequest,
    ProcessAdapter,
    SimulatedBlackbox,
    external_evaluate,
    simulate_curve,
)
from .early_stop import DEFAULT_MARGINS, DEFAULT_MILESTONES, BaselineEnvelope, MODES, update_baseline
from .ledger import KIND_FULL, LedgerRecord, read_ledger, write_ledger
from .space import Configuration, SpaceBounds, default_bounds, deserialize, preset_config, serialize, validate
from .surrogates import SurrogateSpec, custom_surrogate, surrogate_by_name

LEDGER_NAME = "ledger.csv"
SUMMARY_NAME = "summary.json"
FORMAT_VERSION = "1"


@dataclass(frozen=True)
class CampaignSettings:
    preset: str = "p1"
    initial: Configuration | None = None
    bbe_budget: int = 200
    max_epochs: int = 200
    stop_mode: str = "scheduler+baseline"
    surrogate: str = "r4"
    surrogate_custom: tuple[int, float, float] | None = None
    seed: int = 0
    out_dir: Path = Path("campaign-out")
    backend: str = "simulated"
    external_command: str | None = None
    charge_ranking: bool = True
    min_mesh_index: int = -50
    max_iterations: int | None = None
    milestones: tuple[int, ...] = DEFAULT_MILESTONES
    margins: tuple[float, ...] = DEFAULT_MARGINS
    noise_sigma: float = 1e-4

    def __post_init__(self) -> None:
        if self.bbe_budget <= 0:
            raise ValueError("bbe_budget must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.stop_mode not in MODES:
            raise ValueError(f"unknown stop mode {self.stop_mode!r}")
        if self.backend not in ("simulated", "external"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "external" and not self.external_command:
            raise ValueError("external backend needs a command")


def initial_config(settings: CampaignSettings) -> Configuration:
    if settings.initial is not None:
        return settings.initial
    return preset_config(settings.preset)


def surrogate_spec(settings: CampaignSettings) -> SurrogateSpec:
    if settings.surrogate_custom is not None:
        return custom_surrogate(*settings.surrogate_custom)
    return surrogate_by_name(settings.surrogate)


def build_plan(settings: CampaignSettings, bounds: SpaceBounds | None = None) -> mads.RunPlan:
    bounds = bounds or default_bounds()
    if settings.backend == "simulated":
        blackbox = SimulatedBlackbox(noise_sigma=settings.noise_sigma)

        def full_eval(config: Configuration, monitor):
            return blackbox.evaluate(
                EvaluationRequest(config, settings.max_epochs, 1.0, settings.seed, monitor)
            )

        def fidelity_eval(config: Configuration, epochs: int, fraction: float) -> float:
            return blackbox.final_accuracy(config, settings.seed, epochs, fraction)

    else:
        adapter = ProcessAdapter.from_command(settings.external_command)

        def full_eval(config: Configuration, monitor):
            return external_evaluate(
                EvaluationRequest(config, settings.max_epochs, 1.0, settings.seed, monitor),
                adapter,
            )

        def fidelity_eval(config: Configuration, epochs: int, fraction: float) -> float:
            request = EvaluationRequest(config, epochs, fraction, settings.seed, None)
            return external_evaluate(request, adapter).final_val_accuracy

    return mads.RunPlan(
        bounds=bounds,
        seed=settings.seed,
        surrogate=surrogate_spec(settings),
        stop_mode=settings.stop_mode,
        milestones=settings.milestones,
        margins=settings.margins,
        full_eval=full_eval,
        fidelity_eval=fidelity_eval,
        charge_ranking=settings.charge_ranking,
        min_mesh_index=settings.min_mesh_index,
        max_iterations=settings.max_iterations,
    )


def settings_header(settings: CampaignSettings) -> dict[str, str]:
    """Settings fingerprint embedded in the ledger (consistency-checked on resume)."""
    surrogate = settings.surrogate
    if settings.surrogate_custom is not None:
        epochs, fraction, cost = settings.surrogate_custom
        surrogate = f"custom {epochs} {fraction!r} {cost!r}"
    return {
        "format": FORMAT_VERSION,
        "seed": str(settings.seed),
        "bbe_budget": str(settings.bbe_budget),
        "max_epochs": str(settings.max_epochs),
        "stop_mode": settings.stop_mode,
        "surrogate": surrogate,
        "backend": settings.backend,
        "external_command": settings.external_command or "-",
        "charge_ranking": "1" if settings.charge_ranking else "0",
        "min_mesh_index": str(settings.min_mesh_index),
        "max_iterations": "-" if settings.max_iterations is None else str(settings.max_iterations),
        "milestones": " ".join(str(m) for m in settings.milestones),
        "margins": " ".join(repr(m) for m in settings.margins),
        "noise_sigma": repr(settings.noise_sigma),
        "initial": serialize(initial_config(settings)),
    }


def run(settings: CampaignSettings, bounds: SpaceBounds | None = None) -> mads.CampaignResult:
    """Execute a campaign and persist its ledger and summary."""
    initial = initial_config(settings)
    problems = validate(initial, bounds or default_bounds())
    if problems:
        raise ValueError("invalid initial configuration: " + "; ".join(problems))
    started = time.monotonic()
    plan = build_plan(settings, bounds)
    result = mads.run_campaign(initial, settings.bbe_budget, plan)
    _persist(settings, result, wall_seconds=time.monotonic() - started)
    return result


def _persist(settings: CampaignSettings, result: mads.CampaignResult, wall_seconds: float) -> None:
    out = Path(settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ledger(out / LEDGER_NAME, result.records, settings_header(settings))
    total_epochs = sum(r.epochs_used for r in result.records)
    full_evals = sum(1 for r in result.records if r.kind == KIND_FULL)
    summary = {
        "best_config": serialize(result.best_config),
        "best_score": result.best_score,
        "total_charged_bbe": result.total_cost,
        "total_epochs": total_epochs,
        "full_evaluations": full_evals,
        "iterations": result.iterations,
        "termination": result.termination,
        "final_mesh_index": result.final_mesh_index,
        "records": len(result.records),
        "wall_seconds": wall_seconds,
    }
    (out / SUMMARY_NAME).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _regenerated_history(settings: CampaignSettings, record: LedgerRecord):
    """Rebuild the (truncated) curve of a recorded full evaluation.

    Deterministic simulated curves make this free; the learning-rate column
    is not reconstructed, which is fine because envelope comparisons read
    accuracies only.
    """
    blackbox = SimulatedBlackbox(noise_sigma=settings.noise_sigma)
    config = deserialize(record.config)
    model = blackbox.model_for(config, settings.seed)
    return simulate_curve(model, record.epochs_used, 1.0)


def _rebuild_state(settings: CampaignSettings, kept: list[LedgerRecord]) -> mads.CampaignState:
    envelope = BaselineEnvelope(None, settings.milestones, settings.margins)
    incumbent = None
    incumbent_score = -math.inf
    for rec in kept:
        if rec.kind != KIND_FULL:
            continue
        if rec.stop_reason != "evaluation-failed":
            envelope = update_baseline(
                envelope, _regenerated_history(settings, rec), rec.score, incumbent_score
            )
        if rec.incumbent:
            incumbent = deserialize(rec.config)
            incumbent_score = rec.score
    mesh = mads.Mesh(0, 0)
    last_iteration = kept[-1].iteration
    for it in range(1, last_iteration + 1):
        success = any(r.incumbent for r in kept if r.iteration == it and r.kind == KIND_FULL)
        mesh = mads.update_mesh(
            mesh, mads.IterationOutcome(success, 0.0, (incumbent, incumbent_score) if success else None)
        )
    return mads.CampaignState(
        records=list(kept),
        cumulative=kept[-1].cumulative_cost,
        incumbent=incumbent,
        incumbent_score=incumbent_score,
        envelope=envelope,
        mesh=mesh,
        next_iteration=last_iteration + 1,
    )


def resume(settings: CampaignSettings, bounds: SpaceBounds | None = None) -> mads.CampaignResult:
    """Continue an interrupted campaign from its persisted ledger.

    The trailing (possibly incomplete) iteration is discarded and replayed;
    determinism makes the final ledger byte-identical to an uninterrupted
    run.  Only the simulated backend can regenerate curves, so external
    campaigns cannot be resumed.
    """
    if settings.backend != "simulated":
        raise ValueError("resume is only supported for the simulated backend")
    path = Path(settings.out_dir) / LEDGER_NAME
    header, records = read_ledger(path)
    expected = settings_header(settings)
    mismatched = sorted(
        key for key in expected if header.get(key) != expected[key]
    )
    if mismatched:
        raise ValueError(f"ledger settings do not match: {', '.join(mismatched)}")

    started = time.monotonic()
    plan = build_plan(settings, bounds)
    last_iteration = max((r.iteration for r in records), default=0)
    kept = [r for r in records if r.iteration < last_iteration]
    if not kept:
        result = mads.run_campaign(initial_config(settings), settings.bbe_budget, plan)
    else:
        state = _rebuild_state(settings, kept)
        result = mads.continue_campaign(state, settings.bbe_budget, plan)
    _persist(settings, result, wall_seconds=time.monotonic() - started)
    return result
