"""Early-stopping strategies over per-epoch validation curves.

Four strategies are supported: the legacy default pair (low-accuracy
cutoff plus loss-plateau), last-success (no accuracy improvement for a
window), a plateau learning-rate scheduler with a floor, and the
scheduler combined with a baseline-envelope comparison against the best
curve seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_MILESTONES = (5, 10, 25, 50, 100, 125, 150)
DEFAULT_MARGINS = (0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95)

MODES = ("none", "default", "last-success", "scheduler", "scheduler+baseline")

REASON_NONE = "none"
REASON_LOW_ACCURACY = "default-low-accuracy"
REASON_LOSS_PLATEAU = "default-loss-plateau"
REASON_LAST_SUCCESS = "last-success"
REASON_LR_FLOOR = "scheduler-lr-floor"
REASON_ENVELOPE = "envelope-breach"


class TrainingHistory:
    """Per-epoch validation series; epochs are contiguous from 1."""

    __slots__ = ("epochs", "val_accuracy", "val_loss", "learning_rate")

    def __init__(self) -> None:
        self.epochs: list[int] = []
        self.val_accuracy: list[float] = []
        self.val_loss: list[float] = []
        self.learning_rate: list[float] = []

    def append(self, epoch: int, val_accuracy: float, val_loss: float, learning_rate: float) -> None:
        expected = len(self.epochs) + 1
        if epoch != expected:
            raise ValueError(f"epoch {epoch} breaks contiguity (expected {expected})")
        if not 0.0 <= val_accuracy <= 1.0:
            raise ValueError(f"val_accuracy {val_accuracy} outside [0, 1]")
        if val_loss < 0.0:
            raise ValueError(f"val_loss {val_loss} must be non-negative")
        if learning_rate <= 0.0:
            raise ValueError(f"learning_rate {learning_rate} must be positive")
        self.epochs.append(epoch)
        self.val_accuracy.append(float(val_accuracy))
        self.val_loss.append(float(val_loss))
        self.learning_rate.append(float(learning_rate))

    @classmethod
    def from_rows(cls, rows) -> "TrainingHistory":
        """Build from (epoch, val_accuracy, val_loss, learning_rate) rows."""
        hist = cls()
        for row in rows:
            hist.append(*row)
        return hist

    def __len__(self) -> int:
        return len(self.epochs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainingHistory):
            return NotImplemented
        return (
            self.epochs == other.epochs
            and self.val_accuracy == other.val_accuracy
            and self.val_loss == other.val_loss
            and self.learning_rate == other.learning_rate
        )

    def accuracy_at(self, epoch: int) -> float:
        return self.val_accuracy[epoch - 1]

    def best_accuracy(self) -> float:
        return max(self.val_accuracy) if self.val_accuracy else 0.0


@dataclass(frozen=True)
class StopVerdict:
    decision: str
    reason: str = REASON_NONE
    detail: str = ""

    def __post_init__(self) -> None:
        if self.decision not in ("continue", "stop"):
            raise ValueError(f"bad decision {self.decision!r}")
        if (self.decision == "stop") != (self.reason != REASON_NONE):
            raise ValueError("decision is stop iff reason is set")

    @property
    def stop(self) -> bool:
        return self.decision == "stop"

    @classmethod
    def go(cls) -> "StopVerdict":
        return cls("continue")

    @classmethod
    def halt(cls, reason: str, detail: str = "") -> "StopVerdict":
        return cls("stop", reason, detail)


CONTINUE = StopVerdict.go()


@dataclass(frozen=True)
class BaselineEnvelope:
    """Best-seen curve plus the milestone/margin envelope under it."""

    baseline_curve: TrainingHistory | None = None
    milestones: tuple[int, ...] = DEFAULT_MILESTONES
    margins: tuple[float, ...] = DEFAULT_MARGINS

    def __post_init__(self) -> None:
        if len(self.milestones) != len(self.margins):
            raise ValueError("milestones and margins must have equal length")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if any(b <= a for a, b in zip(self.margins, self.margins[1:])):
            raise ValueError("margins must be strictly increasing")
        if self.margins and not (0.0 < self.margins[0] and self.margins[-1] <= 1.0):
            raise ValueError("margins must lie in (0, 1]")

    def baseline_at(self, epoch: int) -> float | None:
        """Baseline accuracy at an epoch; its final value if it stopped earlier."""
        if self.baseline_curve is None or len(self.baseline_curve) == 0:
            return None
        if epoch <= len(self.baseline_curve):
            return self.baseline_curve.accuracy_at(epoch)
        return self.baseline_curve.val_accuracy[-1]


def check_default(
    history: TrainingHistory,
    *,
    min_epochs: int = 25,
    accuracy_floor: float = 0.12,
    plateau_window: int = 50,
    loss_std_tol: float = 1e-3,
) -> StopVerdict:
    """Legacy criteria: stuck-at-low-accuracy or a flat validation loss."""
    if not len(history):
        raise ValueError("history is empty")
    epoch = len(history)
    best = max(history.val_accuracy)
    if epoch >= min_epochs and best <= accuracy_floor:
        return StopVerdict.halt(
            REASON_LOW_ACCURACY,
            f"best accuracy {best:.4f} <= {accuracy_floor} after {epoch} epochs",
        )
    if epoch >= plateau_window:
        std = float(np.std(history.val_loss[-plateau_window:]))
        if std < loss_std_tol:
            return StopVerdict.halt(
                REASON_LOSS_PLATEAU,
                f"loss std {std:.2e} over last {plateau_window} epochs",
            )
    return CONTINUE


def last_improvement_epoch(history: TrainingHistory) -> int:
    """Last epoch whose accuracy set a new running maximum (epoch 1 counts)."""
    best = -math.inf
    epoch = 0
    for e, acc in zip(history.epochs, history.val_accuracy):
        if acc > best:
            best = acc
            epoch = e
    return epoch


def check_last_success(history: TrainingHistory, window: int = 25) -> StopVerdict:
    """Stop when the last accuracy improvement is more than ``window`` epochs old."""
    if not len(history):
        raise ValueError("history is empty")
    e_star = last_improvement_epoch(history)
    age = len(history) - e_star
    if age > window:
        return StopVerdict.halt(
            REASON_LAST_SUCCESS, f"no improvement since epoch {e_star} ({age} epochs)"
        )
    return CONTINUE


def _scheduler_improvement_epoch(history: TrainingHistory) -> int:
    """Last epoch that beat all earlier epochs; the first epoch never counts
    (it establishes the reference rather than improving on one)."""
    best = history.val_accuracy[0]
    epoch = 0
    for e, acc in zip(history.epochs[1:], history.val_accuracy[1:]):
        if acc > best:
            best = acc
            epoch = e
    return epoch


def _scheduler_reduction_epoch(history: TrainingHistory) -> int:
    """Epoch at which the last LR reduction was decided.

    A reduction decided at epoch e takes effect from epoch e+1 onward, so
    the decision epoch is one before the first epoch carrying the new rate.
    """
    lrs = history.learning_rate
    for i in range(len(lrs) - 1, 0, -1):
        if lrs[i] != lrs[i - 1]:
            return history.epochs[i] - 1
    return 0


def scheduler_step(
    history: TrainingHistory,
    patience: int = 25,
    factor: float = 0.1,
    lr_floor: float = 1e-8,
) -> tuple[float, StopVerdict]:
    """Plateau scheduler: cut the learning rate after ``patience`` flat epochs.

    A plateau means no new running-maximum accuracy since the later of the
    last reduction and the last improvement; each reduction resets the
    patience counter.  Returns the rate to use from the next epoch and a
    stop verdict that fires once the reduced rate falls below ``lr_floor``.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    if lr_floor <= 0:
        raise ValueError("lr_floor must be positive")
    if not len(history):
        raise ValueError("history is empty")
    current = history.learning_rate[-1]
    reference = max(
        _scheduler_improvement_epoch(history), _scheduler_reduction_epoch(history)
    )
    new_lr = current
    if len(history) - reference >= patience:
        new_lr = current * factor
    if new_lr < lr_floor:
        return new_lr, StopVerdict.halt(
            REASON_LR_FLOOR, f"learning rate {new_lr:.3e} below floor {lr_floor:.0e}"
        )
    return new_lr, CONTINUE


def check_envelope(
    history: TrainingHistory,
    envelope: BaselineEnvelope,
    *,
    chance_level: float = 0.1,
) -> StopVerdict:
    """Milestone comparison against the baseline curve.

    Only fires when the current epoch is a milestone and the candidate's
    accuracy is strictly below margin * baseline accuracy at that epoch.
    A baseline at or below chance level disables the comparison.
    """
    if not len(history):
        raise ValueError("history is empty")
    epoch = len(history)
    if epoch not in envelope.milestones:
        return CONTINUE
    reference = envelope.baseline_at(epoch)
    if reference is None or reference <= chance_level:
        return CONTINUE
    margin = envelope.margins[envelope.milestones.index(epoch)]
    threshold = margin * reference
    accuracy = history.val_accuracy[-1]
    if accuracy < threshold:
        return StopVerdict.halt(
            REASON_ENVELOPE,
            f"accuracy {accuracy:.4f} < {margin} * baseline {reference:.4f} at epoch {epoch}",
        )
    return CONTINUE


def update_baseline(
    envelope: BaselineEnvelope,
    candidate_history: TrainingHistory,
    candidate_final: float,
    incumbent_final: float,
) -> BaselineEnvelope:
    """Adopt the candidate curve as baseline on strict improvement.

    The first completed evaluation always becomes the baseline (there is
    nothing to compare against before that).
    """
    if envelope.baseline_curve is None or candidate_final > incumbent_final:
        return replace(envelope, baseline_curve=candidate_history)
    return envelope


def combined_verdict(
    history: TrainingHistory,
    envelope: BaselineEnvelope | None,
    mode: str,
    *,
    patience: int = 25,
    lr_factor: float = 0.1,
    lr_floor: float = 1e-8,
    chance_level: float = 0.1,
    last_success_window: int = 25,
) -> StopVerdict:
    """Dispatch to the checks of one stopping strategy.

    ``scheduler+baseline`` stops if either the envelope or the scheduler
    floor triggers; the envelope is consulted first.
    """
    if mode not in MODES:
        raise ValueError(f"unknown stopping mode {mode!r} (expected one of {MODES})")
    if mode == "none":
        return CONTINUE
    if mode == "default":
        return check_default(history)
    if mode == "last-success":
        return check_last_success(history, window=last_success_window)
    if mode == "scheduler+baseline" and envelope is not None:
        verdict = check_envelope(history, envelope, chance_level=chance_level)
        if verdict.stop:
            return verdict
    _, verdict = scheduler_step(history, patience=patience, factor=lr_factor, lr_floor=lr_floor)
    return verdict


class StoppingMonitor:
    """Stateful per-evaluation monitor; call ``verdict`` once per appended epoch.

    Incremental bookkeeping keeps the per-epoch cost constant; the verdicts
    match the pure check functions applied to the same history.  For the
    scheduler modes the monitor also manages the learning rate to stamp on
    the next epoch record (``next_lr``).
    """

    def __init__(
        self,
        mode: str,
        envelope: BaselineEnvelope | None = None,
        *,
        patience: int = 25,
        lr_factor: float = 0.1,
        lr_floor: float = 1e-8,
        chance_level: float = 0.1,
        accuracy_floor: float = 0.12,
        min_epochs: int = 25,
        plateau_window: int = 50,
        loss_std_tol: float = 1e-3,
        last_success_window: int = 25,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"unknown stopping mode {mode!r} (expected one of {MODES})")
        if lr_factor <= 0 or lr_floor <= 0:
            raise ValueError("lr_factor and lr_floor must be positive")
        self.mode = mode
        self.envelope = envelope
        self.patience = patience
        self.lr_factor = lr_factor
        self.lr_floor = lr_floor
        self.chance_level = chance_level
        self.accuracy_floor = accuracy_floor
        self.min_epochs = min_epochs
        self.plateau_window = plateau_window
        self.loss_std_tol = loss_std_tol
        self.last_success_window = last_success_window
        self._lr = float("nan")
        self._best = -math.inf
        self._best_epoch = 0
        self._prev_best = -math.inf
        self._sched_improve = 0
        self._last_reduce = 0

    def start(self, initial_lr: float) -> None:
        if initial_lr <= 0:
            raise ValueError("initial learning rate must be positive")
        self._lr = initial_lr
        self._best = -math.inf
        self._best_epoch = 0
        self._prev_best = -math.inf
        self._sched_improve = 0
        self._last_reduce = 0

    def next_lr(self) -> float:
        return self._lr

    def verdict(self, history: TrainingHistory) -> StopVerdict:
        epoch = len(history)
        accuracy = history.val_accuracy[-1]
        if accuracy > self._best:
            self._best = accuracy
            self._best_epoch = epoch
        if epoch >= 2 and accuracy > self._prev_best:
            self._sched_improve = epoch
        if epoch == 1:
            self._prev_best = accuracy
        else:
            self._prev_best = max(self._prev_best, accuracy)

        if self.mode == "none":
            return CONTINUE
        if self.mode == "default":
            if epoch >= self.min_epochs and self._best <= self.accuracy_floor:
                return StopVerdict.halt(
                    REASON_LOW_ACCURACY,
                    f"best accuracy {self._best:.4f} <= {self.accuracy_floor} after {epoch} epochs",
                )
            if epoch >= self.plateau_window:
                std = float(np.std(history.val_loss[-self.plateau_window:]))
                if std < self.loss_std_tol:
                    return StopVerdict.halt(
                        REASON_LOSS_PLATEAU,
                        f"loss std {std:.2e} over last {self.plateau_window} epochs",
                    )
            return CONTINUE
        if self.mode == "last-success":
            age = epoch - self._best_epoch
            if age > self.last_success_window:
                return StopVerdict.halt(
                    REASON_LAST_SUCCESS,
                    f"no improvement since epoch {self._best_epoch} ({age} epochs)",
                )
            return CONTINUE

        # scheduler / scheduler+baseline
        if self.mode == "scheduler+baseline" and self.envelope is not None:
            verdict = check_envelope(history, self.envelope, chance_level=self.chance_level)
            if verdict.stop:
                return verdict
        reference = max(self._sched_improve, self._last_reduce)
        if epoch - reference >= self.patience:
            self._lr = self._lr * self.lr_factor
            self._last_reduce = epoch
        if self._lr < self.lr_floor:
            return StopVerdict.halt(
                REASON_LR_FLOOR,
                f"learning rate {self._lr:.3e} below floor {self.lr_floor:.0e}",
            )
        return CONTINUE
