import math

import numpy as np
import pytest

from madshpo.blackbox import EvaluationResult
from madshpo.early_stop import DEFAULT_MARGINS, DEFAULT_MILESTONES, TrainingHistory
from madshpo.ledger import KIND_FULL, KIND_RANKING, KIND_SURROGATE
from madshpo import mads
from madshpo.mads import (
    IterationOutcome,
    Mesh,
    PollCandidate,
    generate_poll,
    opportunistic_evaluate,
    poll_directions,
    update_mesh,
)
from madshpo.space import (
    SpaceBounds,
    default_bounds,
    make_config,
    preset_config,
    project_to_mesh,
    quantitative_slots,
    serialize,
    to_vector,
    validate,
)
from madshpo.surrogates import surrogate_by_name


@pytest.fixture(scope="module")
def bounds():
    return default_bounds()


def frozen_bounds():
    """No layers, single optimizer: a purely quantitative 9-slot space."""
    b = default_bounds()
    return SpaceBounds(
        n_conv_range=(0, 0),
        n_fc_range=(0, 0),
        conv_slots=b.conv_slots,
        fc_slot=b.fc_slot,
        optimizers=("sgd",),
        scalar_slots=b.scalar_slots,
    )


class TestMesh:
    def test_delta_doubles_with_index(self, bounds):
        slots = quantitative_slots(bounds, 1, 2)
        fine = Mesh(-3, 0).delta_vector(slots)
        coarse = Mesh(-2, 0).delta_vector(slots)
        assert np.allclose(coarse, 2 * fine)

    @pytest.mark.parametrize(
        "index,success,expected",
        [(-3, True, -2), (0, True, 0), (-3, False, -4), (0, False, -1)],
    )
    def test_update(self, index, success, expected):
        outcome = IterationOutcome(success, 1.0, (preset_config("p1"), 0.5) if success else None)
        assert update_mesh(Mesh(index, 0), outcome).index == expected

    def test_outcome_consistency_enforced(self):
        with pytest.raises(ValueError):
            IterationOutcome(True, 1.0, None)
        with pytest.raises(ValueError):
            IterationOutcome(False, 1.0, (preset_config("p1"), 0.5))

    def test_status_strings(self):
        assert IterationOutcome(False, 2.0).status == "failure"
        assert IterationOutcome(True, 1.0, (preset_config("p1"), 0.5)).status == "success"


class TestPollDirections:
    def test_maximal_basis_shape_and_negation(self):
        d = poll_directions(9, 123)
        assert d.shape == (9, 18)
        assert np.allclose(d[:, 9:], -d[:, :9])
        assert poll_directions(2, 1).shape == (2, 4)  # 2n points for n = 2

    def test_columns_orthogonal_full_rank(self):
        d = poll_directions(9, 5)
        gram = d[:, :9].T @ d[:, :9]
        assert np.allclose(gram - np.diag(np.diag(gram)), 0, atol=1e-10)
        assert np.linalg.matrix_rank(d[:, :9]) == 9

    def test_deterministic_per_seed(self):
        assert np.array_equal(poll_directions(9, 7), poll_directions(9, 7))
        assert not np.array_equal(poll_directions(9, 7), poll_directions(9, 8))

    def test_unit_max_component(self):
        d = poll_directions(12, 11)
        assert np.allclose(np.abs(d).max(axis=0), 1.0)


class TestGeneratePoll:
    def test_direction_count_and_neighbors(self, bounds):
        p1 = preset_config("p1")
        poll = generate_poll(p1, Mesh(0, 0), 42, bounds)
        directions = [c for c in poll.candidates if c.origin == "poll-direction"]
        neighbors = [c for c in poll.candidates if c.origin == "categorical-neighbor"]
        n = len(quantitative_slots(bounds, 1, 2))
        assert poll.directions.shape == (n, 2 * n)
        assert len(directions) <= 2 * n
        assert len(directions) >= 2 * n - 4  # dedup may drop a few
        assert 3 <= len(neighbors) <= 5

    def test_deterministic(self, bounds):
        p1 = preset_config("p1")
        a = generate_poll(p1, Mesh(-2, 0), 9, bounds)
        b = generate_poll(p1, Mesh(-2, 0), 9, bounds)
        assert [serialize(c.config) for c in a.candidates] == [
            serialize(c.config) for c in b.candidates
        ]

    def test_all_candidates_on_mesh_and_in_bounds(self, bounds):
        p1 = preset_config("p2")
        for seed in range(5):
            mesh = Mesh(-seed, 0)
            poll = generate_poll(p1, mesh, seed, bounds)
            for cand in poll.candidates:
                assert validate(cand.config, bounds) == []
                assert cand.config == project_to_mesh(cand.config, mesh, bounds)

    def test_no_duplicates_or_incumbent_copies(self, bounds):
        p1 = preset_config("p1")
        poll = generate_poll(p1, Mesh(-6, 0), 3, bounds)
        keys = [serialize(c.config) for c in poll.candidates]
        assert len(keys) == len(set(keys))
        assert serialize(p1) not in keys

    def test_displacements_halve_with_mesh(self, bounds):
        # the pre-projection candidate displacements are delta * direction,
        # so halving delta halves every slot's displacement exactly
        slots = quantitative_slots(bounds, 1, 2)
        directions = poll_directions(len(slots), 77)
        coarse = Mesh(-3, 0).delta_vector(slots)[:, None] * directions
        fine = Mesh(-4, 0).delta_vector(slots)[:, None] * directions
        assert np.allclose(fine, 0.5 * coarse, rtol=1e-12)


class TestOpportunisticEvaluate:
    def scores(self, values):
        table = {serialize(c.config): v for c, v in values}
        return lambda cand: table[serialize(cand.config)]

    def make_candidates(self, n):
        rng = np.random.default_rng(0)
        out = []
        for i in range(n):
            out.append(
                PollCandidate(make_config((), (), learning_rate=10.0 ** (-1 - i)), "poll-direction")
            )
        return out

    def test_stops_at_first_improvement(self):
        cands = self.make_candidates(4)
        calls = []

        def evaluator(cand):
            calls.append(cand)
            return [0.4, 0.6, 0.9, 0.9][len(calls) - 1]

        outcome = opportunistic_evaluate(cands, 0.5, evaluator)
        assert outcome.success
        assert outcome.evaluations_spent == 2.0
        assert len(calls) == 2
        assert outcome.new_incumbent[1] == 0.6

    def test_exhaustion_counts_all(self):
        cands = self.make_candidates(6)
        outcome = opportunistic_evaluate(cands, 0.99, lambda c: 0.1)
        assert not outcome.success
        assert outcome.evaluations_spent == 6.0

    def test_first_candidate_wins_immediately(self):
        cands = self.make_candidates(5)
        calls = []

        def evaluator(cand):
            calls.append(cand)
            return 0.9

        outcome = opportunistic_evaluate(cands, 0.5, evaluator)
        assert outcome.success and outcome.evaluations_spent == 1.0
        assert len(calls) == 1

    def test_tie_is_not_improvement(self):
        cands = self.make_candidates(3)
        outcome = opportunistic_evaluate(cands, 0.5, lambda c: 0.5)
        assert not outcome.success
        assert outcome.evaluations_spent == 3.0

    def test_evaluator_failure_scores_worst_and_continues(self):
        cands = self.make_candidates(3)
        calls = []

        def evaluator(cand):
            calls.append(cand)
            if len(calls) == 1:
                raise RuntimeError("crashed")
            return 0.8

        outcome = opportunistic_evaluate(cands, 0.5, evaluator)
        assert outcome.success
        assert outcome.evaluations_spent == 2.0


def quadratic_plan(bounds, center, seed, max_iterations=500, surrogate="none"):
    slots = quantitative_slots(bounds, 0, 0)
    spans = np.array([s.spec.internal_upper - s.spec.internal_lower for s in slots])
    weights = 1.0 / spans**2

    def score(config):
        v = to_vector(config, bounds)
        return 1.0 - float(np.sum(weights * (v - center) ** 2))

    def full_eval(config, monitor):
        h = TrainingHistory()
        h.append(1, min(max(score(config), 0.0), 1.0), 0.0, config.learning_rate)
        return EvaluationResult(h, score(config), 1, "none", 1.0)

    return mads.RunPlan(
        bounds=bounds,
        seed=seed,
        surrogate=surrogate_by_name(surrogate),
        stop_mode="none",
        milestones=DEFAULT_MILESTONES,
        margins=DEFAULT_MARGINS,
        full_eval=full_eval,
        fidelity_eval=lambda c, e, f: score(c),
        charge_ranking=False,
        min_mesh_index=-60,
        max_iterations=max_iterations,
    )


QUAD_START = dict(
    learning_rate=1e-4, batch_size=256, dropout=0.7, weight_decay=1e-3, momentum=0.2,
    lr_decay=0.8, grad_clip=0.5, label_smoothing=0.25, epoch_scale=0.6,
)
QUAD_CENTER = dict(
    learning_rate=3e-3, batch_size=256, dropout=0.35, weight_decay=2e-5, momentum=0.85,
    lr_decay=0.45, grad_clip=2.5, label_smoothing=0.12, epoch_scale=1.3,
)


class TestRunCampaign:
    def test_budget_one_is_single_evaluation(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        result = mads.run_campaign(start, 1, quadratic_plan(b, center, 0))
        assert len(result.records) == 1
        assert result.records[0].incumbent
        assert result.total_cost == 1.0

    def test_budget_and_initial_validation(self):
        b = frozen_bounds()
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        plan = quadratic_plan(b, center, 0)
        with pytest.raises(ValueError):
            mads.run_campaign(make_config((), (), **QUAD_START), 0, plan)
        with pytest.raises(ValueError):
            mads.run_campaign(make_config((), (), dropout=2.0), 10, plan)

    def test_deterministic_records(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        r1 = mads.run_campaign(start, 100, quadratic_plan(b, center, 3, max_iterations=10))
        r2 = mads.run_campaign(start, 100, quadratic_plan(b, center, 3, max_iterations=10))
        assert r1.records == r2.records

    def test_quadratic_convergence_smoke(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        slots = quantitative_slots(b, 0, 0)
        for seed in (0, 1, 2):
            result = mads.run_campaign(start, 10**9, quadratic_plan(b, center, seed))
            assert 1.0 - result.best_score <= 1e-3
            assert Mesh(result.final_mesh_index, 0).max_delta(slots) < 1e-6
            assert result.iterations <= 500

    def test_incumbent_monotone_and_mesh_rules(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        result = mads.run_campaign(start, 200, quadratic_plan(b, center, 5, max_iterations=40))
        fulls = [r for r in result.records if r.kind == KIND_FULL]
        best = -math.inf
        for rec in fulls:
            if rec.incumbent:
                assert rec.score > best
                best = rec.score
        # mesh transitions follow success/failure of each iteration
        by_iter = {}
        for rec in fulls:
            if rec.iteration >= 1:
                by_iter.setdefault(rec.iteration, []).append(rec)
        for it in sorted(by_iter)[:-1]:
            if it + 1 not in by_iter:
                continue
            idx_now = by_iter[it][0].mesh_index
            idx_next = by_iter[it + 1][0].mesh_index
            if any(r.incumbent for r in by_iter[it]):
                assert idx_next == min(idx_now + 1, 0)
            else:
                assert idx_next == idx_now - 1

    def test_cost_ledger_exact(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center = to_vector(make_config((), (), **QUAD_CENTER), b)
        plan = quadratic_plan(b, center, 1, max_iterations=8, surrogate="r4")
        plan.charge_ranking = True
        result = mads.run_campaign(start, 50, plan)
        fulls = sum(1 for r in result.records if r.kind == KIND_FULL)
        surrogate_charges = sum(
            r.charged_cost for r in result.records if r.kind == KIND_SURROGATE
        )
        assert result.total_cost == pytest.approx(fulls * 1.0 + surrogate_charges, abs=1e-9)
        assert result.total_cost <= 50 + 1e-9
        assert result.records[-1].cumulative_cost == pytest.approx(result.total_cost, abs=1e-12)
        ranking = [r for r in result.records if r.kind == KIND_RANKING]
        assert ranking and all(r.charged_cost == 0.0 for r in ranking)

    def test_search_hook_success_skips_poll(self):
        b = frozen_bounds()
        start = make_config((), (), **QUAD_START)
        center_cfg = make_config((), (), **QUAD_CENTER)
        center = to_vector(center_cfg, b)
        plan = quadratic_plan(b, center, 2, max_iterations=1)
        plan.search_hook = lambda incumbent, mesh, k: [center_cfg]
        result = mads.run_campaign(start, 10, plan)
        fulls = [r for r in result.records if r.kind == KIND_FULL]
        # initial eval + the single search proposal; no poll evaluations follow
        assert len(fulls) == 2
        assert fulls[1].incumbent
