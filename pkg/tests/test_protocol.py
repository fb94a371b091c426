import math
from fractions import Fraction
from unittest.mock import patch

import numpy as np
import pytest

from app.core.exceptions import EmptyInputError, ProtocolInvariantError, ZeroInitialErrorError
from app.schemas.experiment import ExperimentConfig, RealizationResult, RealizationStatus, Strategy, TestMetrics, TestSet
from app.schemas.scene import SceneConfig
from app.services.neural import train_model
from app.services.protocol import (
    D1_ONLY,
    ExperimentRunner,
    achievable_gain_fractions,
    check_partition,
    d1_only_q90,
    data_savings,
    gain,
    prepare_realization,
    q_quantile,
    realization_seed,
    run_experiment,
    run_realization,
    run_strategy,
    stage_seeds,
    strategy_seeds,
    summarize,
    table_one,
)
from app.services.selection import positioning_errors


def rank_oracle(errors, q):
    """Smallest error e whose empirical CDF reaches q."""
    n = len(errors)
    target = Fraction(repr(q))
    return min(e for e in errors if Fraction(sum(1 for other in errors if other <= e), n) >= target)


def make_result(strategy=Strategy.RANDOM, q90_after=9.0, q90_initial=10.0, realization=0, bs_count=18, status=RealizationStatus.OK):
    metrics = {}
    if status == RealizationStatus.OK:
        metrics = {
            test_set: TestMetrics(q90_initial_m=q90_initial, q90_after_m=q90_after, gain=gain(q90_initial, q90_after))
            for test_set in TestSet
        }
    return RealizationResult(
        realization=realization,
        seed=realization,
        bs_count=bs_count,
        strategy=strategy,
        k_selected=1,
        status=status,
        metrics=metrics,
    )


class TestQuantile:
    """Test the nearest-rank quantile"""

    def test_one_to_ten(self):
        """Test errors 1..10 at q = 0.9 give 9"""
        assert q_quantile(list(range(1, 11)), 0.9) == 9.0

    def test_single_element(self):
        """Test that one error is its own quantile at any level"""
        for q in (0.01, 0.5, 0.9, 1.0):
            assert q_quantile([4.2], q) == 4.2

    def test_matches_rank_oracle(self):
        """Test exact agreement with an exhaustive rank scan on 1000 vectors"""
        rng = np.random.default_rng(3)
        for i in range(1000):
            errors = rng.exponential(5.0, size=int(rng.integers(1, 41)))
            if i % 2:
                # ties
                errors = np.round(errors)
            q = (0.9, 0.5, 1.0, round(float(rng.uniform(0.01, 1.0)), 2))[i % 4]
            assert q_quantile(errors.tolist(), q) == rank_oracle(errors.tolist(), q)

    def test_order_free(self):
        """Test that input order does not matter"""
        errors = np.random.default_rng(0).uniform(size=50)
        assert q_quantile(errors) == q_quantile(errors[::-1])

    def test_empty(self):
        """Test empty-input"""
        with pytest.raises(EmptyInputError):
            q_quantile([])

    def test_level_out_of_range(self):
        """Test that q must lie in (0, 1]"""
        with pytest.raises(ValueError):
            q_quantile([1.0, 2.0], 0.0)


class TestGain:
    """Test G = 1 - after / initial"""

    def test_values(self):
        """Test the documented examples"""
        assert gain(10.0, 8.0) == pytest.approx(0.2)
        assert gain(10.0, 10.0) == 0.0
        assert gain(10.0, 12.0) == pytest.approx(-0.2)

    def test_zero_initial(self):
        """Test zero-initial-error"""
        with pytest.raises(ZeroInitialErrorError):
            gain(0.0, 1.0)


class TestSeeds:
    """Test the seed derivation contract"""

    def test_realizations_differ(self, toy_experiment_config):
        """Test distinct realization seeds"""
        seeds = {realization_seed(toy_experiment_config, r) for r in range(25)}
        assert len(seeds) == 25

    def test_base_seed_matters(self, toy_experiment_config):
        """Test that changing base_seed changes every stage"""
        other = toy_experiment_config.model_copy(update={"base_seed": 12})
        assert stage_seeds(toy_experiment_config, 0, 18)["pool"] != stage_seeds(other, 0, 18)["pool"]

    def test_shared_and_private_stages(self, toy_experiment_config):
        """Test pool seeds shared over BS counts, model and strategy seeds not"""
        at18 = stage_seeds(toy_experiment_config, 1, 18)
        at4 = stage_seeds(toy_experiment_config, 1, 4)
        assert at18["pool"] == at4["pool"]
        assert at18["partition"] == at4["partition"]
        assert at18["nn1a"] != at4["nn1a"]
        random_seeds = strategy_seeds(toy_experiment_config, 1, 18, Strategy.RANDOM)
        rand60_seeds = strategy_seeds(toy_experiment_config, 1, 18, Strategy.RAND60)
        assert random_seeds["select"] != rand60_seeds["select"]


class TestRealization:
    """Test one realization of the protocol"""

    def test_paired_strategies(self, toy_experiment_config):
        """Test identical D1, candidates and initial model across strategies"""
        results = [run_realization(toy_experiment_config, 18, strategy, 0) for strategy in Strategy]
        assert len({r.d1_hash for r in results}) == 1
        assert len({r.candidates_hash for r in results}) == 1
        assert len({r.nn1a_hash for r in results}) == 1
        assert all(r.is_valid for r in results)

    def test_sizes_and_metrics(self, toy_experiment_config):
        """Test k = 10% of 40, test set sizes and metric ranges"""
        context = prepare_realization(toy_experiment_config, 4, 1)
        assert (len(context.d1), len(context.candidates), len(context.rest)) == (40, 40, 120)
        assert context.pool.bs_ids == (0, 2, 15, 17)

        result = run_strategy(context, Strategy.GENIE)
        assert result.k_selected == 4
        assert len(result.selected_indices) == 4
        assert set(result.selected_indices) <= set(context.candidates.pool_indices.tolist())
        assert result.metrics[TestSet.TEST1].n_test == 36
        assert result.metrics[TestSet.TEST2].n_test == 120 + 36
        for metrics in result.metrics.values():
            assert metrics.q90_initial_m >= 0.0 and metrics.q90_after_m >= 0.0
            assert math.isfinite(metrics.gain)

    def test_zero_percent(self, toy_experiment_config):
        """Test X = 0: D2 = D1 and test1 = all candidates"""
        config = toy_experiment_config.model_copy(update={"x_percent": 0.0})
        result = run_realization(config, 18, Strategy.RANDOM, 0)
        assert result.k_selected == 0
        assert result.selected_indices == []
        assert result.metrics[TestSet.TEST1].n_test == 40
        assert not result.test1_is_candidates

    def test_rand100_falls_back_to_candidates(self, toy_experiment_config):
        """Test that selecting every candidate evaluates test1 on all of them"""
        result = run_realization(toy_experiment_config, 18, Strategy.RAND100, 0)
        assert result.k_selected == 40
        assert result.test1_is_candidates
        assert result.metrics[TestSet.TEST1].n_test == 40
        assert result.metrics[TestSet.TEST2].n_test == 120

    def test_rand60_size(self, toy_experiment_config):
        """Test that Rand60 pins X to 60%"""
        assert run_realization(toy_experiment_config, 18, Strategy.RAND60, 0).k_selected == 24

    def test_practical_trains_signal_model_once(self, toy_experiment_config):
        """Test that only the practical strategy builds the signal model"""
        context = prepare_realization(toy_experiment_config, 18, 0)
        run_strategy(context, Strategy.GENIE)
        assert not context.has_nn1b
        run_strategy(context, Strategy.PRACTICAL)
        assert context.has_nn1b
        first = context.nn1b()
        assert context.nn1b() is first

    def test_divergence_is_recorded(self, toy_experiment_config):
        """Test that a diverged initial training marks the realization invalid"""
        config = toy_experiment_config.model_copy(
            update={"train": toy_experiment_config.train.model_copy(update={"divergence_loss_limit": 1e-12})}
        )
        result = run_realization(config, 18, Strategy.GENIE, 0)
        assert result.status == RealizationStatus.DIVERGED
        assert not result.is_valid
        assert result.metrics == {}

    def test_selection_file(self, toy_experiment_config, tmp_path):
        """Test the per-strategy selection file"""
        context = prepare_realization(toy_experiment_config, 18, 0)
        run_strategy(context, Strategy.GENIE, selection_dir=tmp_path)
        lines = (tmp_path / "bs18_r000_genie.csv").read_text().splitlines()
        assert lines[0] == "candidate_index,score,selected"
        assert len(lines) == 41
        assert sum(line.endswith(",1") for line in lines[1:]) == 4

    def test_shared_initial_reference(self, toy_experiment_config):
        """Test one D1-only Q(0.9) per test set, taken on all candidates and on the pool minus D1"""
        context = prepare_realization(toy_experiment_config, 18, 0)
        expected = {
            TestSet.TEST1: q_quantile(positioning_errors(context.nn1a, context.candidates)),
            TestSet.TEST2: q_quantile(positioning_errors(context.nn1a, context.rest.concat(context.candidates))),
        }
        assert context.initial_q90 == expected
        for strategy in Strategy:
            result = run_strategy(context, strategy)
            for test_set, metrics in result.metrics.items():
                assert metrics.q90_initial_m == expected[test_set]
                assert metrics.gain == gain(expected[test_set], metrics.q90_after_m)

    def test_start_logged_before_training(self, toy_experiment_config):
        """Test that the start event precedes the initial training"""
        events = []

        def training(*args, **kwargs):
            events.append("train")
            return train_model(*args, **kwargs)

        with patch("app.services.protocol.experiment_logger") as mock_logger, \
                patch("app.services.protocol.train_model", side_effect=training):
            mock_logger.log_realization_started.side_effect = lambda *args: events.append("started")
            prepare_realization(toy_experiment_config, 4, 0)
        assert events == ["started", "train"]
        mock_logger.log_realization_started.assert_called_once_with(
            0, 4, stage_seeds(toy_experiment_config, 0, 4)["realization"]
        )

    def test_pool_exhausted_by_rand100(self, tiny_train_config):
        """Test pool_size = 2n with every candidate selected: test2 is empty and skipped"""
        config = ExperimentConfig(
            scene=SceneConfig(field_grid_step_m=4.0),
            train=tiny_train_config,
            n=30,
            pool_size=60,
            bs_counts=[4],
            strategies=[Strategy.RAND100],
            n_realizations=1,
            base_seed=3,
        )
        result = run_realization(config, 4, Strategy.RAND100, 0)
        assert result.is_valid
        assert list(result.metrics) == [TestSet.TEST1]
        assert result.metrics[TestSet.TEST1].n_test == 30


class TestRandomConfigs:
    """Test split bookkeeping on randomly drawn configurations"""

    def test_twenty_configs(self, tiny_train_config):
        """Test k, disjoint splits, test set sizes and pairing for 20 random configurations"""
        rng = np.random.default_rng(2024)
        train = tiny_train_config.model_copy(update={"hidden_width": 4, "epochs": 1, "fine_tune_epochs": 1})
        for _ in range(20):
            n = int(rng.integers(5, 41))
            x_percent = int(rng.integers(0, 1001)) / 10.0
            bs_count = int(rng.choice([18, 12, 8, 4]))
            config = ExperimentConfig(
                scene=SceneConfig(field_grid_step_m=6.0),
                train=train,
                n=n,
                x_percent=x_percent,
                pool_size=2 * n + int(rng.integers(10, 60)),
                bs_counts=[bs_count],
                strategies=list(Strategy),
                n_realizations=1,
                base_seed=int(rng.integers(0, 2**31)),
            )
            context = prepare_realization(config, bs_count, 0)
            d1_ids = set(context.d1.pool_indices.tolist())
            candidate_ids = set(context.candidates.pool_indices.tolist())
            assert len(d1_ids) == len(candidate_ids) == n
            assert not d1_ids & candidate_ids

            results = [run_strategy(context, strategy) for strategy in Strategy]
            for result in results:
                percent = result.strategy.fixed_percent if result.strategy.fixed_percent is not None else x_percent
                k = math.floor(Fraction(repr(percent)) * n / 100 + Fraction(1, 2))
                selected = set(result.selected_indices)
                assert result.is_valid
                assert result.k_selected == k == len(selected)
                assert selected <= candidate_ids
                assert not selected & d1_ids
                assert result.metrics[TestSet.TEST1].n_test == (n if k == n else n - k)
                assert result.metrics[TestSet.TEST2].n_test == config.pool_size - n - k

            assert len({(r.d1_hash, r.candidates_hash, r.nn1a_hash) for r in results}) == 1
            fresh = run_realization(config, bs_count, Strategy.RANDOM, 0)
            assert (fresh.d1_hash, fresh.candidates_hash, fresh.nn1a_hash) == (
                results[0].d1_hash,
                results[0].candidates_hash,
                results[0].nn1a_hash,
            )


class TestCheckPartition:
    """Test index-set bookkeeping"""

    def test_consistent_split(self, small_pool):
        """Test a valid split"""
        d1, candidates, rest = small_pool.take(range(0, 50)), small_pool.take(range(50, 100)), small_pool.take(range(100, 300))
        selected, unselected = candidates.take(range(5)), candidates.take(range(5, 50))
        check_partition(small_pool, d1, candidates, selected, unselected, rest.concat(unselected), False)

    def test_test2_overlapping_d1(self, small_pool):
        """Test that test2 may not contain D1 samples"""
        d1, candidates, rest = small_pool.take(range(0, 50)), small_pool.take(range(50, 100)), small_pool.take(range(100, 300))
        selected, unselected = candidates.take(range(5)), candidates.take(range(5, 50))
        with pytest.raises(ProtocolInvariantError) as exc_info:
            check_partition(small_pool, d1, candidates, selected, unselected, rest.concat(unselected).concat(d1), False)
        assert "test2 intersects D2" in exc_info.value.details["problems"]

    def test_test1_missing_candidates(self, small_pool):
        """Test that test1 and the selection must cover the candidates"""
        d1, candidates, rest = small_pool.take(range(0, 50)), small_pool.take(range(50, 100)), small_pool.take(range(100, 300))
        selected, unselected = candidates.take(range(5)), candidates.take(range(5, 50))
        with pytest.raises(ProtocolInvariantError):
            check_partition(small_pool, d1, candidates, selected, unselected.take(range(10)), rest.concat(unselected), False)


class TestExperimentRunner:
    """Test the sweep over BS counts, strategies and realizations"""

    def test_bookkeeping(self, toy_experiment_config):
        """Test 2 strategies x 2 BS counts x 3 realizations"""
        config = toy_experiment_config.model_copy(
            update={"strategies": [Strategy.RANDOM, Strategy.GENIE], "n_realizations": 3}
        )
        results = ExperimentRunner(config).run()
        assert len(results) == 12
        assert [r.sort_key for r in results] == sorted(r.sort_key for r in results)
        summary = summarize(results)
        for test_set in TestSet:
            assert len([row for row in summary.rows if row.test_set == test_set]) == 4
        assert all(row.n_valid == 3 and row.n_total == 3 for row in summary.rows)

    def test_deterministic(self, toy_experiment_config):
        """Test identical results for identical configs"""
        config = toy_experiment_config.model_copy(update={"strategies": [Strategy.PRACTICAL], "bs_counts": [4]})
        first = ExperimentRunner(config).run()
        second = ExperimentRunner(config).run()
        assert [r.model_dump() for r in first] == [r.model_dump() for r in second]

    def test_worker_count_does_not_change_results(self, toy_experiment_config):
        """Test that parallel jobs reproduce the sequential run"""
        config = toy_experiment_config.model_copy(update={"strategies": [Strategy.RANDOM], "bs_counts": [4]})
        sequential = ExperimentRunner(config).run()
        parallel = ExperimentRunner(config.model_copy(update={"workers": 2})).run()
        assert [r.model_dump() for r in parallel] == [r.model_dump() for r in sequential]

    def test_optional_outputs(self, toy_experiment_config, tmp_path):
        """Test checkpoint and selection files reported by the runner"""
        config = toy_experiment_config.model_copy(update={
            "strategies": [Strategy.GENIE, Strategy.PRACTICAL],
            "bs_counts": [4],
            "n_realizations": 1,
            "save_checkpoints": True,
            "save_selections": True,
        })
        runner = ExperimentRunner(config, output_dir=tmp_path)
        runner.run()
        assert runner.written_files == [
            "selections/bs04_r000_genie.csv",
            "selections/bs04_r000_practical.csv",
            "checkpoints/nn1a_bs04_r000.ckpt",
            "checkpoints/nn1b_bs04_r000.ckpt",
        ]
        assert all((tmp_path / name).is_file() for name in runner.written_files)

    def test_seeds_for_manifest(self, toy_experiment_config):
        """Test that every stage seed of every job is recorded"""
        config = toy_experiment_config.model_copy(update={"strategies": [Strategy.GENIE, Strategy.PRACTICAL]})
        seeds = ExperimentRunner(config).seeds()
        assert seeds["realization_1"] == realization_seed(config, 1)
        stages = stage_seeds(config, 1, 4)
        assert seeds["r001_pool"] == stages["pool"]
        assert seeds["r001_partition"] == stages["partition"]
        assert (seeds["r001_bs04_nn1a"], seeds["r001_bs04_nn1b"]) == (stages["nn1a"], stages["nn1b"])
        practical = strategy_seeds(config, 0, 18, Strategy.PRACTICAL)
        assert seeds["r000_bs18_practical_select"] == practical["select"]
        assert seeds["r000_bs18_practical_fine_tune"] == practical["fine_tune"]
        # 2 realizations x (1 + 2 + 2 BS x (2 + 2 strategies x 2))
        assert len(seeds) == 2 * (3 + 2 * 6)

    def test_run_experiment(self, toy_experiment_config):
        """Test the aggregated sweep"""
        config = toy_experiment_config.model_copy(update={"strategies": [Strategy.RANDOM], "n_realizations": 1})
        summary = run_experiment(config)
        assert summary.bs_counts == [4, 18]
        assert summary.strategies == [Strategy.RANDOM]


class TestSummarize:
    """Test aggregation over realizations"""

    def test_mean_gain(self):
        """Test gains {0.05, 0.07} average to 0.06"""
        results = [make_result(q90_after=9.5, realization=0), make_result(q90_after=9.3, realization=1)]
        row = summarize(results).get(18, Strategy.RANDOM, TestSet.TEST1)
        assert row.mean_gain == pytest.approx(0.06, rel=1e-12)
        assert row.mean_q90_after_m == pytest.approx(9.4)
        assert row.mean_q90_initial_m == 10.0

    def test_single_realization(self):
        """Test that one realization is its own mean"""
        row = summarize([make_result(q90_after=7.0)]).get(18, Strategy.RANDOM, TestSet.TEST2)
        assert row.mean_gain == gain(10.0, 7.0)
        assert (row.n_valid, row.n_total) == (1, 1)

    def test_summation_oracle_and_order(self):
        """Test 100 random gains against exact accumulation, in any input order"""
        rng = np.random.default_rng(1)
        afters = rng.uniform(1.0, 19.0, size=100)
        results = [make_result(q90_after=float(a), realization=i) for i, a in enumerate(afters)]
        expected = float(sum(Fraction(r.metrics[TestSet.TEST1].gain) for r in results) / 100)
        row = summarize(results).get(18, Strategy.RANDOM, TestSet.TEST1)
        assert row.mean_gain == pytest.approx(expected, rel=1e-12)
        shuffled = [results[i] for i in rng.permutation(100)]
        assert summarize(shuffled).get(18, Strategy.RANDOM, TestSet.TEST1).mean_gain == row.mean_gain

    def test_diverged_excluded(self):
        """Test that invalid realizations are counted but not averaged"""
        results = [make_result(q90_after=8.0), make_result(realization=1, status=RealizationStatus.DIVERGED)]
        row = summarize(results).get(18, Strategy.RANDOM, TestSet.TEST1)
        assert row.mean_gain == pytest.approx(0.2)
        assert (row.n_valid, row.n_total) == (1, 2)

    def test_all_diverged(self):
        """Test empty means when no realization is valid"""
        row = summarize([make_result(status=RealizationStatus.DIVERGED)]).get(18, Strategy.RANDOM, TestSet.TEST1)
        assert row.mean_gain is None
        assert row.n_valid == 0

    def test_empty(self):
        """Test empty-input"""
        with pytest.raises(EmptyInputError):
            summarize([])


@pytest.fixture
def reference_summary():
    """Random 6%, Genie 20%, Rand60 30%, Rand100 40% on a 10 m initial Q(0.9)."""
    return summarize([
        make_result(Strategy.RANDOM, q90_after=9.4),
        make_result(Strategy.GENIE, q90_after=8.0),
        make_result(Strategy.PRACTICAL, q90_after=8.5),
        make_result(Strategy.RAND60, q90_after=7.0),
        make_result(Strategy.RAND100, q90_after=6.0),
    ])


class TestReports:
    """Test derived report tables"""

    def test_table_one(self, reference_summary):
        """Test mean percent gains with the D1-only row at 0"""
        table = table_one(reference_summary)
        assert list(table) == [D1_ONLY, "random", "genie", "practical", "rand60", "rand100"]
        assert table[D1_ONLY][TestSet.TEST1] == 0.0
        assert table["random"][TestSet.TEST1] == pytest.approx(6.0)
        assert table["rand100"][TestSet.TEST2] == pytest.approx(40.0)

    def test_achievable_share(self, reference_summary):
        """Test 6/40 = 15% and 20/40 = 50%"""
        fractions = achievable_gain_fractions(reference_summary)[(18, TestSet.TEST1)]
        assert fractions[Strategy.RANDOM] == pytest.approx(0.15)
        assert fractions[Strategy.GENIE] == pytest.approx(0.5)
        assert fractions[Strategy.RAND100] == pytest.approx(1.0)

    def test_no_rand100(self):
        """Test that shares need a Rand100 reference"""
        assert achievable_gain_fractions(summarize([make_result(Strategy.RANDOM)])) == {}

    def test_data_savings(self, reference_summary):
        """Test interpolation along the random curve"""
        estimates = {(e.strategy, e.test_set): e for e in data_savings(reference_summary, 10.0)}
        genie = estimates[(Strategy.GENIE, TestSet.TEST1)]
        # 8.0 m lies between (10 %, 9.4 m) and (60 %, 7.0 m)
        assert genie.equivalent_random_percent == pytest.approx(10.0 + 1.4 / 2.4 * 50.0)
        assert genie.data_fraction == pytest.approx(10.0 / (10.0 + 1.4 / 2.4 * 50.0))
        practical = estimates[(Strategy.PRACTICAL, TestSet.TEST2)]
        assert practical.equivalent_random_percent == pytest.approx(10.0 + 0.9 / 2.4 * 50.0)

    def test_d1_only_reference(self):
        """Test that the reference comes from the strategy with the most valid realizations"""
        summary = summarize([
            make_result(Strategy.RANDOM, q90_initial=10.0, realization=0),
            make_result(Strategy.RANDOM, q90_initial=12.0, realization=1),
            make_result(Strategy.GENIE, q90_initial=10.0, realization=0),
            make_result(Strategy.GENIE, realization=1, status=RealizationStatus.DIVERGED),
        ])
        assert d1_only_q90(summary, 18, TestSet.TEST1) == pytest.approx(11.0)
        assert d1_only_q90(summary, 4, TestSet.TEST1) is None
