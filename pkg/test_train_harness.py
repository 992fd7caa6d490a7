#!/usr/bin/env python3
"""
Tests for the experiment runner: SFT, alignment variants, adversary training,
evaluation, sweeps and report formatting.
"""

import math

import numpy as np
import pytest

import sobolev_dpo
import train_harness
from adversary import ConditionalTargetAdversary, LearnedAdversary, TrustRegion
from colored_noise import NoiseSampler
from config import DegradeConfig, ExperimentConfig, SynthConfig
from data_models import EvalRow, Field2D, RunReport
from diagnostics import log_spectral_distance, psnr
from errors import DivergenceError, ShapeMismatchError, ValidationError
from param_field import ParametricField, VelocityMLP, check_gradient
from spectral_core import make_sobolev
from synth_data import Dataset, build_dataset
from train_harness import (
    ABLATION_VARIANTS, EvalTable, ExperimentRunner, cfm_batch_loss, dataset_alpha, format_report, load_policy,
    run_ablation, run_s_sweep, split_holdout,
)


GRID = (4, 4)
LN2 = math.log(2.0)


def small_config(**changes) -> ExperimentConfig:
    base = dict(
        variant="sdpo", grid=GRID, hidden=4, steps=3, batch=2, lr=1e-2, beta=1.0, seed=3, eval_count=2,
        euler_steps=4, adversary_width=4, adversary_steps=2, log_every=0,
    )
    base.update(changes)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def dataset():
    return build_dataset(SynthConfig(grid=GRID, count=6, seed=1), DegradeConfig(downscale_factor=2))


@pytest.fixture(scope="module")
def toy_dataset():
    return build_dataset(SynthConfig(grid=(16, 16), count=100, seed=42), DegradeConfig())


@pytest.fixture(scope="module")
def powerlaw_dataset():
    return build_dataset(SynthConfig(spectral_slope=1.2, grid=(32, 32), count=100, seed=42), DegradeConfig())


@pytest.fixture
def sft_policy():
    model = VelocityMLP(GRID, 4)
    return ParametricField(model, model.init_params(seed=9, zero_final=False))


class TestHoldout:
    def test_last_pairs_held_out(self, dataset):
        train, held_out = split_holdout(dataset, 2)
        assert len(train) == 4
        assert held_out[0][1] is dataset.pairs[4][1]
        assert held_out[1][1] is dataset.pairs[5][1]

    def test_small_dataset_uses_all_pairs(self, dataset, caplog):
        small = Dataset(pairs=dataset.pairs[:2])
        train, held_out = split_holdout(small, 2)
        assert len(train) == len(held_out) == 2
        assert "training and evaluating on all of them" in caplog.text

    def test_empty_dataset(self):
        with pytest.raises(ValidationError):
            split_holdout(Dataset(pairs=[]), 1)


class TestSft:
    def test_cfm_batch_loss_of_zero_field(self):
        model = VelocityMLP(GRID, 4)
        net = ParametricField(model, model.init_params(seed=0))
        target = np.random.default_rng(1).standard_normal((3,) + GRID)
        zeros = np.zeros((3,) + GRID)
        loss, _ = cfm_batch_loss(net, zeros, zeros, np.full(3, 0.5), target)
        assert loss == pytest.approx(float(np.mean(target ** 2)))

    def test_cfm_gradient_matches_finite_differences(self, sft_policy):
        rng = np.random.default_rng(4)
        xt, cond, target = (rng.standard_normal((3,) + GRID) for _ in range(3))
        t = np.array([0.1, 0.5, 0.9])
        _, grads = cfm_batch_loss(sft_policy, xt, cond, t, target)

        def objective(vector):
            return cfm_batch_loss(sft_policy.with_params(sft_policy.params.with_flat(vector)), xt, cond, t, target)[0]

        report = check_gradient(objective, sft_policy.params.flatten(), grads.flatten(), probes=50, epsilon=1e-5,
                                floor=1e-5)
        assert report.passed(1e-4)

    @pytest.mark.slow
    def test_default_run_halves_the_loss(self, toy_dataset):
        _, report = ExperimentRunner(ExperimentConfig(log_every=0)).run_sft(toy_dataset)
        assert report.final_loss < 0.5 * report.initial_loss

    def test_zero_lr_gives_flat_curve(self, dataset):
        _, report = ExperimentRunner(small_config(lr=0.0)).run_sft(dataset)
        values = [v for _, v in report.loss_curve]
        assert len(values) == 4
        assert values == [values[0]] * 4

    def test_curve_spans_every_step(self, dataset):
        _, report = ExperimentRunner(small_config()).run_sft(dataset)
        assert [step for step, _ in report.loss_curve] == [0, 1, 2, 3]
        assert report.variant == "sft"

    def test_same_seed_same_run(self, dataset):
        first, report_a = ExperimentRunner(small_config()).run_sft(dataset)
        second, report_b = ExperimentRunner(small_config()).run_sft(dataset)
        assert report_a == report_b
        assert first.params.bytes_equal(second.params)

    def test_grid_mismatch(self, dataset):
        with pytest.raises(ShapeMismatchError):
            ExperimentRunner(small_config(grid=(8, 8))).run_sft(dataset)

    def test_divergence_is_reported(self, dataset, mocker):
        params = VelocityMLP(GRID, 4).init_params(seed=0)
        mocker.patch("train_harness.cfm_batch_loss", return_value=(float("nan"), params))
        with pytest.raises(DivergenceError) as excinfo:
            ExperimentRunner(small_config()).run_sft(dataset)
        assert excinfo.value.step == 0

    def test_outputs_written(self, dataset, tmp_path):
        runner = ExperimentRunner(small_config(), config_echo="steps=3\n", output_root=tmp_path)
        policy, _ = runner.run_sft(dataset)
        run_dir = tmp_path / "sft"
        assert (run_dir / "config.txt").read_text(encoding="utf-8") == "steps=3\n"
        assert (run_dir / "report.txt").read_text(encoding="utf-8").startswith("variant=sft\n")
        assert load_policy(run_dir / "policy.prm").params.bytes_equal(policy.params)

    def test_repeated_runs_write_identical_reports(self, dataset, tmp_path):
        ExperimentRunner(small_config(), output_root=tmp_path / "a").run_sft(dataset)
        ExperimentRunner(small_config(), output_root=tmp_path / "b").run_sft(dataset)
        for name in ("report.txt", "policy.prm"):
            assert (tmp_path / "a" / "sft" / name).read_bytes() == (tmp_path / "b" / "sft" / name).read_bytes()


class TestAlignment:
    @pytest.mark.parametrize("variant", ["dpo_l2", "sdpo"])
    def test_first_loss_is_ln2(self, dataset, sft_policy, variant):
        _, report = ExperimentRunner(small_config(variant=variant)).run_alignment(sft_policy, dataset)
        assert report.initial_loss == pytest.approx(LN2, abs=1e-12)
        assert len(report.loss_curve) == 3
        assert {"accuracy", "reward_margin"} <= set(report.metrics)

    @pytest.mark.parametrize("variant", ["dpo_l2", "sdpo", "asdpo"])
    def test_first_step_gradient_matches_finite_differences(self, dataset, sft_policy, mocker, variant):
        adversary = None
        if variant == "asdpo":
            model = VelocityMLP(GRID, 4)
            correction = ParametricField(model, model.init_params(seed=5, zero_final=False))
            op = make_sobolev(1.5, *GRID)
            adversary = LearnedAdversary(sft_policy.frozen_copy(), correction, op, TrustRegion(0.1))
        loss_fn = getattr(sobolev_dpo, f"{variant}_loss")
        spy = mocker.spy(train_harness, f"{variant}_loss")
        ExperimentRunner(small_config(variant=variant, steps=1)).run_alignment(sft_policy, dataset, adversary)

        triplets, current, *rest = spy.call_args_list[0].args
        assert current.params.bytes_equal(sft_policy.params)
        result = loss_fn(triplets, current, *rest)
        assert np.any(result.grads.flatten())

        def objective(vector):
            return loss_fn(triplets, current.with_params(current.params.with_flat(vector)), *rest).loss

        report = check_gradient(objective, current.params.flatten(), result.grads.flatten(),
                                probes=30, epsilon=1e-5, floor=1e-5)
        assert report.passed(1e-4)

    def test_one_noise_draw_per_triplet(self, dataset, sft_policy, mocker):
        draws = mocker.spy(sobolev_dpo, "sample_white")
        ExperimentRunner(small_config(steps=3, batch=2)).run_alignment(sft_policy, dataset)
        assert draws.call_count == 3 * 2

    def test_reference_untouched(self, dataset, sft_policy):
        before = sft_policy.frozen_copy()
        aligned, _ = ExperimentRunner(small_config()).run_alignment(sft_policy, dataset)
        assert sft_policy.params.bytes_equal(before.params)
        assert not aligned.params.bytes_equal(before.params)

    def test_order_zero_matches_l2(self, dataset, sft_policy):
        runner = ExperimentRunner(small_config())
        sdpo, sdpo_report = runner.derive(variant="sdpo", sobolev_s=0.0).run_alignment(sft_policy, dataset)
        l2, l2_report = runner.derive(variant="dpo_l2").run_alignment(sft_policy, dataset)
        assert sdpo_report.loss_curve == l2_report.loss_curve
        assert sdpo.params.bytes_equal(l2.params)

    def test_conditional_target_adversary_pins_ln2(self, dataset, sft_policy):
        runner = ExperimentRunner(small_config(variant="asdpo"))
        _, report = runner.run_alignment(sft_policy, dataset, ConditionalTargetAdversary())
        for _, value in report.loss_curve:
            assert value == pytest.approx(LN2, abs=1e-6)

    def test_asdpo_needs_adversary(self, dataset, sft_policy):
        with pytest.raises(ValidationError):
            ExperimentRunner(small_config(variant="asdpo")).run_alignment(sft_policy, dataset)

    def test_sft_only_is_not_an_alignment_variant(self, dataset, sft_policy):
        with pytest.raises(ValidationError):
            ExperimentRunner(small_config(variant="sft_only")).run_alignment(sft_policy, dataset)

    def test_policy_grid_checked(self, dataset):
        model = VelocityMLP((2, 2), 4)
        with pytest.raises(ShapeMismatchError):
            ExperimentRunner(small_config()).run_alignment(ParametricField(model, model.init_params(0)), dataset)


class TestAdversaryTraining:
    def test_trained_adversary_is_saved(self, dataset, sft_policy, tmp_path):
        runner = ExperimentRunner(small_config(), output_root=tmp_path)
        adversary, report = runner.run_adversary_training(sft_policy, dataset)
        assert report.variant == "adversary"
        assert "final_energy" in report.metrics
        assert (tmp_path / "adversary" / "adversary.prm").is_file()
        x0 = Field2D(np.random.default_rng(0).standard_normal(GRID))
        velocity = adversary.velocity_for(x0)(x0, 0.5, dataset.pairs[0][0])
        assert velocity.shape == GRID


class TestEvaluation:
    def test_zero_policy_returns_noise(self, dataset):
        runner = ExperimentRunner(small_config())
        pairs = dataset.pairs[:2]
        table = runner.evaluate(lambda xt, t, c: Field2D.zeros(*xt.shape), pairs)

        sampler = NoiseSampler(runner.cfg.resolved_eval_seed(), GRID)
        for row, (_, target) in zip(table.rows, pairs):
            x0 = Field2D(sampler.white_batch(1)[0])
            assert row.psnr == pytest.approx(psnr(x0, target), rel=1e-12)
            assert row.lsd == pytest.approx(log_spectral_distance(x0, target), rel=1e-12)
        assert math.isnan(table.slope_error)

    def test_repeatable(self, dataset, sft_policy):
        runner = ExperimentRunner(small_config())
        first = runner.evaluate(sft_policy, dataset.pairs)
        assert first.to_csv() == runner.evaluate(sft_policy, dataset.pairs).to_csv()

    def test_holdout_uses_manifest_slope(self, dataset, sft_policy):
        table = ExperimentRunner(small_config()).evaluate_holdout(sft_policy, dataset)
        assert len(table.rows) == 2
        assert np.isfinite(table.slope_error)

    def test_no_pairs(self, sft_policy):
        with pytest.raises(ValidationError):
            ExperimentRunner(small_config()).evaluate(sft_policy, [])

    def test_dataset_alpha(self, dataset):
        assert dataset_alpha(dataset) == pytest.approx(1.2)
        assert dataset_alpha(Dataset(pairs=dataset.pairs)) is None


class TestReports:
    def test_format_report(self):
        report = RunReport(variant="sdpo", config_echo="", loss_curve=[(0, 0.5), (1, 0.25)],
                           metrics={"accuracy": 1.0}, wall_time=12.5)
        assert format_report(report).splitlines() == [
            "variant=sdpo", "points=2", "initial_loss=0.5", "final_loss=0.25", "accuracy=1",
            "", "step,loss", "0,0.5", "1,0.25",
        ]

    def test_eval_table_csv(self):
        table = EvalTable([EvalRow(0, 10.0, 1.0), EvalRow(1, 20.0, 3.0)])
        assert table.to_csv().splitlines() == ["index,psnr,lsd", "0,10,1", "1,20,3", "mean,15,2"]


class TestSweeps:
    def test_sweep_needs_two_orders(self, dataset, sft_policy):
        with pytest.raises(ValidationError):
            run_s_sweep(ExperimentRunner(small_config()), [1.5], dataset, sft_policy)

    def test_order_zero_row_matches_l2_run(self, dataset, sft_policy):
        runner = ExperimentRunner(small_config())
        rows = run_s_sweep(runner, [0.0, 1.5], dataset, sft_policy)
        assert [r.s for r in rows] == [0.0, 1.5]

        stage = runner.derive(variant="dpo_l2")
        aligned, _ = stage.run_alignment(sft_policy, dataset)
        assert rows[0].psnr == stage.evaluate_holdout(aligned, dataset).mean_psnr

    def test_ablation_rows(self, dataset):
        rows = run_ablation(ExperimentRunner(small_config(steps=2)), [5], dataset)
        assert [r.variant for r in rows] == list(ABLATION_VARIANTS)
        assert all(r.seed == 5 for r in rows)
        assert all(np.isfinite(r.final_loss) for r in rows)

    def test_ablation_needs_seeds(self, dataset):
        with pytest.raises(ValidationError):
            run_ablation(ExperimentRunner(small_config()), [], dataset)

    @pytest.mark.slow
    def test_sobolev_alignment_tracks_the_spectrum_better(self, powerlaw_dataset):
        runner = ExperimentRunner(ExperimentConfig(grid=(32, 32), log_every=0))
        rows = run_ablation(runner, [1, 2, 3], powerlaw_dataset)
        by_key = {(r.seed, r.variant): r for r in rows}
        slope_wins = sum(by_key[seed, "sdpo"].slope_error <= by_key[seed, "dpo_l2"].slope_error for seed in (1, 2, 3))
        lsd_wins = sum(by_key[seed, "sdpo"].lsd <= by_key[seed, "dpo_l2"].lsd for seed in (1, 2, 3))
        assert slope_wins >= 2
        assert lsd_wins >= 2

    @pytest.mark.slow
    def test_higher_order_lowers_slope_error(self, powerlaw_dataset):
        runner = ExperimentRunner(ExperimentConfig(grid=(32, 32), log_every=0))
        rows = run_s_sweep(runner, [0.0, 1.5], powerlaw_dataset)
        assert rows[1].slope_error <= rows[0].slope_error
