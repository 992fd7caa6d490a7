"""
Experiment Harness for the Sobolev Alignment Toolkit

End-to-end pipelines: SFT pretraining with the flow-matching loss, reference
freezing, the preference-alignment variants (dpo_l2, sdpo, asdpo), adversary
training, held-out evaluation, Sobolev-order sweeps and the four-variant
ablation.

Every run is a single-threaded deterministic loop. All randomness comes from
cfg.seed through derive_seed: minibatch indices ("batch"), path noise
("noise"), times ("time"), network init ("init") and evaluation noise ("eval").
The last eval_count pairs of a dataset are held out from training.

Created: October 2026
Changes: Shared SFT policy across sweep and ablation stages
"""

import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from adversary import LearnedAdversary, TrustRegion, train_adversary
from colored_noise import NoiseSampler, derive_seed
from config import ExperimentConfig
from data_models import AblationRow, EvalRow, Field2D, RunReport, SweepRow
from diagnostics import log_spectral_distance, psd_slope_error, psnr
from errors import DivergenceError, ShapeMismatchError, ValidationError
from file_manager import read_params, write_params
from flow_match import TrajectoryConfig, euler_integrate, sample_times
from param_field import AdamState, FieldParams, ParametricField, VelocityMLP, adam_step, warmup_lr
from sobolev_dpo import PreferenceBatch, asdpo_loss, dpo_l2_loss, sdpo_loss
from spectral_core import make_sobolev
from synth_data import Dataset, make_artifact_proxy


logger = logging.getLogger(__name__)

ALIGNMENT_VARIANTS = ("dpo_l2", "sdpo", "asdpo")
ABLATION_VARIANTS = ("sft_only", "dpo_l2", "sdpo", "asdpo")
MONITOR_SIZE = 32
POLICY_FILE = "policy.prm"
ADVERSARY_FILE = "adversary.prm"

Pairs = List[Tuple[Field2D, Field2D]]


def split_holdout(dataset: Dataset, eval_count: int) -> Tuple[Pairs, Pairs]:
    """(training pairs, held-out pairs); the held-out pairs are the last eval_count."""
    pairs = list(dataset.pairs)
    if not pairs:
        raise ValidationError("Dataset holds no pairs")
    if len(pairs) <= eval_count:
        logger.warning(f"Dataset has {len(pairs)} pairs, not more than eval_count={eval_count}; "
                       f"training and evaluating on all of them")
        return pairs, pairs
    return pairs[:-eval_count], pairs[-eval_count:]


def draw_indices(sampler: NoiseSampler, count: int, n: int) -> np.ndarray:
    return np.minimum((sampler.uniform(count) * n).astype(np.int64), n - 1)


def cfm_batch_loss(net: ParametricField, xt: np.ndarray, cond: np.ndarray, t: np.ndarray,
                   target: np.ndarray) -> Tuple[float, FieldParams]:
    """Mean squared velocity error over batch and cells, with its parameter gradient."""
    v, cache = net.forward_batch(xt, cond, t)
    diff = v - target
    grads, _ = net.backward_batch(cache, 2.0 * diff / diff.size)
    return float(np.mean(diff * diff)), grads


def format_report(report: RunReport) -> str:
    """key=value header, a blank line, then the `step,loss` CSV curve.

    Wall time is left out so that repeated runs write identical files.
    """
    header = {
        "variant": report.variant,
        "points": str(len(report.loss_curve)),
        "initial_loss": f"{report.initial_loss:.17g}",
        "final_loss": f"{report.final_loss:.17g}",
    }
    header.update({name: f"{value:.17g}" for name, value in sorted(report.metrics.items())})
    lines = [f"{key}={value}" for key, value in header.items()]
    lines += ["", "step,loss"]
    lines += [f"{step},{value:.17g}" for step, value in report.loss_curve]
    return "\n".join(lines) + "\n"


def load_policy(path: Path) -> ParametricField:
    model, params = read_params(path)
    return ParametricField(model, params)


def load_adversary(path: Path, base: ParametricField, cfg: ExperimentConfig) -> LearnedAdversary:
    """Rebuild a trained adversary around a frozen copy of its base policy."""
    correction = load_policy(path)
    if correction.grid != base.grid:
        raise ShapeMismatchError(base.grid, correction.grid, "adversary grid")
    return LearnedAdversary(
        base=base.frozen_copy(),
        correction=correction,
        op=make_sobolev(cfg.sobolev_s, *base.grid),
        trust=TrustRegion(cfg.trust_epsilon, cfg.trust_schedule),
    )


class EvalTable:
    """Per-pair and mean reconstruction metrics on held-out pairs."""

    def __init__(self, rows: List[EvalRow], slope_error: float = float("nan")):
        self.rows = rows
        self.slope_error = slope_error

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_lsd(self) -> float:
        return float(np.mean([r.lsd for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["index,psnr,lsd"]
        lines += [f"{r.index},{r.psnr:.17g},{r.lsd:.17g}" for r in self.rows]
        lines.append(f"mean,{self.mean_psnr:.17g},{self.mean_lsd:.17g}")
        return "\n".join(lines) + "\n"


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["s,psnr,lsd,slope_error"]
    lines += [f"{r.s:.17g},{r.psnr:.17g},{r.lsd:.17g},{r.slope_error:.17g}" for r in rows]
    return "\n".join(lines) + "\n"


def ablation_to_csv(rows: Sequence[AblationRow]) -> str:
    lines = ["seed,variant,psnr,lsd,slope_error,final_loss"]
    lines += [
        f"{r.seed},{r.variant},{r.psnr:.17g},{r.lsd:.17g},{r.slope_error:.17g},{r.final_loss:.17g}"
        for r in rows
    ]
    return "\n".join(lines) + "\n"


class ExperimentRunner:
    """Runs the training, alignment and evaluation stages of one experiment."""

    def __init__(self, cfg: ExperimentConfig, config_echo: Optional[str] = None,
                 output_root: Optional[Path] = None):
        """
        Initialize the runner.

        Args:
            cfg: Experiment settings
            config_echo: Exact config text to store with every run (defaults to cfg.echo())
            output_root: Directory for run outputs; nothing is written when None
        """
        self.cfg = cfg
        self.config_echo = config_echo if config_echo is not None else cfg.echo()
        self.output_root = Path(output_root) if output_root is not None else None
        self.logger = logging.getLogger(__name__)

    def derive(self, output_root: Optional[Path] = None, **changes) -> "ExperimentRunner":
        """Runner for a modified config, e.g. another variant or seed."""
        root = output_root if output_root is not None else self.output_root
        return ExperimentRunner(self.cfg.with_changes(**changes), self.config_echo, root)

    def _trajectory(self) -> TrajectoryConfig:
        return TrajectoryConfig(steps=self.cfg.euler_steps, t_max=self.cfg.t_max, horizon=self.cfg.horizon)

    def _check_grid(self, dataset: Dataset) -> None:
        if dataset.shape != tuple(self.cfg.grid):
            raise ShapeMismatchError(tuple(self.cfg.grid), dataset.shape, "dataset grid")

    def _loser_endpoints(self, pairs: Pairs) -> List[Field2D]:
        """Artifact proxies of the targets; item i uses derive_seed(seed, "loser", i)."""
        artifact = self.cfg.artifact()
        return [make_artifact_proxy(x1, artifact, self.cfg.seed, i) for i, (_, x1) in enumerate(pairs)]

    def _optimize(self, params: FieldParams, micro_step: Callable[[FieldParams], Tuple[float, FieldParams]],
                  report: RunReport, what: str,
                  monitor: Optional[Callable[[FieldParams], float]] = None) -> FieldParams:
        """AdamW loop with warmup and gradient accumulation.

        With a monitor, the curve holds the monitor value before every step and
        after the last one; otherwise it holds the training loss of each step.
        """
        cfg = self.cfg
        adam = AdamState.zeros_like(params)

        for step in range(cfg.steps):
            if monitor is not None:
                report.record(step, self._finite(monitor(params), step, what))

            losses, total = [], None
            for _ in range(cfg.grad_accum):
                loss, grads = micro_step(params)
                losses.append(loss)
                total = grads.flatten() if total is None else total + grads.flatten()
            loss = self._finite(float(np.mean(losses)), step, what)
            if not np.all(np.isfinite(total)):
                self.logger.error(f"{what} gradient is not finite at step {step}")
                raise DivergenceError(step, f"{what} gradient")
            grads = grads if cfg.grad_accum == 1 else grads.with_flat(total / cfg.grad_accum)

            if monitor is None:
                report.record(step, loss)
            lr = warmup_lr(cfg.lr, step, cfg.warmup_steps)
            params, adam = adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                                     cfg.weight_decay)

            self.logger.debug(f"{what} step {step}: {loss:.6g} (lr {lr:.3g})")
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                self.logger.info(f"{what} step {step + 1}/{cfg.steps}: {loss:.6g}")

        if monitor is not None:
            report.record(cfg.steps, self._finite(monitor(params), cfg.steps, what))
        return params

    def _finite(self, value: float, step: int, what: str) -> float:
        if not np.isfinite(value):
            self.logger.error(f"{what} diverged at step {step}")
            raise DivergenceError(step, what)
        return value

    def run_sft(self, dataset: Dataset) -> Tuple[ParametricField, RunReport]:
        """
        Pretrain the velocity field with the conditional flow-matching loss.

        The loss curve is measured on a fixed monitor batch (drawn from the
        "eval" seed component), so lr=0 gives a flat curve.

        Returns:
            The trained policy and its report

        Raises:
            DivergenceError: On a non-finite loss or gradient
        """
        cfg = self.cfg
        self._check_grid(dataset)
        self.logger.info(f"Starting SFT: {cfg.steps} steps, batch {cfg.batch}, lr {cfg.lr}, seed {cfg.seed}")
        started = time.perf_counter()

        train, _ = split_holdout(dataset, cfg.eval_count)
        conds = np.stack([c.values for c, _ in train])
        targets = np.stack([x1.values for _, x1 in train])
        model = VelocityMLP(cfg.grid, cfg.hidden)
        policy = ParametricField(model, model.init_params(cfg.seed))

        batch_sampler = NoiseSampler(derive_seed(cfg.seed, "batch"), cfg.grid)
        noise_sampler = NoiseSampler(derive_seed(cfg.seed, "noise"), cfg.grid)
        time_sampler = NoiseSampler(derive_seed(cfg.seed, "time"), cfg.grid)
        batch = min(cfg.batch, len(train))

        def micro_step(params: FieldParams) -> Tuple[float, FieldParams]:
            index = draw_indices(batch_sampler, batch, len(train))
            x0 = noise_sampler.white_batch(batch)
            t = sample_times(time_sampler, batch, horizon=1.0)
            w = t[:, None, None]
            xt = (1.0 - w) * x0 + w * targets[index]
            return cfm_batch_loss(policy.with_params(params), xt, conds[index], t, targets[index] - x0)

        monitor_sampler = NoiseSampler(derive_seed(cfg.seed, "eval", 1), cfg.grid)
        m_index = np.arange(MONITOR_SIZE) % len(train)
        m_x0 = monitor_sampler.white_batch(MONITOR_SIZE)
        m_t = sample_times(monitor_sampler, MONITOR_SIZE, horizon=1.0)
        m_w = m_t[:, None, None]
        m_xt = (1.0 - m_w) * m_x0 + m_w * targets[m_index]
        m_target = targets[m_index] - m_x0

        def monitor(params: FieldParams) -> float:
            v, _ = policy.with_params(params).forward_batch(m_xt, conds[m_index], m_t)
            return float(np.mean((v - m_target) ** 2))

        report = RunReport(variant="sft", config_echo=self.config_echo)
        try:
            params = self._optimize(policy.params, micro_step, report, "CFM loss", monitor)
        except DivergenceError as e:
            self.logger.error(f"SFT aborted: {e}")
            raise

        trained = policy.with_params(params)
        report.wall_time = time.perf_counter() - started
        self._save("sft", report, trained)
        self._log_final_stats(report)
        return trained, report

    def run_alignment(self, sft_policy: ParametricField, dataset: Dataset,
                      adversary=None) -> Tuple[ParametricField, RunReport]:
        """
        Align a copy of the SFT policy against a frozen reference copy.

        dpo_l2 and sdpo compare against artifact-proxy losers; asdpo draws its
        losers from the adversary by coupled sampling. The policy starts equal
        to the reference, so the first recorded loss is ln 2.

        Args:
            sft_policy: Pretrained policy; never modified
            dataset: Pairs to draw preference triplets from
            adversary: Trained adversary (asdpo only); anything with velocity_for(x0)

        Raises:
            ValidationError: Variant is not an alignment variant, or asdpo lacks an adversary
            DivergenceError: On a non-finite loss or gradient
        """
        cfg = self.cfg
        if cfg.variant not in ALIGNMENT_VARIANTS:
            raise ValidationError(f"Variant '{cfg.variant}' is not an alignment variant {ALIGNMENT_VARIANTS}")
        if cfg.variant == "asdpo" and adversary is None:
            raise ValidationError("asdpo alignment needs a trained adversary")
        self._check_grid(dataset)
        if sft_policy.grid != tuple(cfg.grid):
            raise ShapeMismatchError(tuple(cfg.grid), sft_policy.grid, "policy grid")

        self.logger.info(f"Starting {cfg.variant} alignment: {cfg.steps} steps, s={cfg.sobolev_s}, "
                         f"beta={cfg.beta}, seed {cfg.seed}")
        started = time.perf_counter()

        train, _ = split_holdout(dataset, cfg.eval_count)
        losers = self._loser_endpoints(train)
        reference = sft_policy.frozen_copy()
        policy = sft_policy.with_params(sft_policy.params)
        op = make_sobolev(cfg.sobolev_s, *cfg.grid)

        batch_sampler = NoiseSampler(derive_seed(cfg.seed, "batch"), cfg.grid)
        noise_sampler = NoiseSampler(derive_seed(cfg.seed, "noise"), cfg.grid)
        time_sampler = NoiseSampler(derive_seed(cfg.seed, "time"), cfg.grid)
        batch = min(cfg.batch, len(train))
        last: Dict[str, float] = {}

        def micro_step(params: FieldParams) -> Tuple[float, FieldParams]:
            index = draw_indices(batch_sampler, batch, len(train))
            triplets = PreferenceBatch.build(
                conds=[train[i][0] for i in index],
                winners=[train[i][1] for i in index],
                losers=[losers[i] for i in index],
                noise=noise_sampler, times=time_sampler, beta=cfg.beta,
                horizon=cfg.horizon, stratified=cfg.stratified,
            )
            current = policy.with_params(params)
            if cfg.variant == "dpo_l2":
                result = dpo_l2_loss(triplets, current, reference, cfg.t_max)
            elif cfg.variant == "sdpo":
                result = sdpo_loss(triplets, current, reference, op, cfg.t_max)
            else:
                result = asdpo_loss(triplets, current, reference, adversary, op, cfg.t_max)
            last["accuracy"] = result.accuracy
            last["reward_margin"] = result.reward_margin
            return result.loss, result.grads

        report = RunReport(variant=cfg.variant, config_echo=self.config_echo)
        try:
            params = self._optimize(policy.params, micro_step, report, f"{cfg.variant} loss")
        except DivergenceError as e:
            self.logger.error(f"{cfg.variant} alignment aborted: {e}")
            raise

        report.metrics.update(last)
        aligned = policy.with_params(params)
        report.wall_time = time.perf_counter() - started
        self._save(cfg.variant, report, aligned)
        self._log_final_stats(report)
        return aligned, report

    def run_adversary_training(self, policy: ParametricField,
                               dataset: Dataset) -> Tuple[LearnedAdversary, RunReport]:
        """
        Train the parametric adversary against a frozen copy of `policy`.

        Training states lie on paths toward artifact-proxy endpoints of the
        training pairs; the adversary's parameter file goes to <output>/adversary.
        """
        cfg = self.cfg
        self._check_grid(dataset)
        acfg = cfg.adversary()
        train, _ = split_holdout(dataset, cfg.eval_count)
        pairs = [(c, loser) for (c, _), loser in zip(train, self._loser_endpoints(train))]

        model = VelocityMLP(cfg.grid, acfg.width)
        correction = ParametricField(model, model.init_params(derive_seed(cfg.seed, "adversary")))
        op = make_sobolev(cfg.sobolev_s, *cfg.grid)
        trust = TrustRegion(acfg.epsilon, acfg.schedule)
        started = time.perf_counter()

        try:
            state = train_adversary(correction, policy, pairs, trust, acfg, op, cfg.t_max, cfg.horizon)
        except DivergenceError as e:
            self.logger.error(f"Adversary training aborted: {e}")
            raise

        trained = correction.with_params(state.params)
        adversary = LearnedAdversary(policy.frozen_copy(), trained, op, trust)
        report = RunReport(variant="adversary", config_echo=self.config_echo,
                           loss_curve=list(state.loss_curve), metrics={"final_energy": state.final_energy})
        report.wall_time = time.perf_counter() - started
        self._save("adversary", report, trained, ADVERSARY_FILE)
        self._log_final_stats(report)
        return adversary, report

    def evaluate(self, policy, pairs: Pairs, alpha: Optional[float] = None) -> EvalTable:
        """
        Reconstruct every pair by Euler integration from fresh noise and score it.

        Noise comes from the resolved eval seed, one field per pair in order,
        so repeated evaluations give identical tables.

        Args:
            policy: Velocity field called as (x_t, t, c)
            pairs: (condition, target) pairs
            alpha: Known spectral slope of the targets, for the PSD slope error
        """
        if not pairs:
            raise ValidationError("Evaluation needs at least one pair")
        shape = pairs[0][0].shape
        sampler = NoiseSampler(self.cfg.resolved_eval_seed(), shape)
        trajectory = self._trajectory()

        rows, samples = [], []
        for index, (cond, target) in enumerate(pairs):
            x0 = Field2D(sampler.white_batch(1)[0])
            sample = euler_integrate(policy, x0, cond, trajectory)
            samples.append(sample)
            rows.append(EvalRow(index=index, psnr=psnr(sample, target), lsd=log_spectral_distance(sample, target)))

        slope_error = psd_slope_error(samples, alpha) if alpha is not None else float("nan")
        table = EvalTable(rows, slope_error)
        self.logger.info(f"Evaluated {len(rows)} pairs: PSNR {table.mean_psnr:.3f} dB, "
                         f"LSD {table.mean_lsd:.3f} dB, slope error {slope_error:.4f}")
        return table

    def evaluate_holdout(self, policy, dataset: Dataset) -> EvalTable:
        _, held_out = split_holdout(dataset, self.cfg.eval_count)
        return self.evaluate(policy, held_out, dataset_alpha(dataset))

    def _save(self, name: str, report: RunReport, net: ParametricField, file_name: str = POLICY_FILE) -> None:
        """Write config echo, report and parameter file under <output_root>/<name>."""
        if self.output_root is None:
            return
        run_dir = self.output_root / name
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "config.txt").write_text(self.config_echo, encoding="utf-8")
            (run_dir / "report.txt").write_text(format_report(report), encoding="utf-8")
        except OSError as e:
            self.logger.error(f"Could not write run outputs to {run_dir}: {e}")
            raise
        write_params(run_dir / file_name, net.model, net.params)
        self.logger.info(f"Run outputs written to: {run_dir}")

    def _log_final_stats(self, report: RunReport) -> None:
        self.logger.info("=== Run Statistics ===")
        self.logger.info(f"Run: {report.variant}")
        self.logger.info(f"Curve points: {len(report.loss_curve)}")
        self.logger.info(f"Initial loss: {report.initial_loss:.6g}")
        self.logger.info(f"Final loss: {report.final_loss:.6g}")
        for name, value in sorted(report.metrics.items()):
            self.logger.info(f"{name}: {value:.6g}")
        self.logger.info(f"Wall time: {report.wall_time:.2f} seconds")


def dataset_alpha(dataset: Dataset) -> Optional[float]:
    """Spectral slope recorded in the dataset manifest, if any."""
    try:
        return float(dataset.manifest["spectral_slope"])
    except (KeyError, ValueError):
        return None


def run_s_sweep(runner: ExperimentRunner, s_values: Sequence[float], dataset: Dataset,
                sft_policy: Optional[ParametricField] = None) -> List[SweepRow]:
    """
    Align one sdpo policy per Sobolev order from a shared SFT policy.

    Every order uses the same seed, so the s=0 row equals a dpo_l2 run.
    """
    if len(s_values) < 2:
        raise ValidationError(f"An s-sweep needs at least two values, got {len(s_values)}")
    if sft_policy is None:
        sft_policy, _ = runner.run_sft(dataset)

    rows = []
    for s in s_values:
        root = runner.output_root / f"sweep_s{s:g}" if runner.output_root is not None else None
        stage = runner.derive(output_root=root, variant="sdpo", sobolev_s=float(s))
        aligned, _ = stage.run_alignment(sft_policy, dataset)
        table = stage.evaluate_holdout(aligned, dataset)
        rows.append(SweepRow(s=float(s), psnr=table.mean_psnr, lsd=table.mean_lsd, slope_error=table.slope_error))
        logger.info(f"s={s:g}: PSNR {table.mean_psnr:.3f}, LSD {table.mean_lsd:.3f}, "
                    f"slope error {table.slope_error:.4f}")
    return rows


def run_ablation(runner: ExperimentRunner, seeds: Sequence[int], dataset: Dataset) -> List[AblationRow]:
    """
    Four-variant ablation (sft_only, dpo_l2, sdpo, asdpo) over shared seeds.

    Per seed, one SFT policy is trained and shared by every aligned variant;
    the asdpo adversary is trained against that SFT policy first.
    """
    if not seeds:
        raise ValidationError("Ablation needs at least one seed")
    rows = []
    for seed in seeds:
        root = runner.output_root / f"seed{seed}" if runner.output_root is not None else None
        seeded = runner.derive(output_root=root, seed=int(seed))
        sft_policy, sft_report = seeded.run_sft(dataset)

        results = {"sft_only": (sft_policy, sft_report)}
        adversary, _ = seeded.run_adversary_training(sft_policy, dataset)
        for variant in ALIGNMENT_VARIANTS:
            stage = seeded.derive(variant=variant)
            results[variant] = stage.run_alignment(sft_policy, dataset,
                                                   adversary if variant == "asdpo" else None)

        for variant in ABLATION_VARIANTS:
            policy, report = results[variant]
            table = seeded.evaluate_holdout(policy, dataset)
            rows.append(AblationRow(seed=int(seed), variant=variant, psnr=table.mean_psnr, lsd=table.mean_lsd,
                                    slope_error=table.slope_error, final_loss=report.final_loss))
    return rows
