#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
import logging
from pathlib import Path
import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from . import utils
from .base import ConfigBase, DictBase, Field
from .data import Dataset, DatasetSpec, batches, load_datasets
from .exceptions import ConfigurationError, LLCBenchError, StatisticsError
from .export import MetricsRecord, export, save_checkpoint, write_manifest
from .hessian import HutchinsonConfig, TraceEstimate, hutchinson_trace
from .nn import MlpArchitecture, MlpModel, ParamVector
from .optimizers import NgdConfig, OptimizerConfig, SgdConfig, optimizer_config, step
from .slt import LlcEstimate, SgldConfig, estimate_llc


__all__ = [
    "CadenceSpec",
    "RunConfig",
    "ForkSpec",
    "Trainer",
    "CompareReport",
    "SweepReport",
    "ForkReport",
    "OverfitReport",
    "run_training",
    "welch_test",
    "stabilized",
    "experiment_compare",
    "experiment_smoothing_sweep",
    "experiment_fork",
    "experiment_overfit",
    "measure_llc",
    "measure_trace"
]

logger = logging.getLogger(__name__)

METRIC_BATCH_STREAM: int = 1 << 32
"""RNG counter of the permutation choosing the metric batch (epoch counters stay below it)."""
SPLITS = {"train", "val"}


class OptimizerField(Field):
    """A field holding an `SgdConfig` or an `NgdConfig`, chosen by the `kind` key of dictionaries."""

    def coerce(self, value):
        return optimizer_config(value)


class CadenceSpec(ConfigBase):
    """Every how many epochs each metric is measured; `None` never measures it. Epoch 0 counts."""

    llc = Field(1)
    wbic = Field(1)
    hessian_trace = Field(1)
    fisher_trace = Field(None)

    def validate(self) -> CadenceSpec:
        for name in self.fields():
            if self[name] is not None:
                utils.check_count(self[name], f"cadence.{name}")
        return self

    def fires(self, name: str, epoch: int) -> bool:
        every = self[name]
        return every is not None and epoch % every == 0

    def any_fires(self, epoch: int) -> bool:
        return any(self.fires(_, epoch) for _ in self.fields())


class RunConfig(ConfigBase):
    """
    A complete training run. Dictionaries (e.g. parsed JSON) are converted into the nested configs; see `dumps` for
    the file layout.
    """

    architecture = Field(factory=MlpArchitecture, nested=MlpArchitecture)
    optimizer = OptimizerField(factory=SgdConfig)
    dataset = Field(factory=DatasetSpec, nested=DatasetSpec)
    epochs = Field(10)
    seed = Field(0)
    cadence = Field(factory=CadenceSpec, nested=CadenceSpec)
    sgld = Field(factory=SgldConfig, nested=SgldConfig)
    hutchinson = Field(factory=HutchinsonConfig, nested=HutchinsonConfig)
    metric_batch_size = Field(utils.DEFAULT_METRIC_BATCH_SIZE, doc="Examples in the fixed Hessian-trace batch.")
    trace_split = Field("train", doc="Split the metric batch is drawn from, `train` or `val`.")

    def validate(self) -> RunConfig:
        arch = self.architecture
        (arch if arch.input_dim is not None else arch.replace(input_dim=1)).validate()
        for name in ("optimizer", "dataset", "cadence", "sgld", "hutchinson"):
            self[name].validate()
        utils.check_count(self.epochs, "epochs", minimum=0)
        utils.check_count(self.seed, "seed", minimum=0)
        utils.check_count(self.metric_batch_size, "metric_batch_size")
        utils.check_choice(self.trace_split, "trace_split", SPLITS)
        return self

    def resolve(self, train: Dataset) -> RunConfig:
        """
        Returns
        -------
        RunConfig : A validated copy whose architecture input width is taken from the training set when unset.

        Raises
        ------
        llcbench.exceptions.ConfigurationError
            When the training set is empty or does not fit the architecture.
        """
        if train.n < 1:
            raise ConfigurationError("The training set is empty.")
        cfg = self
        if self.architecture.input_dim is None:
            cfg = self.replace(architecture=self.architecture.replace(input_dim=train.input_dim))
        cfg.validate()
        if train.num_classes > cfg.architecture.output_classes:
            raise ConfigurationError(
                f"The dataset has {train.num_classes} classes, the architecture only "
                f"{cfg.architecture.output_classes} outputs."
            )
        return cfg


class Trainer(object):
    """
    Drives one run epoch by epoch. Epoch `e` consumes the batch stream `(seed, e)`, so two trainers with the same seed
    and optimizer produce the same series, including after `clone`.
    """

    def __init__(
            self,
            cfg: RunConfig,
            train: Dataset,
            val: Dataset,
            *,
            model: MlpModel = None,
            epoch: int = 0,
            out_dir: Union[str, Path] = None,
            jobs: int = 1
    ) -> None:
        self.cfg = RunConfig.coerce(cfg).resolve(train)
        self.train = train
        self.val = val
        self.model = model or MlpModel.initialize(self.cfg.architecture, self.cfg.seed)
        self.epoch = epoch
        self.out_dir = Path(out_dir) if out_dir else None
        self.jobs = jobs
        self.records: List[MetricsRecord] = []
        self._train_batch = train.as_batch()
        self._train_batch.check(self.cfg.architecture)
        self._val_batch = val.as_batch() if val.n else None
        source = train if self.cfg.trace_split == "train" else val
        if source.n < 1:
            raise ConfigurationError(f"The {self.cfg.trace_split} split is empty, no metric batch can be drawn.")
        order = utils.make_rng(self.cfg.seed, METRIC_BATCH_STREAM).permutation(source.n)
        self.metric_batch = source.as_batch().subset(order[:self.cfg.metric_batch_size])

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: {self.model!r} {self.cfg.optimizer.kind} at epoch {self.epoch}"

    def clone(self, optimizer: OptimizerConfig, *, out_dir: Union[str, Path] = None) -> Trainer:
        """
        A trainer continuing from the current parameters and epoch with another optimizer.

        Parameters
        ----------
        optimizer : OptimizerConfig
            The optimizer of the new branch.
        out_dir : Union[str, Path]
            Artifact directory of the new branch.

        Returns
        -------
        Trainer
        """
        return Trainer(
            self.cfg.replace(optimizer=optimizer_config(optimizer)),
            self.train,
            self.val,
            model=self.model.with_params(self.model.params),
            epoch=self.epoch,
            out_dir=out_dir,
            jobs=self.jobs
        )

    def measure(self, update_norm: float, kappa_mean: Optional[float]) -> MetricsRecord:
        """
        Losses and the metrics whose cadence fires at the current epoch.

        Returns
        -------
        MetricsRecord
        """
        cfg, epoch = self.cfg, self.epoch
        record = MetricsRecord(
            epoch=epoch,
            train_loss=self.model.nll_loss(self._train_batch),
            val_loss=self.model.nll_loss(self._val_batch) if self._val_batch is not None else None,
            update_norm=float(update_norm),
            kappa_mean=kappa_mean
        )
        if cfg.cadence.fires("llc", epoch) or cfg.cadence.fires("wbic", epoch):
            sgld = cfg.sgld.replace(seed=utils.derive_seed(cfg.sgld.seed, cfg.seed, epoch))
            estimate = estimate_llc(self.model, self.train, sgld, jobs=self.jobs)
            if cfg.cadence.fires("llc", epoch):
                record.update(lambda_hat=estimate.lambda_hat, lambda_se=estimate.std_error)
            if cfg.cadence.fires("wbic", epoch):
                record.update(wbic=estimate.wbic, bic=estimate.bic)
        if cfg.cadence.fires("hessian_trace", epoch):
            hutchinson = cfg.hutchinson.replace(seed=utils.derive_seed(cfg.hutchinson.seed, cfg.seed, epoch))
            estimate = hutchinson_trace(self.model, self.metric_batch, hutchinson, jobs=self.jobs)
            record.update(hessian_trace=estimate.mean, hessian_se=estimate.standard_error)
        if cfg.cadence.fires("fisher_trace", epoch):
            record.update(fisher_trace=self.model.fisher_trace(self.metric_batch))
        if self.out_dir is not None and cfg.cadence.any_fires(epoch):
            save_checkpoint(self.out_dir / "checkpoints" / f"epoch_{epoch:04d}.npy", self.model.params)
        logger.info(
            "Epoch %d: train_loss=%.5f val_loss=%s update_norm=%.4g%s%s",
            epoch, record.train_loss, "-" if record.val_loss is None else f"{record.val_loss:.5f}",
            record.update_norm,
            "" if record.lambda_hat is None else f" lambda_hat={record.lambda_hat:.4g}",
            "" if record.hessian_trace is None else f" trace={record.hessian_trace:.4g}",
        )
        self.records.append(record)
        return record

    def start(self) -> MetricsRecord:
        """
        Returns
        -------
        MetricsRecord : The record of the current parameters before any further step (update norm `0`).
        """
        return self.measure(0.0, None)

    def advance(self) -> MetricsRecord:
        """
        Train one epoch over the shuffled training set, then measure.

        Returns
        -------
        MetricsRecord
        """
        self.epoch += 1
        opt = self.cfg.optimizer
        norms, kappas = [], []
        try:
            for batch in batches(self.train, opt.batch_size, self.cfg.seed, self.epoch):
                result = step(self.model, batch, opt)
                self.model = self.model.with_params(result.new_params)
                norms.append(result.update_norm)
                if isinstance(opt, NgdConfig):
                    kappas.append(result.kappa)
        except LLCBenchError:
            self.epoch -= 1
            raise
        return self.measure(float(np.mean(norms)) if norms else 0.0, float(np.mean(kappas)) if kappas else None)

    def run(self, epochs: int, *, fmt: str = "csv") -> List[MetricsRecord]:
        """
        Measure the starting point (unless already done) and train `epochs` epochs. On failure the parameters of the
        last completed step and the records so far are written to the artifact directory before re-raising.

        Returns
        -------
        List[MetricsRecord] : All records of this trainer.
        """
        try:
            if not self.records:
                self.start()
            for _ in range(epochs):
                self.advance()
        except LLCBenchError as err:
            logger.error("Run aborted at epoch %d: %s", self.epoch + 1, err)
            if self.out_dir is not None:
                save_checkpoint(self.out_dir / "checkpoint_last_good.npy", self.model.params)
                export(self.records, fmt, self.out_dir)
            raise
        return self.records

    def save(self, wall_time: float, *, fmt: str = "csv") -> None:
        """Write records, manifest and final checkpoint to the artifact directory."""
        if self.out_dir is None:
            return None
        export(self.records, fmt, self.out_dir)
        save_checkpoint(self.out_dir / "checkpoint_final.npy", self.model.params)
        write_manifest(self.out_dir / "manifest.json", self.cfg, self.cfg.seed, wall_time,
                       train_examples=self.train.n, val_examples=self.val.n, final_epoch=self.epoch)


def _datasets(cfg: RunConfig, datasets: Optional[Tuple[Dataset, Dataset]]) -> Tuple[Dataset, Dataset]:
    return datasets if datasets is not None else load_datasets(cfg.dataset)


def run_training(
        cfg: RunConfig,
        out_dir: Union[str, Path] = None,
        *,
        fmt: str = "csv",
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None
) -> List[MetricsRecord]:
    """
    Train a model and record its metrics at every epoch, epoch 0 included.

    Parameters
    ----------
    cfg : RunConfig
        The run.
    out_dir : Union[str, Path]
        Where the metrics file, the manifest and the checkpoints go. Default `None` (nothing written).
    fmt : str
        `csv` or `json`. Default `"csv"`.
    jobs : int
        Worker threads for SGLD chains and Hutchinson probes. Default `1`.
    datasets : Tuple[Dataset, Dataset]
        Preloaded train and validation sets. Default `None`, i.e. `load_datasets(cfg.dataset)`.

    Returns
    -------
    List[MetricsRecord] : `epochs + 1` records.
    """
    cfg = RunConfig.coerce(cfg).validate()
    train, val = _datasets(cfg, datasets)
    started = time.perf_counter()
    trainer = Trainer(cfg, train, val, out_dir=out_dir, jobs=jobs)
    records = trainer.run(cfg.epochs, fmt=fmt)
    trainer.save(time.perf_counter() - started, fmt=fmt)
    return records


def _run_many(
        configs: Sequence[RunConfig],
        datasets: Tuple[Dataset, Dataset],
        jobs: int,
        out_dirs: Sequence[Optional[Path]]
) -> List[List[MetricsRecord]]:
    def run(i: int) -> List[MetricsRecord]:
        return run_training(configs[i], out_dirs[i], datasets=datasets)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, range(len(configs))))
    return [run(i) for i in range(len(configs))]


def _final(records: Sequence[MetricsRecord], key: str) -> Optional[float]:
    values = [_[key] for _ in records if _[key] is not None]
    return values[-1] if values else None


def _subdir(out_dir: Optional[Union[str, Path]], *parts: str) -> Optional[Path]:
    return Path(out_dir, *parts) if out_dir else None


def _sgd_of(cfg: OptimizerConfig) -> SgdConfig:
    return SgdConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)


def _ngd_of(cfg: OptimizerConfig) -> NgdConfig:
    if isinstance(cfg, NgdConfig):
        return cfg
    return NgdConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)


def welch_test(candidate: Sequence[float], baseline: Sequence[float]) -> Dict:
    """
    One-sided Welch t-test of `mean(candidate) > mean(baseline)`.

    Parameters
    ----------
    candidate : Sequence[float]
        Per-seed values of the candidate.
    baseline : Sequence[float]
        Per-seed values of the baseline.

    Returns
    -------
    Dict : `t_statistic`, `p_value` and both sample sizes.

    Raises
    ------
    llcbench.exceptions.StatisticsError
        With fewer than two values on either side.
    """
    if len(candidate) < 2 or len(baseline) < 2:
        raise StatisticsError(
            f"The Welch test needs at least two values per group, got {len(candidate)} and {len(baseline)}."
        )
    result = stats.ttest_ind(candidate, baseline, equal_var=False, alternative="greater")
    return {
        "t_statistic": float(result.statistic),
        "p_value": float(result.pvalue),
        "n_candidate": len(candidate),
        "n_baseline": len(baseline),
    }


class CompareReport(DictBase):
    """Final-epoch LLC and Hessian-trace distributions of two optimizers, one row per architecture."""

    seeds = Field(factory=list)
    baseline = Field(None, doc="The baseline optimizer config.")
    candidate = Field(None, doc="The candidate optimizer config.")
    rows = Field(factory=list)


def experiment_compare(
        base: RunConfig,
        seeds: Sequence[int],
        *,
        baseline: OptimizerConfig = None,
        candidate: OptimizerConfig = None,
        architectures: Sequence[Union[Dict, MlpArchitecture]] = None,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None,
        out_dir: Union[str, Path] = None
) -> CompareReport:
    """
    Train the baseline (SGD by default) and the candidate (NGD by default) once per seed and architecture and test
    whether the candidate's final LLC and Hessian trace are higher. Both optimizers share the initialization and the
    batch stream of each seed.

    Parameters
    ----------
    base : RunConfig
        Everything but the optimizer, seed and (optionally) architecture.
    seeds : Sequence[int]
        At least two distinct seeds.
    baseline : OptimizerConfig
        Default: SGD at the learning rate and batch size of `base.optimizer`.
    candidate : OptimizerConfig
        Default: `base.optimizer` if NGD, otherwise NGD at its learning rate and batch size.
    architectures : Sequence[Union[Dict, MlpArchitecture]]
        One report row each. Default: `base.architecture`.
    jobs : int
        Runs executed in parallel. Default `1`.
    datasets : Tuple[Dataset, Dataset]
        Preloaded train and validation sets.
    out_dir : Union[str, Path]
        Root of the per-run artifact directories.

    Returns
    -------
    CompareReport
    """
    seeds = [int(_) for _ in seeds]
    if len(set(seeds)) < 2:
        raise StatisticsError(f"A comparison needs at least two distinct seeds, got {seeds}.")
    base = RunConfig.coerce(base).validate()
    baseline = optimizer_config(baseline) if baseline is not None else _sgd_of(base.optimizer)
    candidate = optimizer_config(candidate) if candidate is not None else _ngd_of(base.optimizer)
    archs = [MlpArchitecture.coerce(_) for _ in (architectures or [base.architecture])]
    datasets = _datasets(base, datasets)
    configs, dirs = [], []
    for arch in archs:
        for label, opt in (("baseline", baseline), ("candidate", candidate)):
            for seed in seeds:
                configs.append(base.replace(architecture=arch, optimizer=opt, seed=seed))
                dirs.append(_subdir(out_dir, arch.describe(), label, f"seed_{seed}"))
    results = iter(_run_many(configs, datasets, jobs, dirs))
    rows = []
    for arch in archs:
        row = {"architecture": arch.describe()}
        for label in ("baseline", "candidate"):
            runs = [next(results) for _ in seeds]
            row[label] = {
                "lambda_hat": [_final(_, "lambda_hat") for _ in runs],
                "hessian_trace": [_final(_, "hessian_trace") for _ in runs],
                "val_loss": [_final(_, "val_loss") for _ in runs],
            }
        for key in ("lambda_hat", "hessian_trace"):
            cand = [_ for _ in row["candidate"][key] if _ is not None]
            ref = [_ for _ in row["baseline"][key] if _ is not None]
            row[f"{key}_means"] = {
                "baseline": float(np.mean(ref)) if ref else None,
                "candidate": float(np.mean(cand)) if cand else None,
            }
            row[f"{key}_test"] = welch_test(cand, ref) if len(cand) > 1 and len(ref) > 1 else None
        logger.info("Compare %s: lambda_hat %s, test %s.", row["architecture"], row["lambda_hat_means"],
                    row["lambda_hat_test"])
        rows.append(row)
    return CompareReport(seeds=seeds, baseline=baseline, candidate=candidate, rows=rows)


class SweepReport(DictBase):
    """Final NGD LLC against one smoothing constant at a time, with the SGD baseline band."""

    seeds = Field(factory=list)
    points = Field(factory=list)
    baseline = Field(None)
    correlations = Field(factory=dict, doc="Spearman `(rho, p)` between each varied constant and the mean final LLC.")


def experiment_smoothing_sweep(
        base: RunConfig,
        alphas: Sequence[float],
        epsilons: Sequence[float],
        seeds: Sequence[int],
        *,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None,
        out_dir: Union[str, Path] = None
) -> SweepReport:
    """
    NGD runs over a grid varying either `alpha` (at the base `epsilon_smooth`) or `epsilon_smooth` (at the base
    `alpha`), plus SGD baseline runs. The report states the trends; it asserts nothing.

    Parameters
    ----------
    base : RunConfig
        The base run; its optimizer gives the NGD defaults.
    alphas : Sequence[float]
        The `alpha` grid.
    epsilons : Sequence[float]
        The `epsilon_smooth` grid.
    seeds : Sequence[int]
        Seeds of every grid point.
    jobs : int
        Runs executed in parallel. Default `1`.
    datasets : Tuple[Dataset, Dataset]
        Preloaded train and validation sets.
    out_dir : Union[str, Path]
        Root of the per-run artifact directories.

    Returns
    -------
    SweepReport
    """
    alphas, epsilons, seeds = list(alphas or []), list(epsilons or []), [int(_) for _ in seeds]
    if not alphas and not epsilons:
        raise ConfigurationError("The smoothing sweep needs a non-empty \"alphas\" or \"epsilons\" grid.")
    if not seeds:
        raise ConfigurationError("The smoothing sweep needs at least one seed.")
    base = RunConfig.coerce(base).validate()
    ngd = _ngd_of(base.optimizer)
    grid = [("alpha", _, ngd.replace(alpha=float(_))) for _ in alphas]
    grid += [("epsilon_smooth", _, ngd.replace(epsilon_smooth=float(_))) for _ in epsilons]
    grid.append(("sgd", None, _sgd_of(base.optimizer)))
    for _, _, opt in grid:
        opt.validate()
    datasets = _datasets(base, datasets)
    configs, dirs = [], []
    for name, value, opt in grid:
        for seed in seeds:
            configs.append(base.replace(optimizer=opt, seed=seed))
            dirs.append(_subdir(out_dir, name if value is None else f"{name}_{value:g}", f"seed_{seed}"))
    results = iter(_run_many(configs, datasets, jobs, dirs))
    points, baseline = [], None
    for name, value, _ in grid:
        runs = [next(results) for _ in seeds]
        lambdas = [_final(_, "lambda_hat") for _ in runs]
        kept = [_ for _ in lambdas if _ is not None]
        point = {
            "parameter": name,
            "value": value,
            "lambda_hat": lambdas,
            "lambda_mean": float(np.mean(kept)) if kept else None,
            "kappa_mean": [_final(_, "kappa_mean") for _ in runs],
            "hessian_trace": [_final(_, "hessian_trace") for _ in runs],
        }
        if value is None:
            point["lambda_band"] = [float(np.min(kept)), float(np.max(kept))] if kept else None
            baseline = point
        else:
            points.append(point)
    correlations = {}
    for name in ("alpha", "epsilon_smooth"):
        pairs = [(_["value"], _["lambda_mean"]) for _ in points
                 if _["parameter"] == name and _["lambda_mean"] is not None]
        if len(pairs) > 1:
            rho, p = stats.spearmanr(*zip(*pairs))
            correlations[name] = {"rho": float(rho), "p_value": float(p)}
    return SweepReport(seeds=seeds, points=points, baseline=baseline, correlations=correlations)


class ForkSpec(ConfigBase):
    """
    SGD pretraining, then two branches continuing from the same parameters. With `fork_epoch` unset the fork happens
    once the LLC has stabilized: the spread of the last `stabilization_window` estimates falls under
    `stabilization_threshold` times their mean.
    """

    pretrain = Field(factory=RunConfig, nested=RunConfig, doc="The pretraining run; `epochs` is its budget.")
    fork_epoch = Field(None)
    stabilization_threshold = Field(utils.DEFAULT_STABILIZATION_THRESHOLD)
    stabilization_window = Field(utils.DEFAULT_STABILIZATION_WINDOW)
    branch_a = OptimizerField(factory=SgdConfig)
    branch_b = OptimizerField(factory=NgdConfig)
    post_epochs = Field(10)

    def validate(self) -> ForkSpec:
        self.pretrain.validate()
        if not isinstance(self.pretrain.optimizer, SgdConfig):
            raise ConfigurationError("Field \"pretrain.optimizer\" of a fork must be SGD.")
        self.branch_a.validate()
        self.branch_b.validate()
        utils.check_count(self.post_epochs, "post_epochs")
        if self.fork_epoch is None:
            utils.check_positive(self.stabilization_threshold, "stabilization_threshold")
            utils.check_count(self.stabilization_window, "stabilization_window", minimum=2)
            if self.pretrain.cadence.llc is None:
                raise ConfigurationError("The stabilization rule needs \"pretrain.cadence.llc\" to be set.")
        else:
            utils.check_count(self.fork_epoch, "fork_epoch", minimum=0)
            if self.fork_epoch > self.pretrain.epochs:
                raise ConfigurationError(
                    f"Field \"fork_epoch\" ({self.fork_epoch}) exceeds the pretraining budget of "
                    f"{self.pretrain.epochs} epochs."
                )
        return self


def stabilized(records: Sequence[MetricsRecord], threshold: float, window: int) -> bool:
    """
    Parameters
    ----------
    records : Sequence[MetricsRecord]
        The series so far.
    threshold : float
        The largest accepted relative spread.
    window : int
        The number of LLC estimates inspected.

    Returns
    -------
    bool : Whether the last `window` LLC estimates vary by less than `threshold` relative to their mean.
    """
    values = [_.lambda_hat for _ in records if _.lambda_hat is not None][-window:]
    if len(values) < window:
        return False
    scale = abs(float(np.mean(values)))
    return scale > 0.0 and (max(values) - min(values)) / scale < threshold


def _slope(records: Sequence[MetricsRecord]) -> Optional[Dict]:
    points = [(_.epoch, _.lambda_hat) for _ in records if _.lambda_hat is not None]
    if len(points) < 3:
        return None
    fit = stats.linregress(*zip(*points))
    return {"slope": float(fit.slope), "stderr": float(fit.stderr), "p_value": float(fit.pvalue), "n": len(points)}


class ForkReport(DictBase):
    """The pretraining series, both branch series and their post-fork summaries."""

    fork_epoch = Field(0)
    pretrain = Field(factory=list)
    branch_a = Field(factory=list)
    branch_b = Field(factory=list)
    summary = Field(factory=dict, doc="Per branch: optimizer, update-norm spike ratio and post-fork LLC slope.")


def experiment_fork(
        spec: ForkSpec,
        *,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None,
        out_dir: Union[str, Path] = None
) -> ForkReport:
    """
    Pretrain with SGD, fork at `fork_epoch` (or when the LLC stabilizes) and continue both branches for
    `post_epochs` on the same batch stream.

    Parameters
    ----------
    spec : ForkSpec
        The experiment.
    jobs : int
        Worker threads for the metrics. Default `1`.
    datasets : Tuple[Dataset, Dataset]
        Preloaded train and validation sets.
    out_dir : Union[str, Path]
        Root of the `pretrain`, `branch_a` and `branch_b` artifact directories.

    Returns
    -------
    ForkReport

    Raises
    ------
    llcbench.exceptions.ConfigurationError
        If the stabilization rule does not fire within the pretraining budget.
    """
    spec = ForkSpec.coerce(spec).validate()
    cfg = spec.pretrain
    train, val = _datasets(cfg, datasets)
    started = time.perf_counter()
    trainer = Trainer(cfg, train, val, out_dir=_subdir(out_dir, "pretrain"), jobs=jobs)
    trainer.run(0)
    if spec.fork_epoch is not None:
        trainer.run(spec.fork_epoch)
    else:
        while not stabilized(trainer.records, spec.stabilization_threshold, spec.stabilization_window):
            if trainer.epoch >= cfg.epochs:
                raise ConfigurationError(
                    f"The LLC did not stabilize within {cfg.epochs} pretraining epochs "
                    f"(threshold {spec.stabilization_threshold}, window {spec.stabilization_window})."
                )
            trainer.advance()
    trainer.save(time.perf_counter() - started)
    logger.info("Forking at epoch %d.", trainer.epoch)
    branches = {
        "branch_a": trainer.clone(spec.branch_a, out_dir=_subdir(out_dir, "branch_a")),
        "branch_b": trainer.clone(spec.branch_b, out_dir=_subdir(out_dir, "branch_b")),
    }
    last_norm = trainer.records[-1].update_norm
    summary = {}
    for name, branch in branches.items():
        started = time.perf_counter()
        for _ in range(spec.post_epochs):
            branch.advance()
        branch.save(time.perf_counter() - started)
        peak = max(_.update_norm for _ in branch.records)
        summary[name] = {
            "optimizer": branch.cfg.optimizer,
            "spike_ratio": float(peak / last_norm) if last_norm > 0 else None,
            "lambda_slope": _slope([trainer.records[-1], *branch.records]),
        }
    return ForkReport(
        fork_epoch=trainer.epoch,
        pretrain=trainer.records,
        branch_a=branches["branch_a"].records,
        branch_b=branches["branch_b"].records,
        summary=summary
    )


class OverfitReport(DictBase):
    """A long run with the validation-loss minimum and the post-onset trends."""

    records = Field(factory=list)
    onset_epoch = Field(None, doc="Epoch of the validation-loss minimum.")
    overfit = Field(False, doc="Whether the final validation loss exceeds the minimum.")
    correlations = Field(factory=dict, doc="Post-onset Spearman `(rho, p)` of each tracked pair.")
    wbic_val_cross_correlation = Field(factory=list, doc="Pearson `r` of WBIC against validation loss shifted by "
                                                         "`lag` measurements.")


def _spearman(pairs: Sequence[Tuple[float, float]]) -> Optional[Dict]:
    if len(pairs) < 3:
        return None
    rho, p = stats.spearmanr(*zip(*pairs))
    return {"rho": float(rho), "p_value": float(p), "n": len(pairs)}


def _cross_correlation(x: Sequence[float], y: Sequence[float], max_lag: int) -> List[Dict]:
    out = []
    for lag in range(-max_lag, max_lag + 1):
        a, b = (x[:len(x) - lag], y[lag:]) if lag >= 0 else (x[-lag:], y[:len(y) + lag])
        if len(a) >= 3 and np.ptp(a) > 0 and np.ptp(b) > 0:
            out.append({"lag": lag, "r": float(stats.pearsonr(a, b)[0])})
    return out


def experiment_overfit(
        cfg: RunConfig,
        *,
        max_lag: int = 3,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None,
        out_dir: Union[str, Path] = None
) -> OverfitReport:
    """
    Run a long training on a small training set and relate the LLC, the WBIC and the Hessian trace to the validation
    loss after its minimum.

    Parameters
    ----------
    cfg : RunConfig
        A run with enough epochs (and few enough examples) to overfit.
    max_lag : int
        Largest shift of the WBIC/validation-loss cross-correlation. Default `3`.
    jobs : int
        Worker threads for the metrics. Default `1`.
    datasets : Tuple[Dataset, Dataset]
        Preloaded train and validation sets.
    out_dir : Union[str, Path]
        The artifact directory.

    Returns
    -------
    OverfitReport
    """
    utils.check_count(max_lag, "max_lag", minimum=0)
    records = run_training(cfg, out_dir, jobs=jobs, datasets=datasets)
    scored = [_ for _ in records if _.val_loss is not None]
    if not scored:
        raise ConfigurationError("The overfitting study needs a non-empty validation set.")
    best = min(scored, key=lambda _: _.val_loss)
    after = [_ for _ in scored if _.epoch >= best.epoch]
    both = [_ for _ in scored if _.wbic is not None]
    report = OverfitReport(
        records=records,
        onset_epoch=best.epoch,
        overfit=bool(scored[-1].val_loss > best.val_loss),
        correlations={
            "wbic_vs_val_loss": _spearman([(_.wbic, _.val_loss) for _ in after if _.wbic is not None]),
            "lambda_hat_vs_epoch": _spearman([(_.epoch, _.lambda_hat) for _ in after if _.lambda_hat is not None]),
            "hessian_trace_vs_epoch": _spearman(
                [(_.epoch, _.hessian_trace) for _ in after if _.hessian_trace is not None]
            ),
        },
        wbic_val_cross_correlation=_cross_correlation(
            np.array([_.wbic for _ in both]), np.array([_.val_loss for _ in both]), max_lag
        )
    )
    logger.info("Validation loss minimum at epoch %d (overfit: %s).", report.onset_epoch, report.overfit)
    return report


def _trained_model(
        cfg: RunConfig,
        params: Optional[ParamVector],
        train: Dataset,
        val: Dataset,
        jobs: int
) -> Tuple[MlpModel, Trainer]:
    quiet = cfg.replace(cadence=CadenceSpec(llc=None, wbic=None, hessian_trace=None, fisher_trace=None))
    trainer = Trainer(quiet, train, val, jobs=jobs)
    if params is not None:
        return trainer.model.with_params(params), trainer
    trainer.run(cfg.epochs)
    return trainer.model, trainer


def measure_llc(
        cfg: RunConfig,
        params: ParamVector = None,
        *,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None
) -> LlcEstimate:
    """
    The LLC and WBIC of a checkpoint, or of the model `cfg` trains when no parameters are given.

    Returns
    -------
    LlcEstimate
    """
    cfg = RunConfig.coerce(cfg).validate()
    train, val = _datasets(cfg, datasets)
    model, trainer = _trained_model(cfg, params, train, val, jobs)
    return estimate_llc(model, train, trainer.cfg.sgld, jobs=jobs)


def measure_trace(
        cfg: RunConfig,
        params: ParamVector = None,
        *,
        jobs: int = 1,
        datasets: Tuple[Dataset, Dataset] = None
) -> TraceEstimate:
    """
    The Hutchinson Hessian trace of a checkpoint, or of the model `cfg` trains, on the run's metric batch.

    Returns
    -------
    TraceEstimate
    """
    cfg = RunConfig.coerce(cfg).validate()
    train, val = _datasets(cfg, datasets)
    model, trainer = _trained_model(cfg, params, train, val, jobs)
    return hutchinson_trace(model, trainer.metric_batch, trainer.cfg.hutchinson, jobs=jobs)
