"""Regime-comparison harness: config, training loop, aggregation, reports."""

from __future__ import annotations

import configparser
import contextlib
import copy
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, ValidationError
from .network import cnn, init_weights, mlp, save_checkpoint
from .optimizers import OptimizerState, resolve_rates, step
from .presets import DESK_PRESETS, TABLE_PRESETS, preset_names, table_overrides
from .schedulers import (CBSConfig, LeRaCConfig, PlateauPolicy, PlateauTracker,
                         assign_initial_rates, cbs_sigma_at)
from .tensor import softmax_xent, softmax_xent_backward

log = logging.getLogger(__name__)

REGIMES = ("cbs", "cbs_lerac", "conventional", "lerac", "lerac_linear")


def regime_uses_cbs(regime: str) -> bool:
    return regime.startswith("cbs")


def regime_uses_lerac(regime: str) -> bool:
    return "lerac" in regime


@dataclass
class DatasetSpec:
    kind: str = "spirals"          # spirals | blobs | idx | csv
    classes: int = 3
    per_class: int = 100
    test_per_class: int = 100
    noise: float = 0.2
    seed: int = 0
    shape: tuple | None = None
    val_fraction: float = 0.1
    normalize: bool = True
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    label_column: str = "label"


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ExperimentConfig:
    name: str = "custom"
    architecture: str = "mlp"      # mlp | cnn
    hidden: tuple = (128, 64)
    regime: str = "conventional"
    epochs: int = 20
    batch_size: int = 32
    eval_batch_size: int = 512
    dtype: str = "float32"
    repeats: int = 5
    base_seed: int = 0
    out_dir: str = ""
    deterministic: bool = False
    early_stopping: bool = True
    workers: int = 1
    timing: bool = False           # serial wall-clock measurement mode
    cbs_sigma_zero: bool = False   # keep smoothing layers but force sigma to 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lerac: LeRaCConfig = field(default_factory=LeRaCConfig)
    cbs: CBSConfig = field(default_factory=CBSConfig)
    plateau: PlateauPolicy = field(default_factory=PlateauPolicy)

    def validate(self) -> "ExperimentConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; valid: {', '.join(REGIMES)}")
        if self.architecture not in ("mlp", "cnn"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if regime_uses_cbs(self.regime) and self.architecture != "cnn":
            raise ConfigError("smoothing regimes need a convolutional architecture")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.timing and self.workers != 1:
            raise ConfigError("timing runs must execute serially (workers = 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        try:
            self.lerac.validate()
            OptimizerState(kind=self.optimizer.kind, momentum=self.optimizer.momentum,
                           beta1=self.optimizer.beta1, beta2=self.optimizer.beta2)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def with_regime(self, regime: str) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        cfg.regime = regime
        return cfg


# ---------------------------------------------------------------------------
# Config files: INI sections mirror the dataclass nesting.

_SECTIONS = {"dataset": DatasetSpec, "optimizer": OptimizerConfig, "lerac": LeRaCConfig,
             "cbs": CBSConfig, "plateau": PlateauPolicy}


def _parse_value(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    if "," in s:
        return tuple(_parse_value(p) for p in s.split(",") if p.strip())
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v) + ("," if len(v) == 1 else "")
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _apply(obj, values: dict, section: str):
    names = {f.name for f in fields(obj)}
    for key, value in values.items():
        if key not in names or key in _SECTIONS:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        if isinstance(value, str):
            # text fields keep their text; everything else is parsed
            value = value.strip() if isinstance(getattr(obj, key), str) else _parse_value(value)
        if isinstance(value, int) and not isinstance(value, bool) and \
                isinstance(getattr(obj, key), float):
            value = float(value)
        setattr(obj, key, value)


def apply_sections(cfg: ExperimentConfig, sections: dict) -> ExperimentConfig:
    """Overlay ``{section: {key: value}}`` onto ``cfg`` (values may be strings)."""
    cfg = copy.deepcopy(cfg)
    for section, values in sections.items():
        if section == "experiment":
            _apply(cfg, values, section)
        elif section in _SECTIONS:
            sub = copy.deepcopy(getattr(cfg, section))
            follows_base = section == "lerac" and sub.eta_first == sub.eta_base
            _apply(sub, values, section)
            if follows_base and "eta_first" not in values:
                sub.eta_first = sub.eta_base
            try:
                sub = type(sub)(**asdict(sub))  # re-run validation
            except ValidationError as exc:
                raise ConfigError(f"[{section}] {exc}") from exc
            setattr(cfg, section, sub)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg


def from_preset(name: str) -> ExperimentConfig:
    if name in DESK_PRESETS:
        return apply_sections(ExperimentConfig(name=name), DESK_PRESETS[name])
    if name in TABLE_PRESETS:
        preset = TABLE_PRESETS[name]
        cfg = from_preset(preset.desk_base)
        cfg = apply_sections(cfg, table_overrides(preset))
        cfg.name = name
        return cfg
    raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(preset_names())}")


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    sections = {s: dict(parser[s]) for s in parser.sections()}
    if base is None:
        preset = sections.get("experiment", {}).pop("preset", None)
        base = from_preset(preset.strip()) if preset else ExperimentConfig()
    return apply_sections(base, sections).validate()


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["experiment"] = {f.name: _format_value(getattr(cfg, f.name))
                            for f in fields(cfg) if f.name not in _SECTIONS}
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        parser[section] = {f.name: _format_value(getattr(sub, f.name)) for f in fields(sub)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Data and model construction


def build_dataset(spec: DatasetSpec, dtype: str = "float32") -> D.Dataset:
    if spec.kind in ("spirals", "blobs"):
        ds = D.synth_dataset(spec.kind, spec.classes, spec.per_class, spec.noise, spec.seed,
                             spec.shape, dtype, test_per_class=spec.test_per_class)
    elif spec.kind == "idx":
        train = D.load_idx(spec.train_images, spec.train_labels, dtype=dtype)
        test = D.load_idx(spec.test_images, spec.test_labels, train.class_count, dtype=dtype)
        ds = D.concat([train, test], ["train", "test"])
    elif spec.kind == "csv":
        train = D.load_csv(spec.train_csv, spec.label_column, dtype=dtype)
        test = D.load_csv(spec.test_csv, spec.label_column, train.class_count, dtype=dtype)
        ds = D.concat([train, test], ["train", "test"])
    else:
        raise ConfigError(f"unknown dataset kind {spec.kind!r}")
    ds = ds.with_validation(spec.val_fraction, spec.seed)
    if spec.normalize:
        ds = D.normalize(ds)
    return ds


def build_network(cfg: ExperimentConfig, ds: D.Dataset):
    sample_shape = ds.inputs.shape[1:]
    if cfg.architecture == "mlp":
        return mlp(int(np.prod(sample_shape)), ds.class_count, tuple(cfg.hidden), cfg.dtype)
    if len(sample_shape) != 3:
        raise ConfigError(f"cnn needs (C, H, W) samples, dataset has {sample_shape}")
    return cnn(sample_shape, ds.class_count, smoothing=regime_uses_cbs(cfg.regime),
               kernel_size=cfg.cbs.kernel_size, dtype=cfg.dtype)


def schedule_for(cfg: ExperimentConfig, n: int):
    if regime_uses_lerac(cfg.regime):
        lcfg = copy.deepcopy(cfg.lerac)
        lcfg.rule = "linear" if cfg.regime == "lerac_linear" else "exponential"
        return assign_initial_rates(n, lcfg)
    return assign_initial_rates(n, LeRaCConfig.conventional(cfg.lerac.eta_base, cfg.lerac.k))


# ---------------------------------------------------------------------------
# Training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    test_acc: float
    epoch_seconds: float
    rates: list
    cbs_sigma: float

    def metrics(self) -> tuple:
        """Everything except wall-clock time."""
        return (self.epoch, self.train_loss, self.val_loss, self.val_acc, self.test_acc,
                tuple(self.rates), self.cbs_sigma)


@dataclass
class RepeatResult:
    index: int
    seed: int
    test_acc: float
    best_epoch: int
    aborted: bool
    records: list


def _flatten(x, architecture):
    return x.reshape(len(x), -1) if architecture == "mlp" else x


def evaluate(net, ds: D.Dataset, batch_size: int = 512, architecture: str = "mlp"):
    """Mean cross-entropy and accuracy (in %) of ``net`` on ``ds``."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(ds), batch_size):
        xb = _flatten(ds.inputs[start:start + batch_size], architecture)
        yb = ds.labels[start:start + batch_size]
        logits = net.forward(xb, "eval")
        loss, probs = softmax_xent(logits, yb)
        total_loss += loss * len(yb)
        correct += int((probs.argmax(axis=1) == yb).sum())
    return total_loss / len(ds), 100.0 * correct / len(ds)


class Trainer:
    """One seeded training run, advanced an epoch at a time."""

    def __init__(self, cfg: ExperimentConfig, ds: D.Dataset, index: int):
        self.cfg = cfg
        self.index = index
        self.seed = cfg.base_seed + index
        self.train, self.val, self.test = (ds.split(s) for s in D.SPLITS)
        self.net = init_weights(build_network(cfg, ds), self.seed)
        self.sched = schedule_for(cfg, self.net.n)
        opt = cfg.optimizer
        self.state = OptimizerState.for_network(self.net, opt.kind, momentum=opt.momentum,
                                                beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        self.tracker = PlateauTracker(cfg.plateau)
        self.stream = D.BatchStream(self.train, cfg.batch_size, self.seed)
        self.uses_cbs = regime_uses_cbs(cfg.regime)
        self.records = []
        self.best = (math.inf, -1, math.nan, None)  # val loss, epoch, test acc, params
        self.aborted = False
        self.stopped = False

    @property
    def done(self) -> bool:
        return self.aborted or self.stopped or len(self.records) >= self.cfg.epochs

    def run_epoch(self):
        cfg, net = self.cfg, self.net
        epoch = len(self.records)
        rates = resolve_rates(self.sched, epoch, self.tracker.scale)
        sigma = 0.0
        if self.uses_cbs and not cfg.cbs_sigma_zero:
            sigma = cbs_sigma_at(cfg.cbs, epoch)
        net.set_sigma(sigma)

        t0 = time.perf_counter()
        loss_sum = 0.0
        for xb, yb in self.stream.batches(epoch):
            logits = net.forward(_flatten(xb, cfg.architecture), "train")
            loss, probs = softmax_xent(logits, yb)
            if not math.isfinite(loss):
                log.warning("repeat %d (%s): non-finite loss at epoch %d, aborting",
                            self.index, cfg.regime, epoch)
                self.aborted = True
                return
            loss_sum += loss * len(yb)
            grads = net.backward(softmax_xent_backward(probs, yb))
            step(net, grads, self.state, rates)
        val_loss, val_acc = evaluate(net, self.val, cfg.eval_batch_size, cfg.architecture)
        _, test_acc = evaluate(net, self.test, cfg.eval_batch_size, cfg.architecture)
        seconds = time.perf_counter() - t0

        self.records.append(EpochRecord(epoch, loss_sum / len(self.train), val_loss, val_acc,
                                        test_acc, seconds, [rates[j] for j in sorted(rates)],
                                        sigma))
        if not math.isfinite(val_loss):
            self.aborted = True
            return
        if val_loss < self.best[0]:
            self.best = (val_loss, epoch, test_acc, net.copy_params())
        _, stop = self.tracker.step(val_loss)
        self.stopped = cfg.early_stopping and stop

    def finish(self) -> RepeatResult:
        """Restore the lowest-validation-loss parameters and write artifacts."""
        if self.best[3] is not None:
            self.net.load_params(self.best[3])
        result = RepeatResult(self.index, self.seed,
                              math.nan if self.aborted else self.best[2],
                              self.best[1], self.aborted, self.records)
        if self.cfg.out_dir:
            _write_repeat(self.cfg, self.net, result)
        return result


def train_once(cfg: ExperimentConfig, ds: D.Dataset, index: int) -> RepeatResult:
    """Train one seeded repeat and return its per-epoch records."""
    trainer = Trainer(cfg, ds, index)
    while not trainer.done:
        trainer.run_epoch()
    return trainer.finish()


METRIC_COLUMNS = ["epoch", "train_loss", "val_loss", "val_acc", "test_acc", "epoch_seconds"]


def _write_repeat(cfg: ExperimentConfig, net, result: RepeatResult):
    rdir = Path(cfg.out_dir) / cfg.regime / f"repeat_{result.index}"
    rdir.mkdir(parents=True, exist_ok=True)
    n = net.n
    header = METRIC_COLUMNS + [f"rate_layer_{j}" for j in range(1, n + 1)] + ["cbs_sigma"]
    with open(rdir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in result.records:
            secs = 0.0 if cfg.deterministic else r.epoch_seconds
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc),
                        repr(r.test_acc), repr(secs), *map(repr, r.rates), repr(r.cbs_sigma)])
    if cfg.deterministic:
        with open(rdir / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "epoch_seconds"])
            for r in result.records:
                w.writerow([r.epoch, repr(r.epoch_seconds)])
    save_checkpoint(net, rdir / "checkpoint.bin")


@dataclass
class RunResult:
    config: ExperimentConfig
    repeats: list

    @property
    def regime(self) -> str:
        return self.config.regime

    @property
    def accuracies(self) -> list:
        return [r.test_acc for r in self.repeats]

    @property
    def aborted(self) -> list:
        return [r.aborted for r in self.repeats]

    def _valid(self):
        return np.array([a for a in self.accuracies if not math.isnan(a)], dtype=np.float64)

    @property
    def mean(self) -> float:
        v = self._valid()
        return float(v.mean()) if v.size else math.nan

    @property
    def std(self) -> float:
        # population standard deviation over completed repeats
        v = self._valid()
        return float(v.std()) if v.size else math.nan

    def summary(self) -> dict:
        return {"regime": self.regime, "accuracies": self.accuracies, "aborted": self.aborted,
                "mean": self.mean, "std": self.std,
                "best_epochs": [r.best_epoch for r in self.repeats]}


@contextlib.contextmanager
def _determinism(enabled: bool):
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _write_run(cfg: ExperimentConfig, result: RunResult):
    if not cfg.out_dir:
        return
    rdir = Path(cfg.out_dir) / cfg.regime
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "config.ini").write_text(dump_config(cfg))
    (rdir / "result.json").write_text(json.dumps(result.summary(), indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig, dataset: D.Dataset | None = None) -> RunResult:
    """Train ``cfg.repeats`` seeded repeats (seed = base_seed + i) and aggregate."""
    cfg.validate()
    ds = dataset if dataset is not None else build_dataset(cfg.dataset, cfg.dtype)
    with _determinism(cfg.deterministic):
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                repeats = list(pool.map(lambda i: train_once(cfg, ds, i), range(cfg.repeats)))
        else:
            repeats = [train_once(cfg, ds, i) for i in range(cfg.repeats)]
    result = RunResult(cfg, repeats)
    _write_run(cfg, result)
    return result


# ---------------------------------------------------------------------------
# Reports

_SHARED = ("architecture", "hidden", "epochs", "batch_size", "dtype", "repeats", "base_seed")


def check_comparable(cfgs):
    if len(cfgs) < 2:
        raise ValidationError("need at least two configurations to compare")
    ref = cfgs[0]
    for other in cfgs[1:]:
        for name in _SHARED:
            if getattr(other, name) != getattr(ref, name):
                raise ValidationError(f"configs differ in {name!r}; only the regime may vary")
        if other.dataset != ref.dataset:
            raise ValidationError("configs use different datasets")


@dataclass
class ComparisonTable:
    rows: list  # (regime, mean, std)
    best: str

    def to_text(self) -> str:
        width = max(len("regime"), *(len(r[0]) for r in self.rows))
        lines = [f"{'regime':<{width}}  accuracy (%)", f"{'-' * width}  ------------"]
        for regime, mean, std in self.rows:
            mark = "  *best" if regime == self.best else ""
            lines.append(f"{regime:<{width}}  {mean:6.2f} ± {std:4.2f}{mark}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "mean", "std", "best"])
            for regime, mean, std in self.rows:
                w.writerow([regime, repr(mean), repr(std), int(regime == self.best)])


def comparison_table(results) -> ComparisonTable:
    rows = [(r.regime, r.mean, r.std) for r in results]
    # highest mean wins; ties go to the lexicographically first regime name
    ranked = sorted(rows, key=lambda row: (-(row[1] if not math.isnan(row[1]) else -math.inf),
                                           row[0]))
    return ComparisonTable(rows, ranked[0][0])


def compare_regimes(cfgs) -> tuple[ComparisonTable, list]:
    """Run every config (they may differ only in regime) and tabulate."""
    cfgs = list(cfgs)
    check_comparable(cfgs)
    ds = build_dataset(cfgs[0].dataset, cfgs[0].dtype)
    results = [run_experiment(cfg, ds) for cfg in cfgs]
    table = comparison_table(results)
    out = cfgs[0].out_dir
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "comparison.txt").write_text(table.to_text())
        table.write_csv(Path(out) / "comparison.csv")
    return table, results


def timing_sweep(cfgs, warmup_epochs: int = 1) -> list:
    """Serial timing runs, advancing all regimes in lockstep.

    For each repeat, one trainer per regime is created and the trainers take
    turns running single epochs; the turn order rotates every epoch. Drift in
    machine speed and position effects are therefore shared by all regimes.
    Early stopping is disabled so every regime runs the same epoch count.
    """
    cfgs = [copy.deepcopy(c) for c in cfgs]
    check_comparable(cfgs)
    for c in cfgs:
        c.timing = True
        c.workers = 1
        c.early_stopping = False
        c.validate()
    ds = build_dataset(cfgs[0].dataset, cfgs[0].dtype)
    repeats = [[] for _ in cfgs]
    with _determinism(cfgs[0].deterministic):
        for c in cfgs:
            warm = copy.deepcopy(c)
            warm.epochs, warm.out_dir = warmup_epochs, ""
            train_once(warm, ds, 0)
        for i in range(cfgs[0].repeats):
            trainers = [Trainer(c, ds, i) for c in cfgs]
            turn = 0
            while not all(t.done for t in trainers):
                order = trainers[turn % len(trainers):] + trainers[:turn % len(trainers)]
                for t in order:
                    if not t.done:
                        t.run_epoch()
                turn += 1
            for slot, t in enumerate(trainers):
                repeats[slot].append(t.finish())
    results = [RunResult(c, reps) for c, reps in zip(cfgs, repeats)]
    for r in results:
        _write_run(r.config, r)
    return results


@dataclass
class TimingTable:
    rows: list  # (regime, mean epoch seconds, mean seconds to best val acc)

    def mean_epoch_seconds(self, regime: str) -> float:
        return next(r[1] for r in self.rows if r[0] == regime)

    def to_text(self) -> str:
        width = max(len("regime"), *(len(r[0]) for r in self.rows))
        lines = [f"{'regime':<{width}}  epoch s     to-best s"]
        for regime, epoch_s, best_s in self.rows:
            lines.append(f"{regime:<{width}}  {epoch_s:9.5f}  {best_s:10.4f}")
        return "\n".join(lines) + "\n"


def timing_report(results, series_path=None, table_path=None) -> TimingTable:
    """Mean epoch time and time-to-best-validation-accuracy per regime.

    ``series_path`` receives the (elapsed seconds, validation accuracy) points
    of every repeat, ready for a time-vs-accuracy plot.
    """
    rows, series = [], []
    for res in results:
        epoch_times, to_best = [], []
        for rep in res.repeats:
            if not rep.records:
                continue
            secs = [r.epoch_seconds for r in rep.records]
            epoch_times.extend(secs)
            elapsed = np.cumsum(secs)
            accs = [r.val_acc for r in rep.records]
            to_best.append(float(elapsed[int(np.argmax(accs))]))
            for r, t in zip(rep.records, elapsed):
                series.append((res.regime, rep.index, r.epoch, float(t), r.val_acc))
        rows.append((res.regime, float(np.mean(epoch_times)), float(np.mean(to_best))))
    table = TimingTable(rows)
    if series_path:
        with open(series_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "repeat", "epoch", "elapsed_seconds", "val_acc"])
            w.writerows(series)
    if table_path:
        with open(table_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "mean_epoch_seconds", "seconds_to_best_val_acc"])
            w.writerows(rows)
    return table
