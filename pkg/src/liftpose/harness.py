"""Training loop, repeated runs, window sweep and scenario table."""

import csv
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .models import (
    LinearModelSpec,
    TemporalModelSpec,
    build_linear,
    build_temporal,
    window_to_widths,
)
from .nncore import adam_step, derive_seed, mpjpe_backward
from .preprocess import (
    TABLE_SCENARIOS,
    align_sequence,
    apply_standardizer,
    chunk_split_shuffle,
    column_labels,
    fit_standardizer,
    frame_split_shuffle,
    make_scenario,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 1024


def lr_schedule(epoch, config):
    return config.lr0 * config.lr_decay**epoch


def bn_momentum_schedule(epoch, config):
    start, end = config.bn_momentum_start, config.bn_momentum_end
    if config.epochs == 1:
        return start
    return start * (end / start) ** (epoch / (config.epochs - 1))


@dataclass
class TrainHistory:
    train_loss: list
    test_loss: list
    seed: int
    wall_seconds: float = 0.0

    @property
    def final_train(self):
        return self.train_loss[-1]

    @property
    def final_test(self):
        return self.test_loss[-1]


@dataclass
class RunReport:
    label: str
    histories: list
    train_mean: float = field(init=False)
    train_std: float = field(init=False)
    test_mean: float = field(init=False)
    test_std: float = field(init=False)

    def __post_init__(self):
        tr = [h.final_train for h in self.histories]
        te = [h.final_test for h in self.histories]
        self.train_mean, self.train_std = _mean_std(tr)
        self.test_mean, self.test_std = _mean_std(te)

    @property
    def runs(self):
        return len(self.histories)

    def cell(self):
        return f"Train: {format_pm(self.train_mean, self.train_std)} / Test: {format_pm(self.test_mean, self.test_std)}"


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    if a.size == 1:
        return float(a[0]), 0.0
    return float(a.mean()), float(a.std(ddof=1))


def format_pm(mean, std):
    return f"{mean:.2f} ± {std:.3f}"


def _batches(n, size, rng):
    """Shuffled minibatch index arrays; a trailing singleton joins the previous batch."""
    perm = rng.permutation(n)
    out = [perm[i : i + size] for i in range(0, n, size)]
    if len(out) > 1 and out[-1].size == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def predict(model, x, batch_size=EVAL_BATCH):
    model.eval()
    return np.concatenate([model.forward(x[i : i + batch_size]) for i in range(0, x.shape[0], batch_size)])


def evaluate(model, x, y, batch_size=EVAL_BATCH):
    """Eval-mode MPJPE (D = 1) over a whole set."""
    return float(np.mean(np.abs(predict(model, x, batch_size) - y)))


def batch_size_for(model, config):
    return config.batch_size_linear if model.spec.kind == "linear" else config.batch_size_temporal


def train(model, split, config, seed=None, batch_size=None):
    """Fixed-length training: per epoch set lr and BN momentum, run shuffled
    minibatches of Adam on MPJPE, then score train and test in eval mode."""
    seed = config.seed if seed is None else seed
    batch_size = batch_size or batch_size_for(model, config)
    params = model.params()
    t0 = time.perf_counter()
    train_hist, test_hist = [], []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        model.set_bn_momentum(bn_momentum_schedule(epoch, config))
        model.train()
        rng = np.random.default_rng(derive_seed(seed, epoch))
        for b, idx in enumerate(_batches(split.n_train, batch_size, rng)):
            xb, yb = split.train_inputs[idx], split.train_targets[idx]
            pred = model.forward(xb)
            loss = float(np.mean(np.abs(pred - yb)))
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(mpjpe_backward(pred, yb))
            adam_step(params, lr)
        train_hist.append(evaluate(model, split.train_inputs, split.train_targets))
        test_hist.append(evaluate(model, split.test_inputs, split.test_targets))
        if not (math.isfinite(train_hist[-1]) and math.isfinite(test_hist[-1])):
            raise NumericalError(f"non-finite evaluation loss after epoch {epoch}")
        log.debug("epoch %d lr %.3g train %.4f test %.4f", epoch, lr, train_hist[-1], test_hist[-1])
    return TrainHistory(train_hist, test_hist, int(seed), time.perf_counter() - t0)


# --- experiments -------------------------------------------------------------


def prepare_frames(seq, scenario, align=True):
    """Sequence -> per-frame (inputs, targets, input_labels, target_labels)."""
    if align:
        seq = align_sequence(seq)
    inputs, targets = make_scenario(seq, scenario)
    in_labels, tg_labels = column_labels(seq.keypoint_names, scenario)
    return inputs, targets, in_labels, tg_labels


def run_seeds(base_seed, run_index):
    """(init, split, train) seeds for one repetition."""
    r = derive_seed(base_seed, run_index)
    return derive_seed(r, 0), derive_seed(r, 1), derive_seed(r, 2)


@dataclass
class LiftExperiment:
    """Picklable bundle of data and settings for one model kind."""

    inputs: np.ndarray
    targets: np.ndarray
    kind: str
    config: object
    window: int = 1
    input_labels: tuple = ()
    target_labels: tuple = ()

    def spec(self):
        n_in, n_out = self.inputs.shape[1], self.targets.shape[1]
        c = self.config
        if self.kind == "linear":
            return LinearModelSpec(n_in, n_out, c.channels, c.linear_blocks, c.dropout)
        return TemporalModelSpec(n_in, n_out, window_to_widths(self.window), c.channels, c.dropout)

    def build(self, seed):
        spec = self.spec()
        return build_linear(spec, seed) if self.kind == "linear" else build_temporal(spec, seed)

    def split(self, seed):
        return self.split_with_standardizer(seed)[0]

    def split_with_standardizer(self, seed):
        c = self.config
        if self.kind == "linear":
            raw = frame_split_shuffle(self.inputs, self.targets, c.test_fraction, seed)
        else:
            raw = chunk_split_shuffle(self.inputs, self.targets, self.window, c.test_fraction, seed)
        st = fit_standardizer(raw.train_inputs, raw.train_targets, self.input_labels, self.target_labels)
        return apply_standardizer(st, raw), st

    def run(self, run_index):
        init_seed, split_seed, train_seed = run_seeds(self.config.seed, run_index)
        return train(self.build(init_seed), self.split(split_seed), self.config, seed=train_seed)


def make_experiment(seq, scenario, kind, config, window=None):
    inputs, targets, il, tl = prepare_frames(seq, scenario, config.align)
    window = 1 if kind == "linear" else (window or config.window)
    if kind == "temporal":
        window_to_widths(window)
    return LiftExperiment(inputs, targets, kind, config, window, tuple(il), tuple(tl))


def _run_task(args):
    build_model, make_split, config, r = args
    init_seed, split_seed, train_seed = run_seeds(config.seed, r)
    return train(build_model(init_seed), make_split(split_seed), config, seed=train_seed)


def repeat_runs(build_model, make_split, config, label="", jobs=1):
    """``config.runs`` repetitions, each with fresh init and split seeds."""
    tasks = [(build_model, make_split, config, r) for r in range(config.runs)]
    if jobs > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.runs)) as pool:
            histories = list(pool.map(_run_task, tasks))
    else:
        histories = [_run_task(t) for t in tasks]
    report = RunReport(label, histories)
    log.info("%s: test %s over %d runs", label, format_pm(report.test_mean, report.test_std), report.runs)
    return report


def window_sweep(windows, scenario, seq, config, jobs=1, out_dir=None):
    windows = sorted(set(int(w) for w in windows))
    for w in windows:
        window_to_widths(w)
    reports = []
    for w in windows:
        exp = make_experiment(seq, scenario, "temporal", config, window=w)
        reports.append(repeat_runs(exp.build, exp.split, config, label=f"temporal_w{w}", jobs=jobs))
    if out_dir is not None:
        write_sweep_csv(windows, reports, os.path.join(out_dir, "sweep.csv"))
        write_reports(reports, out_dir)
    return list(zip(windows, reports))


def write_sweep_csv(windows, reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("window", "train_mean", "train_std", "test_mean", "test_std"))
        for win, r in zip(windows, reports):
            w.writerow((win, repr(r.train_mean), repr(r.train_std), repr(r.test_mean), repr(r.test_std)))


@dataclass
class ScenarioTable:
    rows: list  # (scenario, {kind: RunReport})
    window: int

    def render(self):
        header = ("Scenario", "Linear", f"Temporal Convolutions (window {self.window})")
        lines = []
        body = [(sc.label, reps["linear"].cell(), reps["temporal"].cell()) for sc, reps in self.rows]
        widths = [max(len(r[i]) for r in body + [header]) for i in range(3)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        lines.append(fmt.format(*header))
        lines.append("-+-".join("-" * w for w in widths))
        lines.extend(fmt.format(*r) for r in body)
        return "\n".join(lines)

    def reports(self):
        return [reps[k] for _, reps in self.rows for k in ("linear", "temporal")]


def scenario_table(seq, config, scenarios=TABLE_SCENARIOS, window=None, jobs=1, out_dir=None):
    window = window or config.window
    window_to_widths(window)
    rows = []
    for sc in scenarios:
        reps = {}
        for kind in ("linear", "temporal"):
            exp = make_experiment(seq, sc, kind, config, window=window)
            reps[kind] = repeat_runs(exp.build, exp.split, config, label=f"{kind}_{sc.tag}", jobs=jobs)
        rows.append((sc, reps))
    table = ScenarioTable(rows, window)
    if out_dir is not None:
        write_reports(table.reports(), out_dir)
        with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
            fh.write(table.render() + "\n")
    return table


def _safe(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")


def write_reports(reports, out_dir):
    """report.csv, summary.csv and one history file per (label, run)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "run_index", "final_train", "final_test"))
        for rep in reports:
            for i, h in enumerate(rep.histories):
                w.writerow((rep.label, i, repr(h.final_train), repr(h.final_test)))
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "train_mean", "train_std", "test_mean", "test_std"))
        for rep in reports:
            w.writerow((rep.label, repr(rep.train_mean), repr(rep.train_std), repr(rep.test_mean), repr(rep.test_std)))
    for rep in reports:
        for i, h in enumerate(rep.histories):
            write_history(h, os.path.join(out_dir, f"history_{_safe(rep.label)}_{i}.csv"))


def write_history(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "test_loss"))
        for e, (tr, te) in enumerate(zip(history.train_loss, history.test_loss)):
            w.writerow((e, repr(tr), repr(te)))
