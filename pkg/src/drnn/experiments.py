"""Experiment configuration and runners shared by the CLI and the test suite."""
from __future__ import annotations

import configparser
import dataclasses
import gzip
import hashlib
import io
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .flatten import flatten, forward_derived_init, verify_equivalence
from .linalg import Rng
from .nets import InitialState, SeqNet, StackedParams, param_count
from .storage import MetricsWriter, load_dataset, save_checkpoint
from .tasks import (SineTaskSpec, TaskDataset, gen_masked_corpus, gen_reversal, gen_sine,
                    normalize_text)
from .train import TrainConfig, evaluate, train_loop

log = logging.getLogger(__name__)

TASKS = ("reversal", "sine", "masked_lm")
ARCHS = ("rnn", "lstm", "d_rnn", "d_lstm", "bi_rnn", "bi_lstm", "stacked_rnn", "stacked_lstm")
DEFAULT_CORPUS = "stdlib_docs_1m.txt.gz"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# ---------------------------------------------------------------- configuration

@dataclass
class DataConfig:
    n_train: int | None = None
    n_val: int | None = None
    n_test: int | None = None
    T: int | None = None
    V: int = 4
    a: int = 8
    c: int = 12
    gamma: float = 2.0
    corpus: str = ""
    chars: int = 1_000_000
    mask_prob: float = 0.2
    seq_len: int = 180
    file: str = ""


# split sizes and sequence length per task when not given
TASK_DEFAULTS = {
    "reversal": {"n_train": 10000, "n_val": 2000, "n_test": 2000, "T": 20},
    "sine": {"n_train": 10000, "n_val": 2000, "n_test": 2000, "T": 50},
    "masked_lm": {},
}


@dataclass
class ExperimentConfig:
    task: str = "reversal"
    arch: str = "lstm"
    layers: int = 1
    hidden: int = 64
    delay: int = 0
    f: str = "tanh"
    seed: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError("layers and hidden must be >= 1")
        if self.delay < 0:
            raise ConfigError("delay must be >= 0")
        if self.delay and not self.arch.startswith("d_"):
            raise ConfigError(f"delay {self.delay} given for undelayed architecture {self.arch}")
        if self.arch in ("rnn", "lstm", "d_rnn", "d_lstm") and self.layers != 1:
            raise ConfigError(f"{self.arch} is single-layer; use stacked_* for k > 1")
        if self.seed is None:
            raise ConfigError("a seed is required")
        return self

    @property
    def cell(self) -> str:
        return "lstm" if self.arch.endswith("lstm") else "rnn"

    def resolved_data(self) -> DataConfig:
        d = dataclasses.replace(self.data)
        for k, v in TASK_DEFAULTS[self.task].items():
            if getattr(d, k) is None:
                setattr(d, k, v)
        return d

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {k: _fmt(getattr(self, k))
                            for k in ("task", "arch", "layers", "hidden", "delay", "f", "seed")}
        cp["train"] = {f.name: _fmt(getattr(self.train, f.name))
                       for f in dataclasses.fields(TrainConfig)}
        cp["data"] = {f.name: _fmt(getattr(self.resolved_data(), f.name))
                      for f in dataclasses.fields(DataConfig)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def run_id(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:12]


def _fmt(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def _parse(value: str, like, name: str):
    """Convert ``value`` to the type of the field default ``like``."""
    if value == "" and (like is None or not isinstance(like, str)):
        return None
    try:
        if isinstance(like, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float) or like is None:
            f = float(value)
            return int(f) if like is None and f.is_integer() and "." not in value else f
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {value!r}") from exc
    return value


def _apply(obj, section: dict[str, str], where: str):
    # configparser lowercases option names, so match case-insensitively
    fields = {f.name.lower(): f.name for f in dataclasses.fields(obj)
              if f.name not in ("train", "data")}
    for key, v in section.items():
        k = fields.get(key.lower())
        if k is None:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        setattr(obj, k, _parse(v, getattr(obj, k), f"{where}.{k}"))


def load_config(text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from INI text plus ``section.key`` overrides."""
    cfg = ExperimentConfig()
    sections: dict[str, dict[str, str]] = {"experiment": {}, "train": {}, "data": {}}
    if text:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for name in cp.sections():
            if name not in sections:
                raise ConfigError(f"unknown section [{name}]")
            sections[name].update(cp[name])
    for key, v in (overrides or {}).items():
        if v is None:
            continue
        sec, _, k = key.rpartition(".")
        sections[sec or "experiment"][k] = _fmt(v) if not isinstance(v, str) else v
    _apply(cfg, sections["experiment"], "experiment")
    train_kw = {}
    tdefaults = TrainConfig()
    for k, v in sections["train"].items():
        if not hasattr(tdefaults, k):
            raise ConfigError(f"unknown key {k!r} in [train]")
        train_kw[k] = _parse(v, getattr(tdefaults, k), f"train.{k}")
    if cfg.seed is not None and "seed" not in train_kw:
        train_kw["seed"] = cfg.seed
    try:
        cfg.train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _apply(cfg.data, sections["data"], "data")
    return cfg


# ---------------------------------------------------------------- datasets and networks

def read_corpus(path: str = "", chars: int | None = None) -> str:
    """Normalized text from ``path`` (plain or gzip); the bundled corpus if empty."""
    if path:
        raw = Path(path).read_bytes()
    else:
        raw = resources.files("drnn").joinpath("data", DEFAULT_CORPUS).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    text = normalize_text(raw.decode("utf-8", errors="replace"))
    return text if chars is None else text[:chars]


def build_dataset(cfg: ExperimentConfig) -> TaskDataset:
    d = cfg.resolved_data()
    if d.file:
        return load_dataset(d.file)
    rng = Rng(cfg.seed).child(1)
    if cfg.task == "reversal":
        return gen_reversal(rng, d.n_train, d.n_val, d.n_test, d.T, d.V)
    if cfg.task == "sine":
        spec = SineTaskSpec(T=d.T, a=d.a, c=d.c, gamma=d.gamma)
        return gen_sine(rng, spec, d.n_train, d.n_val, d.n_test)
    text = read_corpus(d.corpus, d.chars)
    return gen_masked_corpus(rng, text, d.mask_prob, d.seq_len)


def build_net(cfg: ExperimentConfig, ds: TaskDataset) -> SeqNet:
    return SeqNet.build(Rng(cfg.seed).child(2), cell=cfg.cell, q=ds.input_dim, n=cfg.hidden,
                        m=ds.output_dim, layers=cfg.layers,
                        bidirectional=cfg.arch.startswith("bi_"), delay=cfg.delay, f=cfg.f,
                        g=ds.output_activation)


# ---------------------------------------------------------------- training

@dataclass
class RunResult:
    run_id: str
    best: SeqNet
    final: SeqNet
    history: object
    test: dict[str, float]
    metric: str
    out_dir: Path | None = None


def run_train(cfg: ExperimentConfig, out_dir=None, dataset: TaskDataset | None = None) -> RunResult:
    """Train one configuration; with ``out_dir`` write config, metrics and checkpoints."""
    cfg.validate()
    ds = dataset if dataset is not None else build_dataset(cfg)
    net = build_net(cfg, ds)
    run_id = cfg.run_id()
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.ini").write_text(cfg.to_ini())
        writer = MetricsWriter(out_dir / "metrics.csv", run_id, cfg.seed)
    try:
        def on_epoch(rows):
            if writer:
                for r in rows:
                    writer.write(r)

        best, hist = train_loop(net, ds, cfg.train, on_epoch=on_epoch)
        t0 = time.perf_counter()
        test = evaluate(best, ds.splits["test"], ds, cfg.train.eval_batch_size)
        row = {"epoch": hist.best_epoch or 0, "split": "test", "loss": test["loss"],
               "metric_name": ds.metric, "metric_value": test["metric"],
               "wall_ms": (time.perf_counter() - t0) * 1e3}
        if writer:
            writer.write(row)
    finally:
        if writer:
            writer.close()
    final = hist.final if hist.final is not None else best
    if out_dir is not None:
        extra = {"run_id": run_id, "best_epoch": hist.best_epoch, "stopped": hist.stopped}
        save_checkpoint(best, out_dir / "best.ckpt.json", extra)
        save_checkpoint(final, out_dir / "final.ckpt.json", extra)
        summary = {"run_id": run_id, "task": cfg.task, "arch": cfg.arch, "delay": cfg.delay,
                   "params": param_count(best), "epochs": len(hist.values("val")),
                   "best_epoch": hist.best_epoch, "stopped": hist.stopped,
                   "test_loss": test["loss"], "test_" + ds.metric: test["metric"]}
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return RunResult(run_id, best, final, hist, test, ds.metric, out_dir)


# ---------------------------------------------------------------- flatten grid

@dataclass
class GridConfig:
    cell: str = "rnn"
    ks: tuple = (1, 2, 3, 4)
    ns: tuple = (1, 2, 4, 8)
    Ts: tuple = (1, 5, 20)
    activations: tuple = ("tanh", "relu", "identity")
    seeds: tuple = tuple(range(10))
    q: int = 3
    m: int = 2
    tol: float = 1e-10


@dataclass
class GridCell:
    cell: str
    f: str
    k: int
    n: int
    T: int
    seed: int
    report: object

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        r = self.report
        cell_diff = "-" if r.max_cell_diff is None else f"{r.max_cell_diff:.3e}"
        where = "" if self.passed else f" worst_block={r.worst_block} worst_step={r.worst_step}"
        return (f"cell={self.cell} f={self.f} k={self.k} n={self.n} T={self.T} seed={self.seed} "
                f"max_out={r.max_output_diff:.3e} max_hidden={r.max_hidden_diff:.3e} "
                f"max_cell={cell_diff} {'PASS' if self.passed else 'FAIL'}{where}")


def flatten_case(cell: str, f: str, k: int, n: int, T: int, seed: int, q: int = 3, m: int = 2,
                 tol: float = 1e-10, corrupt=None) -> GridCell:
    """Random stack, its flattening, a random flattened start state, and a comparison.

    ``corrupt`` may edit the flattened network before the comparison (used
    to check that failures are reported).
    """
    rng = Rng(seed).child(k, n, T)
    stacked = StackedParams.init(rng, cell=cell, k=k, n=n, q=q, m=m, f=f)
    flat = flatten(stacked)
    h0 = rng.uniform(-1.0, 1.0, (k * n,))
    c0 = rng.uniform(-1.0, 1.0, (k * n,)) if cell == "lstm" else None
    init = forward_derived_init(flat, h0, c0)
    if corrupt is not None:
        corrupt(flat)
    flat_init = InitialState([h0], None if c0 is None else [c0])
    xs = rng.uniform(-1.0, 1.0, (T, q))
    report = verify_equivalence(stacked, init, flat, flat_init, xs, tol)
    return GridCell(cell, f, k, n, T, seed, report)


def run_flatten_grid(grid: GridConfig, corrupt=None):
    acts = ("tanh",) if grid.cell == "lstm" else grid.activations
    for f in acts:
        for k in grid.ks:
            for n in grid.ns:
                for T in grid.Ts:
                    for seed in grid.seeds:
                        yield flatten_case(grid.cell, f, k, n, T, seed, grid.q, grid.m,
                                           grid.tol, corrupt)


# ---------------------------------------------------------------- benchmark

@dataclass(frozen=True)
class BenchArch:
    arch: str
    layers: int
    hidden: int
    delay: int = 0

    @classmethod
    def parse(cls, s: str) -> "BenchArch":
        """``arch/layers/hidden/delay``, e.g. ``d_lstm/1/128/5``."""
        parts = s.strip().split("/")
        if len(parts) not in (3, 4) or parts[0] not in ARCHS:
            raise ConfigError(f"bad benchmark architecture {s!r}")
        try:
            nums = [int(p) for p in parts[1:]]
        except ValueError as exc:
            raise ConfigError(f"bad benchmark architecture {s!r}") from exc
        return cls(parts[0], *nums)

    def label(self) -> str:
        return f"{self.arch}/{self.layers}/{self.hidden}/{self.delay}"


@dataclass
class BenchConfig:
    archs: tuple = ("d_lstm/1/128/1", "d_lstm/1/128/5", "d_lstm/1/128/8", "d_lstm/1/128/10",
                    "bi_lstm/2/47/0")
    T: int = 180
    batch: int = 1  # streaming latency; see README
    q: int = 28
    m: int = 27
    warmup: int = 5
    batches: int = 300
    param_tol: float = 0.02
    seed: int = 0
    cpu_time: bool = True  # process CPU time; immune to preemption by other processes


@dataclass
class BenchResult:
    arch: BenchArch
    params: int
    times_ms: list[float]

    @property
    def median_ms(self) -> float:
        return statistics.median(self.times_ms)

    @property
    def std_ms(self) -> float:
        return statistics.pstdev(self.times_ms)


def bench_net(a: BenchArch, cfg: BenchConfig, rng: Rng) -> SeqNet:
    cell = "lstm" if a.arch.endswith("lstm") else "rnn"
    return SeqNet.build(rng, cell=cell, q=cfg.q, n=a.hidden, m=cfg.m, layers=a.layers,
                        bidirectional=a.arch.startswith("bi_"), delay=a.delay, g="softmax")


def run_benchmark(cfg: BenchConfig) -> list[BenchResult]:
    """Single-threaded forward latency per batch, architectures interleaved.

    Raises :class:`ConfigError` when parameter counts differ from the first
    architecture by more than ``param_tol``.
    """
    clock = time.process_time if cfg.cpu_time else time.perf_counter
    if cfg.batches < 50:
        raise ConfigError("at least 50 timed batches are required")
    archs = [BenchArch.parse(s) for s in cfg.archs]
    rng = Rng(cfg.seed)
    # architectures differing only in delay run on one network object, with
    # the delay set per call; separate copies showed layout-dependent offsets
    # larger than the cost of the delay itself
    shared: dict[tuple, SeqNet] = {}
    nets = []
    for i, a in enumerate(archs):
        key = (a.arch, a.layers, a.hidden)
        if key not in shared:
            shared[key] = bench_net(a, cfg, rng.child(i))
        nets.append(shared[key])
    counts = [param_count(n) for n in nets]
    ref = counts[0]
    for a, c in zip(archs, counts):
        if abs(c - ref) > cfg.param_tol * ref:
            raise ConfigError(f"{a.label()} has {c} parameters, {ref} expected "
                              f"(tolerance {cfg.param_tol:.0%})")
    xs = np.zeros((cfg.T, cfg.batch, cfg.q))
    tokens = rng.integers(0, cfg.q, (cfg.T, cfg.batch))
    np.put_along_axis(xs, tokens[..., None], 1.0, axis=-1)
    times = [[] for _ in archs]
    with threadpool_limits(limits=1):
        for rep in range(cfg.warmup + cfg.batches):
            # rotate the starting architecture so none always runs first
            for j in range(len(nets)):
                i = (rep + j) % len(nets)
                net = nets[i]
                net.delay = archs[i].delay
                t0 = clock()
                net.forward(xs)
                dt = (clock() - t0) * 1e3
                if rep >= cfg.warmup:
                    times[i].append(dt)
    return [BenchResult(a, c, t) for a, c, t in zip(archs, counts, times)]
