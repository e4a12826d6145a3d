"""Few-shot transfer: tuning strategies, K:10:10 splits and the strategy sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .eval import BdError, anchor_sweep, bd_metric, policy_sweep
from .eval.sweeps import ANCHOR_QPS, SWEEP_LAMBDAS, SweepSet
from .policy import ACTOR, ADAPTER_A, ADAPTER_C, ADAPTER_V1, CRITIC, FC, FE
from .policy.checkpoint import Checkpoint
from .training import (
    PreparedSequence,
    TrainConfig,
    Trainer,
    TrainingError,
    evaluate,
    prepare,
    train_loop,
)

log = logging.getLogger(__name__)

VAL_SIZE = 10
TEST_SIZE = 10
SWEEP_FIELDS = ("strategy", "trainable_params", "trainable_fraction", "bd_rate_pct", "bd_quality", "val_reward", "seed")


class TuningError(ValueError):
    pass


class Strategy(str, Enum):
    PRETRAINED = "Pretrained"
    TUNE_A2C = "TuneA2C"
    TUNE_A2C_FC = "TuneA2C_FC"
    TUNE_FULL = "TuneFull"
    TUNE_ADAPTER_V1 = "TuneAdapterV1"
    TUNE_ADAPTER_V1_A2C = "TuneAdapterV1_A2C"
    TUNE_ADAPTER = "TuneAdapter"
    TUNE_ADAPTER_CRITIC = "TuneAdapter_Critic"

    @property
    def groups(self) -> frozenset:
        return _GROUPS[self]

    @property
    def adapters(self) -> tuple:
        return _ADAPTERS[self]

    @property
    def cli_name(self) -> str:
        return _CLI_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        """Accept the enum value (``TuneA2C``) or the CLI spelling (``tune-a2c``)."""
        for s in cls:
            if name in (s.value, s.cli_name):
                return s
        raise TuningError(f"unknown strategy {name!r}; valid: {', '.join(s.cli_name for s in cls)}")


_GROUPS = {
    Strategy.PRETRAINED: frozenset(),
    Strategy.TUNE_A2C: frozenset({ACTOR, CRITIC}),
    Strategy.TUNE_A2C_FC: frozenset({ACTOR, CRITIC, FC}),
    Strategy.TUNE_FULL: frozenset({FE, FC, ACTOR, CRITIC}),
    Strategy.TUNE_ADAPTER_V1: frozenset({ADAPTER_V1}),
    Strategy.TUNE_ADAPTER_V1_A2C: frozenset({ADAPTER_V1, ACTOR, CRITIC}),
    Strategy.TUNE_ADAPTER: frozenset({ADAPTER_A, ADAPTER_C}),
    Strategy.TUNE_ADAPTER_CRITIC: frozenset({ADAPTER_A, CRITIC}),
}
_ADAPTERS = {s: tuple(sorted(g for g in _GROUPS[s] if g.startswith("ADAPTER"))) for s in Strategy}
_CLI_NAMES = {
    Strategy.PRETRAINED: "pretrained",
    Strategy.TUNE_A2C: "tune-a2c",
    Strategy.TUNE_A2C_FC: "tune-a2c-fc",
    Strategy.TUNE_FULL: "tune-full",
    Strategy.TUNE_ADAPTER_V1: "tune-adapter-v1",
    Strategy.TUNE_ADAPTER_V1_A2C: "tune-adapter-v1-a2c",
    Strategy.TUNE_ADAPTER: "tune-adapter",
    Strategy.TUNE_ADAPTER_CRITIC: "tune-adapter-critic",
}
STRATEGY_NAMES = tuple(s.cli_name for s in Strategy)


@dataclass
class FewShotSplit:
    train: list
    val: list
    test: list
    k: int
    seed: int

    def manifest(self) -> dict:
        def names(xs):
            return [x.name for x in xs]

        return {"k": self.k, "seed": self.seed, "train": names(self.train), "val": names(self.val), "test": names(self.test)}

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")


def make_split(corpus, k: int, seed: int) -> FewShotSplit:
    """Seeded shuffle of ``corpus`` (ordered by name first) into K train, 10 val and 10 test."""
    if k < 1:
        raise TuningError(f"k must be >= 1, got {k}")
    need = k + VAL_SIZE + TEST_SIZE
    if len(corpus) < need:
        raise TuningError(f"corpus has {len(corpus)} sequences, a {k}:{VAL_SIZE}:{TEST_SIZE} split needs {need}")
    items = sorted(corpus, key=lambda s: s.name)
    if len({s.name for s in items}) != len(items):
        raise TuningError("corpus sequence names are not unique")
    order = np.random.default_rng(seed).permutation(len(items))
    pick = [items[i] for i in order]
    return FewShotSplit(pick[:k], pick[k : k + VAL_SIZE], pick[k + VAL_SIZE : need], k, seed)


def prepare_split(split: FewShotSplit) -> FewShotSplit:
    return FewShotSplit(prepare(split.train), prepare(split.val), prepare(split.test), split.k, split.seed)


def with_adapters(ckpt: Checkpoint, strategy: Strategy, seed: int = 0) -> Checkpoint:
    """Copy of ``ckpt`` with the strategy's adapters inserted (identity at init)."""
    out = ckpt.copy()
    for net in (out.frame, out.ctu):
        for g in strategy.adapters:
            net.add_adapter(g, seed)
    return out


def trainable_counts(ckpt: Checkpoint, groups) -> tuple[int, int]:
    """(trainable, total) parameter counts over both agents."""
    tr = tot = 0
    for net in (ckpt.frame, ckpt.ctu):
        for k, v in net.params.items():
            tot += v.size
            if net.group_of(k) in groups:
                tr += v.size
    return tr, tot


@dataclass
class TuneReport:
    strategy: str
    trainable_params: int
    total_params: int
    val_reward: float
    initial_val_reward: float
    best_iteration: int
    iterations: int
    seed: int
    history: list = field(default_factory=list)

    @property
    def trainable_fraction(self) -> float:
        return self.trainable_params / self.total_params

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "trainable_params": self.trainable_params,
            "total_params": self.total_params,
            "trainable_fraction": self.trainable_fraction,
            "val_reward": self.val_reward,
            "initial_val_reward": self.initial_val_reward,
            "best_iteration": self.best_iteration,
            "iterations": self.iterations,
            "seed": self.seed,
            "history": self.history,
        }


def tune(
    ckpt: Checkpoint,
    strategy,
    split: FewShotSplit,
    cfg: TrainConfig,
    bpp_norm: float | None = None,
) -> tuple[Checkpoint, TuneReport]:
    """Tune the strategy's groups on ``split.train`` (batch = K), keeping the best-on-validation weights.

    Validation runs before the first update and every ``cfg.val_every`` iterations.
    """
    strategy = Strategy.parse(strategy) if isinstance(strategy, str) else strategy
    norm = float(bpp_norm if bpp_norm is not None else ckpt.meta.get("bpp_norm", 0.0))
    if not norm > 0:
        raise TuningError("checkpoint carries no bpp_norm; pass bpp_norm explicitly")
    train = prepare(split.train)
    val = prepare(split.val)
    if not train or not val:
        raise TuningError("split needs non-empty train and val sets")

    if strategy is Strategy.PRETRAINED:
        v = evaluate(ckpt, val, cfg.val_lambdas, norm, cfg.norm_scale)
        tr, tot = trainable_counts(ckpt, ())
        return ckpt, TuneReport(strategy.value, tr, tot, v, v, 0, 0, cfg.seed, [[0, v]])

    work = with_adapters(ckpt, strategy, cfg.seed)
    tr, tot = trainable_counts(work, strategy.groups)
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "batch_size": len(train)})
    trainer = Trainer(work, cfg, strategy.groups)
    rng = np.random.default_rng([cfg.seed, 2])

    v0 = evaluate(work, val, cfg.val_lambdas, norm, cfg.norm_scale)
    best = (v0, 0, work.copy())
    history = [[0, v0]]

    def check(it):
        nonlocal best
        if it % cfg.val_every and it != cfg.iterations:
            return
        v = evaluate(work, val, cfg.val_lambdas, norm, cfg.norm_scale)
        history.append([it, v])
        log.info("%s iter %d val %.5f", strategy.value, it, v)
        if v > best[0]:
            best = (v, it, work.copy())

    train_loop(trainer, train, norm, rng, on_iteration=check)
    out = best[2]
    out.meta = {
        **ckpt.meta,
        "stage": "tune",
        "strategy": strategy.value,
        "best_iteration": best[1],
        "val_reward": best[0],
        "split": split.manifest(),
        "tune": cfg.to_dict(),
    }
    return out, TuneReport(strategy.value, tr, tot, best[0], v0, best[1], cfg.iterations, cfg.seed, history)


@dataclass
class SweepRow:
    strategy: str
    trainable_params: int
    trainable_fraction: float
    bd_rate_pct: float
    bd_quality: float
    val_reward: float
    seed: int

    def as_csv(self) -> dict:
        return {k: (repr(float(v)) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def evaluate_bd(ckpt: Checkpoint, test, anchor=None, lambdas=SWEEP_LAMBDAS, bpp_norm: float | None = None):
    """BD numbers of the greedy policy sweep against the constant-QP anchor on ``test``.

    The fit uses the Pareto operating points of the sweep; the raw curve is returned.
    """
    ss = test if isinstance(test, SweepSet) else SweepSet(test)
    anchor = anchor if anchor is not None else anchor_sweep(ss, ANCHOR_QPS)
    curve = policy_sweep(ckpt, ss, lambdas, bpp_norm)
    return bd_metric(anchor, curve.pareto()), curve


def strategy_sweep(
    ckpt: Checkpoint,
    strategies,
    split: FewShotSplit,
    cfg: TrainConfig,
    lambdas=SWEEP_LAMBDAS,
    anchor=None,
) -> list[SweepRow]:
    """Tune each strategy, score it on the test set and return rows sorted by BD-rate."""
    strategies = [Strategy.parse(s) if isinstance(s, str) else s for s in strategies]
    if len(set(strategies)) != len(strategies):
        raise TuningError("duplicate strategies")
    split = prepare_split(split)
    test = SweepSet(split.test)
    anchor = anchor if anchor is not None else anchor_sweep(test, ANCHOR_QPS)
    rows = []
    for s in strategies:
        tuned, rep = tune(ckpt, s, split, cfg)
        try:
            bd, _ = evaluate_bd(tuned, test, anchor, lambdas)
            bdr, bdq = bd.bd_rate, bd.bd_quality
        except BdError as e:
            log.warning("%s: BD metric unavailable (%s)", s.value, e)
            bdr = bdq = float("nan")
        rows.append(SweepRow(s.value, rep.trainable_params, rep.trainable_fraction, bdr, bdq, rep.val_reward, cfg.seed))
    rows.sort(key=lambda r: (np.isnan(r.bd_rate_pct), r.bd_rate_pct, r.strategy))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(SWEEP_FIELDS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


__all__ = [
    "FewShotSplit",
    "PreparedSequence",
    "STRATEGY_NAMES",
    "Strategy",
    "SweepRow",
    "TrainingError",
    "TuneReport",
    "TuningError",
    "evaluate_bd",
    "make_split",
    "prepare_split",
    "strategy_sweep",
    "sweep_csv",
    "trainable_counts",
    "tune",
    "with_adapters",
]
