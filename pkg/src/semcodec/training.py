"""Episode rollouts, the rate/task-distortion reward and actor-critic updates."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import CTU_SIZE, Sequence, SequenceStats, encode_sequence, frame_qp_schedule
from .policy import (
    CTU_OFFSETS,
    FRAME_QPS,
    GROUPS,
    LossReport,
    PolicyNet,
    State,
    ctu_crops,
    ctu_scalars,
    forward,
    forward_backward,
    frame_state,
    greedy_actions,
    legal_for_labels,
    log_softmax,
    sample_actions,
)
from .policy.checkpoint import Checkpoint, fresh
from .policy.net import NumericError
from .semantics import ctu_labels, iou_array, segment_array

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
VAL_LAMBDAS = (0.0, 1.0, 5.0, 20.0, 100.0)
NORM_QP = 22
# bpp_norm = NORM_SCALE x (reference bpp at NORM_QP); places lambda in [1, 100] across the useful RD range
NORM_SCALE = 16.0
MIN_PRETRAIN_SEQUENCES = 20
LOG_FIELDS = ("iteration", "mean_reward", "actor_loss", "critic_loss", "entropy", "mean_bpp", "mean_distortion")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 0.0
    bpp_norm: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 100.0:
            raise TrainingError(f"lambda {self.lam} outside [0, 100]")
        if not self.bpp_norm > 0:
            raise TrainingError(f"bpp_norm must be positive, got {self.bpp_norm}")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 1
    lr_frame: float = 1e-3
    lr_ctu: float = 1e-4
    entropy_coef: float = 0.01
    seed: int = 0
    lambdas: tuple = DEFAULT_LAMBDAS
    val_lambdas: tuple = VAL_LAMBDAS
    val_every: int = 100
    norm_scale: float = NORM_SCALE

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "val_lambdas", tuple(float(x) for x in self.val_lambdas))
        for name in ("iterations", "batch_size", "val_every"):
            if int(getattr(self, name)) < 1:
                raise TrainingError(f"{name} must be positive")
        for name in ("lr_frame", "lr_ctu"):
            if not getattr(self, name) > 0:
                raise TrainingError(f"{name} must be positive")
        if not self.norm_scale > 0:
            raise TrainingError("norm_scale must be positive")
        if self.entropy_coef < 0:
            raise TrainingError("entropy_coef must be non-negative")
        if not self.lambdas or not self.val_lambdas:
            raise TrainingError("lambda sets must be non-empty")
        for lam in self.lambdas + self.val_lambdas:
            RewardConfig(lam)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["val_lambdas"] = list(self.val_lambdas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TrainingError(f"unknown training config keys {sorted(unknown)}")
        return cls(**d)


class PreparedSequence:
    """A sequence with its original-frame segmentations and CTU-level inputs cached."""

    def __init__(self, seq: Sequence):
        self.seq = seq
        self.name = seq.name
        self.masks = np.stack([segment_array(f) for f in seq.frames])
        labels = [ctu_labels(m) for m in self.masks]
        self.grid = labels[0].ratio.shape
        self.foreground = np.concatenate([lb.foreground.ravel() for lb in labels])
        self.ratio = np.concatenate([lb.ratio.ravel() for lb in labels])
        self.crops = np.concatenate([ctu_crops(f, m) for f, m in zip(seq.frames, self.masks)])
        self.legal = legal_for_labels(self.foreground)

    @property
    def n_frames(self) -> int:
        return len(self.seq)

    @property
    def n_ctu(self) -> int:
        return self.grid[0] * self.grid[1]

    def frame_state(self, lam: float) -> State:
        return frame_state(self.seq.frames[0], self.masks[0], lam)

    def ctu_state(self, frame_qps, lam: float) -> State:
        qps = np.repeat(np.asarray(frame_qps, dtype=np.float64), self.n_ctu)
        return State(self.crops, ctu_scalars(qps, self.foreground, self.ratio, lam), self.legal)


def prepare(seqs) -> list[PreparedSequence]:
    return [s if isinstance(s, PreparedSequence) else PreparedSequence(s) for s in seqs]


@dataclass
class Episode:
    name: str
    lam: float
    frame_action: int
    frame_log_prob: float
    frame_value: float
    frame_qps: list
    ctu_actions: np.ndarray
    ctu_log_probs: np.ndarray
    ctu_values: np.ndarray
    stats: SequenceStats
    distortions: list
    reward: float
    ctu_rewards: np.ndarray | None = field(default=None, repr=False)
    frame_state: State | None = field(default=None, repr=False)
    ctu_state: State | None = field(default=None, repr=False)

    @property
    def bpp(self) -> float:
        return self.stats.bpp

    @property
    def mean_distortion(self) -> float:
        return float(np.mean(self.distortions))

    @property
    def qp_i(self) -> int:
        return int(self.frame_qps[0])


def reward(stats, distortions, cfg: RewardConfig) -> float:
    """-(mean distortion + lambda * bpp / bpp_norm); 0 is the best possible value."""
    bpp = stats if isinstance(stats, (int, float, np.floating)) else stats.bpp
    return -(float(np.mean(distortions)) + cfg.lam * float(bpp) / cfg.bpp_norm)


def scaled_return(r: float, lam: float, norm_scale: float = NORM_SCALE) -> float:
    """Reward divided by (1 + lambda / norm_scale) so value targets share one scale across lambdas."""
    return r / (1.0 + lam / norm_scale)


def _pick(logits: np.ndarray, mode: str, rng) -> np.ndarray:
    if mode == "greedy":
        return greedy_actions(logits)
    if mode == "sample":
        if rng is None:
            raise TrainingError("sample mode needs an rng")
        return sample_actions(logits, rng)
    raise TrainingError(f"unknown mode {mode!r}")


def run_episode(
    prep: PreparedSequence,
    ckpt: Checkpoint,
    reward_cfg: RewardConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> Episode:
    """Frame agent picks QP_I, the schedule expands it, the CTU agent picks offsets, then encode."""
    if not isinstance(prep, PreparedSequence):
        prep = PreparedSequence(prep)
    lam = reward_cfg.lam
    fs = prep.frame_state(lam)
    f_logits, f_value = forward(ckpt.frame, fs)
    fa = int(_pick(f_logits, mode, rng)[0])
    f_lp = float(log_softmax(f_logits)[0, fa])
    qps = frame_qp_schedule(int(FRAME_QPS[fa]), prep.n_frames)

    cs = prep.ctu_state(qps, lam)
    c_logits, c_values = forward(ckpt.ctu, cs)
    ca = _pick(c_logits, mode, rng)
    c_lp = log_softmax(c_logits)[np.arange(len(ca)), ca]
    offsets = CTU_OFFSETS[ca].reshape(prep.n_frames, *prep.grid)

    _, recons, stats = encode_sequence(prep.seq, qps, list(offsets))
    dist, xor_share = [], []
    for r, m in zip(recons, prep.masks):
        seg = segment_array(r.samples)
        dist.append(1.0 - iou_array(seg, m))
        union = np.count_nonzero(seg | m)
        gh, gw = prep.grid
        xor = (seg ^ m).reshape(gh, CTU_SIZE, gw, CTU_SIZE).sum(axis=(1, 3)).ravel()
        xor_share.append(xor / union if union else np.zeros(gh * gw))
    bits = np.concatenate([f.per_ctu_bits.ravel() for f in stats.frames]).astype(np.float64)
    pixels = prep.seq.width * prep.seq.height
    # per-CTU shares of each frame's (distortion + rate) term, in frame-reward units
    ctu_r = -prep.n_ctu * (np.concatenate(xor_share) + reward_cfg.lam * bits / pixels / reward_cfg.bpp_norm)
    return Episode(
        name=prep.name,
        lam=lam,
        frame_action=fa,
        frame_log_prob=f_lp,
        frame_value=float(f_value[0]),
        frame_qps=qps,
        ctu_actions=ca,
        ctu_log_probs=c_lp,
        ctu_values=c_values,
        stats=stats,
        distortions=dist,
        reward=reward(stats, dist, reward_cfg),
        ctu_rewards=ctu_r,
        frame_state=fs,
        ctu_state=cs,
    )


class Adam:
    """Adam over a dict of tensors; only names in ``mask`` marked True are touched."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, mask: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            if not mask.get(k, False):
                continue
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _concat_states(states: list[State]) -> State:
    sc = None if states[0].scalars is None else np.concatenate([s.scalars for s in states])
    return State(np.concatenate([s.image for s in states]), sc, np.concatenate([s.legal for s in states]))


def a2c_update(
    net: PolicyNet,
    opt: Adam,
    state: State,
    actions,
    returns,
    groups,
    entropy_coef: float = 0.0,
    weights=None,
) -> LossReport:
    """One actor-critic step with single-step returns: advantage = return - V(s)."""
    returns = np.asarray(returns, dtype=np.float64)
    groups = set(groups)
    _, values = forward(net, state)
    adv = returns - values
    report, grads = forward_backward(net, state, actions, adv, returns, entropy_coef, groups, weights)
    mask = {k: net.group_of(k) in groups for k in net.params}
    if any(mask.values()):
        opt.step(net.params, grads, mask)
    return report


@dataclass
class StepReport:
    frame: LossReport
    ctu: LossReport

    @property
    def actor(self) -> float:
        return self.frame.actor + self.ctu.actor

    @property
    def critic(self) -> float:
        return self.frame.critic + self.ctu.critic

    @property
    def entropy(self) -> float:
        return 0.5 * (self.frame.entropy + self.ctu.entropy)


class Trainer:
    """Holds the optimiser state for both agents across a2c steps."""

    def __init__(self, ckpt: Checkpoint, cfg: TrainConfig, groups=GROUPS, dump_path: str | Path | None = None):
        self.ckpt = ckpt
        self.cfg = cfg
        self.groups = set(groups)
        self.opt_frame = Adam(cfg.lr_frame)
        self.opt_ctu = Adam(cfg.lr_ctu)
        self.dump_path = dump_path

    def step(self, episodes: list[Episode]) -> StepReport:
        return a2c_step(self, episodes)


def a2c_step(trainer: Trainer, episodes: list[Episode]) -> StepReport:
    """Update both agents from a batch of sampled episodes.

    CTU terms are averaged within each episode, then across the batch.
    """
    if not episodes:
        raise TrainingError("empty episode batch")
    cfg = trainer.cfg
    rets = np.array([scaled_return(e.reward, e.lam, cfg.norm_scale) for e in episodes])
    ctu_rets = np.concatenate([scaled_return(e.ctu_rewards, e.lam, cfg.norm_scale) for e in episodes])
    try:
        fr = a2c_update(
            trainer.ckpt.frame,
            trainer.opt_frame,
            _concat_states([e.frame_state for e in episodes]),
            [e.frame_action for e in episodes],
            rets,
            trainer.groups,
            cfg.entropy_coef,
        )
        n = [len(e.ctu_actions) for e in episodes]
        w = np.concatenate([np.full(k, 1.0 / (k * len(episodes))) for k in n])
        cr = a2c_update(
            trainer.ckpt.ctu,
            trainer.opt_ctu,
            _concat_states([e.ctu_state for e in episodes]),
            np.concatenate([e.ctu_actions for e in episodes]),
            ctu_rets,
            trainer.groups,
            cfg.entropy_coef,
            w,
        )
    except NumericError as e:
        diag = {
            "error": str(e),
            "episodes": [{"name": x.name, "lam": x.lam, "reward": x.reward, "qps": x.frame_qps} for x in episodes],
            "param_max_abs": {
                f"{a}/{k}": float(np.max(np.abs(v))) if np.all(np.isfinite(v)) else None
                for a, net in trainer.ckpt.nets().items()
                for k, v in sorted(net.params.items())
            },
        }
        if trainer.dump_path is not None:
            Path(trainer.dump_path).write_text(json.dumps(diag, indent=1, sort_keys=True))
        raise TrainingError(f"non-finite loss, aborting: {e}; diagnostics: {json.dumps(diag['episodes'])}") from e
    return StepReport(fr, cr)


def _fmt(x: float) -> str:
    return repr(float(x))


def log_row(it: int, episodes: list[Episode], rep: StepReport) -> dict:
    return {
        "iteration": it,
        "mean_reward": _fmt(np.mean([e.reward for e in episodes])),
        "actor_loss": _fmt(rep.actor),
        "critic_loss": _fmt(rep.critic),
        "entropy": _fmt(rep.entropy),
        "mean_bpp": _fmt(np.mean([e.bpp for e in episodes])),
        "mean_distortion": _fmt(np.mean([e.mean_distortion for e in episodes])),
    }


def rows_to_csv(rows: list[dict], fields=LOG_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def reference_bpp(preps, qp: int = NORM_QP) -> float:
    """Mean bpp of the zero-offset GOP schedule at QP_I = ``qp``."""
    preps = prepare(preps)
    if not preps:
        raise TrainingError("empty corpus")
    vals = [encode_sequence(p.seq, frame_qp_schedule(qp, p.n_frames))[2].bpp for p in preps]
    return float(np.mean(vals))


def evaluate(ckpt: Checkpoint, preps, lambdas, bpp_norm: float, norm_scale: float = NORM_SCALE) -> float:
    """Mean greedy scaled reward over sequences x lambdas."""
    out = []
    for lam in lambdas:
        rc = RewardConfig(lam, bpp_norm)
        for p in preps:
            out.append(scaled_return(run_episode(p, ckpt, rc, "greedy").reward, lam, norm_scale))
    return float(np.mean(out))


def train_loop(
    trainer: Trainer,
    preps: list[PreparedSequence],
    bpp_norm: float,
    rng: np.random.Generator,
    iterations: int | None = None,
    on_iteration=None,
) -> list[dict]:
    """Sample ``batch_size`` (sequence, lambda) episodes per iteration and update."""
    cfg = trainer.cfg
    rows = []
    lams = np.array(cfg.lambdas)
    for it in range(1, (iterations or cfg.iterations) + 1):
        idx = rng.integers(0, len(preps), size=cfg.batch_size)
        lam_idx = rng.integers(0, len(lams), size=cfg.batch_size)
        eps = [
            run_episode(preps[i], trainer.ckpt, RewardConfig(float(lams[j]), bpp_norm), "sample", rng)
            for i, j in zip(idx, lam_idx)
        ]
        rep = a2c_step(trainer, eps)
        rows.append(log_row(it, eps, rep))
        if it % 50 == 0:
            log.info("iter %d reward %s bpp %s", it, rows[-1]["mean_reward"], rows[-1]["mean_bpp"])
        if on_iteration is not None:
            on_iteration(it)
    return rows


def pretrain(
    corpus,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    min_sequences: int = MIN_PRETRAIN_SEQUENCES,
) -> tuple[Checkpoint, list[dict]]:
    """Train both agents from scratch on ``corpus`` with lambda drawn per episode."""
    if len(corpus) < min_sequences:
        raise TrainingError(f"pretraining needs at least {min_sequences} sequences, got {len(corpus)}")
    preps = prepare(corpus)
    ref = reference_bpp(preps)
    bpp_norm = cfg.norm_scale * ref
    ckpt = fresh(cfg.seed)
    ckpt.meta = {"bpp_norm": bpp_norm, "reference_bpp": ref, "stage": "pretrain", "train": cfg.to_dict()}
    trainer = Trainer(ckpt, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    rows = train_loop(trainer, preps, bpp_norm, rng)
    if log_path is not None:
        Path(log_path).write_text(rows_to_csv(rows))
    return ckpt, rows
