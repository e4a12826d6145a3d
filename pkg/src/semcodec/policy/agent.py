"""Action spaces, state construction and the actor-critic loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec.gop import QP_I_MAX, QP_I_MIN
from ..codec.types import CTU_SIZE
from .net import ACTOR, BASE_GROUPS, CRITIC, GROUPS, NumericError, PolicyError, PolicyNet

FRAME_QPS = np.arange(QP_I_MIN, QP_I_MAX + 1)  # action index -> QP_I
# CTU action index -> QP offset; foreground uses 0..2, background 3..6
CTU_OFFSETS = np.array([-2, 0, 2, 2, 4, 6, 8])
FG_ACTIONS = np.array([True, True, True, False, False, False, False])
BG_ACTIONS = ~FG_ACTIONS
LAMBDA_MAX = 100.0


def encode_lambda(lam) -> np.ndarray:
    """Map lambda in [0, 100] to [0, 1] on a log scale so small lambdas stay distinguishable."""
    return np.log1p(np.asarray(lam, dtype=np.float64)) / np.log1p(LAMBDA_MAX)


STATE_SIZE = 64


@dataclass
class State:
    """Batch of agent inputs: ``image`` (N, 64, 64, C), optional ``scalars`` (N, k),
    and a boolean ``legal`` (N, A) action mask."""

    image: np.ndarray
    scalars: np.ndarray | None
    legal: np.ndarray

    def __len__(self) -> int:
        return self.image.shape[0]

    def take(self, idx) -> "State":
        return State(
            self.image[idx],
            None if self.scalars is None else self.scalars[idx],
            self.legal[idx],
        )


@dataclass
class ActionDecision:
    action: int
    log_prob: float
    value: float
    entropy: float


def downsample(img: np.ndarray, size: int = STATE_SIZE) -> np.ndarray:
    """Block-average a (h, w) array with dims divisible by ``size`` to (size, size)."""
    h, w = img.shape
    return img.reshape(size, h // size, size, w // size).mean(axis=(1, 3))


def frame_state(luma: np.ndarray, mask: np.ndarray, lam: float) -> State:
    """Frame-level input: downsampled luma, mask coverage and a constant encoded-lambda plane."""
    planes = np.stack(
        [
            downsample(luma.astype(np.float64) / 255.0),
            downsample(mask.astype(np.float64)),
            np.full((STATE_SIZE, STATE_SIZE), encode_lambda(lam)),
        ],
        axis=-1,
    )
    return State(planes[None], None, np.ones((1, len(FRAME_QPS)), dtype=bool))


CTU_STATE_SIZE = 32


def ctu_crops(luma: np.ndarray, mask: np.ndarray, size: int = CTU_STATE_SIZE) -> np.ndarray:
    """(n_ctu, size, size, 2) block-averaged luma/mask crops in CTU raster order."""
    h, w = luma.shape
    gh, gw = h // CTU_SIZE, w // CTU_SIZE
    f = CTU_SIZE // size

    def tiles(a):
        t = a.reshape(gh, size, f, gw, size, f).mean(axis=(2, 5))
        return t.reshape(gh, size, gw, size).swapaxes(1, 2).reshape(gh * gw, size, size)

    return np.stack([tiles(luma.astype(np.float64) / 255.0), tiles(mask.astype(np.float64))], axis=-1)


def ctu_scalars(frame_qp, foreground, ratio, lam) -> np.ndarray:
    """Per-CTU scalar inputs (frame QP / 51, label, mask ratio, encoded lambda)."""
    fg = np.asarray(foreground, dtype=np.float64).ravel()
    ratio = np.asarray(ratio, dtype=np.float64).ravel()
    qp = np.broadcast_to(np.asarray(frame_qp, dtype=np.float64) / 51.0, fg.shape)
    lam = np.broadcast_to(encode_lambda(lam), fg.shape)
    return np.stack([qp, fg, ratio, lam], axis=1)


def legal_for_labels(foreground) -> np.ndarray:
    fg = np.asarray(foreground, dtype=bool).ravel()
    return np.where(fg[:, None], FG_ACTIONS[None, :], BG_ACTIONS[None, :])


def masked_logits(raw: np.ndarray, legal: np.ndarray) -> np.ndarray:
    return np.where(legal, raw, -np.inf)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax; -inf entries stay -inf."""
    logits = np.atleast_2d(logits)
    m = logits.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise PolicyError("a row has no legal action")
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(net: PolicyNet, state: State) -> tuple[np.ndarray, np.ndarray]:
    """Masked logits (N, A) and values (N,)."""
    if state.legal.shape != (len(state), net.arch.n_actions):
        raise PolicyError(f"legal mask shape {state.legal.shape} does not match {len(state)} x {net.arch.n_actions}")
    raw, value, _ = net.forward_raw(state.image, state.scalars)
    return masked_logits(raw, state.legal), value


def _decision(logits: np.ndarray, action: int, value: float = 0.0) -> ActionDecision:
    lp = log_softmax(logits)[0]
    p = np.exp(lp)
    ent = -float(np.sum(p * np.where(p > 0, lp, 0.0)))
    return ActionDecision(int(action), float(lp[action]), float(value), ent)


def greedy_action(logits: np.ndarray, value: float = 0.0) -> ActionDecision:
    """Argmax over legal actions; ties go to the lowest index."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if not np.any(np.isfinite(logits)):
        raise PolicyError("all actions are illegal")
    return _decision(logits, int(np.argmax(logits)), value)


def sample_action(logits: np.ndarray, rng: np.random.Generator, value: float = 0.0) -> ActionDecision:
    """Draw from the softmax over legal actions using ``rng``."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    return _decision(logits, int(sample_actions(logits[None], rng)[0]), value)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised inverse-CDF sampling, one uniform draw per row."""
    p = np.exp(log_softmax(logits))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])[:, None] * cdf[:, -1:]
    idx = (cdf <= u).sum(axis=1)
    # guard against landing on an illegal tail entry through rounding
    last_legal = p.shape[1] - 1 - np.argmax((p > 0)[:, ::-1], axis=1)
    return np.minimum(idx, last_legal)


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(logits)
    if not np.all(np.any(np.isfinite(logits), axis=1)):
        raise PolicyError("a row has no legal action")
    return np.argmax(logits, axis=1)


def param_groups(net: PolicyNet) -> dict[str, tuple[int, list[str]]]:
    """Group -> (parameter count, tensor names) for every group present in ``net``."""
    out: dict[str, tuple[int, list[str]]] = {}
    for name in sorted(net.params):
        g = net.group_of(name)
        count, names = out.get(g, (0, []))
        out[g] = (count + net.params[name].size, names + [name])
    return out


def _check_groups(groups) -> set[str]:
    groups = set(groups)
    unknown = groups - set(GROUPS)
    if unknown:
        raise PolicyError(f"unknown parameter groups {sorted(unknown)}; valid: {list(GROUPS)}")
    return groups


def trainable_mask(net: PolicyNet, groups) -> dict[str, bool]:
    """Tensor name -> True iff its group is in ``groups``."""
    groups = _check_groups(groups)
    return {name: net.group_of(name) in groups for name in net.params}


def head_fraction(net: PolicyNet) -> float:
    """Share of actor+critic parameters among all non-adapter parameters."""
    g = param_groups(net)
    base = sum(g[k][0] for k in BASE_GROUPS if k in g)
    return (g[ACTOR][0] + g[CRITIC][0]) / base


@dataclass
class LossReport:
    total: float
    actor: float
    critic: float
    entropy: float


def forward_backward(
    net: PolicyNet,
    state: State,
    actions,
    advantages,
    value_targets,
    entropy_coef: float = 0.0,
    groups=GROUPS,
    weights=None,
    chunk: int = 256,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Loss and gradients of the weighted actor-critic objective.

    Per sample: -log pi(a|s) * adv + 0.5 * (V(s) - target)^2 - entropy_coef * H(pi(.|s)),
    combined with ``weights`` (default: mean over the batch).  Tensors outside
    ``groups`` receive exactly-zero gradients.
    """
    groups = _check_groups(groups)
    n = len(state)
    actions = np.asarray(actions, dtype=np.int64).reshape(n)
    adv = np.asarray(advantages, dtype=np.float64).reshape(n)
    tgt = np.asarray(value_targets, dtype=np.float64).reshape(n)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)
    if not state.legal[np.arange(n), actions].all():
        raise PolicyError("an action is illegal under its state's mask")

    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    need = {g for g in groups if g in {net.group_of(k) for k in net.params}}
    tot_a = tot_c = tot_h = 0.0
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        raw, value, cache = net.forward_raw(state.image[sl], None if state.scalars is None else state.scalars[sl], keep=bool(need))
        legal = state.legal[sl]
        lp = log_softmax(masked_logits(raw, legal))
        p = np.exp(lp)
        plogp = np.where(legal, p * np.where(legal, lp, 0.0), 0.0)
        ent = -plogp.sum(axis=1)
        rows = np.arange(raw.shape[0])
        a = actions[sl]
        ws = w[sl]
        tot_a += float(np.sum(ws * -lp[rows, a] * adv[sl]))
        tot_c += float(np.sum(ws * 0.5 * (value - tgt[sl]) ** 2))
        tot_h += float(np.sum(ws * ent))
        if not need:
            continue
        onehot = np.zeros_like(p)
        onehot[rows, a] = 1.0
        safe_lp = np.where(legal, lp, 0.0)
        dlogits = (adv[sl] * ws)[:, None] * (p - onehot)
        # d(-H)/dz_j = p_j (log p_j + H)
        dlogits += entropy_coef * ws[:, None] * np.where(legal, p * (safe_lp + ent[:, None]), 0.0)
        dvalue = ws * (value - tgt[sl])
        g = net.backward(cache, dlogits, dvalue, need)
        for k, v in g.items():
            grads[k] += v
    total = tot_a + tot_c - entropy_coef * tot_h
    if not np.isfinite(total) or not all(np.all(np.isfinite(v)) for v in grads.values()):
        raise NumericError(f"non-finite loss or gradient (actor={tot_a}, critic={tot_c}, entropy={tot_h})")
    for k in grads:
        if net.group_of(k) not in groups:
            grads[k][...] = 0.0
    return LossReport(total, tot_a, tot_c, tot_h), grads
