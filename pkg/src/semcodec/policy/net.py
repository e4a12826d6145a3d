"""Actor-critic policy network with hand-written backpropagation.

Layout is NHWC float64 throughout.  The network is

    FE:  3x conv3x3 stride 2 + ReLU, then average pool to pool_out x pool_out
    FC:  flatten (+ scalar inputs) -> hidden, ReLU
         [AdapterV1: residual bottleneck on the hidden features]
    actor:  [Adapter]  -> linear -> logits
    critic: [Adapter]  -> linear -> value

Every tensor belongs to exactly one named group so that tuning strategies
can freeze or train arbitrary subsets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

FE, FC, ACTOR, CRITIC = "FE", "FC", "ACTOR", "CRITIC"
ADAPTER_V1, ADAPTER_A, ADAPTER_C = "ADAPTER_V1", "ADAPTER_A", "ADAPTER_C"
GROUPS = (FE, FC, ACTOR, CRITIC, ADAPTER_V1, ADAPTER_A, ADAPTER_C)
ADAPTER_GROUPS = (ADAPTER_V1, ADAPTER_A, ADAPTER_C)
BASE_GROUPS = (FE, FC, ACTOR, CRITIC)

_ADAPTER_PREFIX = {ADAPTER_V1: "adapter_v1", ADAPTER_A: "adapter_a", ADAPTER_C: "adapter_c"}


class PolicyError(ValueError):
    pass


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int
    n_actions: int
    n_scalars: int = 0
    input_size: int = 64
    conv_channels: tuple = (8, 16, 32)
    pool_out: int = 4
    hidden: int = 128
    adapter_v1_width: int = 16
    adapter_head_width: int = 8
    head_init_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        side = self.input_size >> len(self.conv_channels)
        if side << len(self.conv_channels) != self.input_size:
            raise PolicyError(f"input size {self.input_size} not divisible by 2^{len(self.conv_channels)}")
        if side % self.pool_out:
            raise PolicyError(f"feature map {side} not divisible by pool_out {self.pool_out}")

    @property
    def features(self) -> int:
        return self.conv_channels[-1] * self.pool_out * self.pool_out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def frame_arch(**kw) -> ArchConfig:
    """Frame-level agent: luma, mask and lambda planes; 24 QP_I actions."""
    return ArchConfig(in_channels=3, n_actions=24, n_scalars=0, **kw)


def ctu_arch(**kw) -> ArchConfig:
    """CTU-level agent: 2x-downsampled luma and mask crops plus (frame QP, label, ratio, lambda)."""
    kw.setdefault("input_size", 32)
    return ArchConfig(in_channels=2, n_actions=7, n_scalars=4, **kw)


def _he_uniform(rng, fan_in, shape):
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape)


def _im2col(xp: np.ndarray, ho: int, wo: int) -> np.ndarray:
    """(N, H+2, W+2, C) padded input -> (N, ho, wo, 9C) stride-2 patches."""
    return np.concatenate(
        [xp[:, ky : ky + 2 * ho : 2, kx : kx + 2 * wo : 2, :] for ky in range(3) for kx in range(3)],
        axis=-1,
    )


@dataclass
class _Cache:
    cols: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    shapes: list = field(default_factory=list)
    pooled_shape: tuple = ()
    z: np.ndarray | None = None
    h_fc: np.ndarray | None = None
    fc_pre: np.ndarray | None = None
    v1: tuple | None = None
    trunk: np.ndarray | None = None
    a: tuple | None = None
    c: tuple | None = None
    a_in: np.ndarray | None = None
    c_in: np.ndarray | None = None


class PolicyNet:
    """Parameters live in ``self.params`` (name -> float64 array)."""

    def __init__(self, arch: ArchConfig, seed: int = 0, params: dict | None = None):
        self.arch = arch
        self.seed = seed
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            self._check_params()
            return
        rng = np.random.default_rng(seed)
        p = {}
        cin = arch.in_channels
        for i, cout in enumerate(arch.conv_channels, 1):
            p[f"fe.conv{i}.w"] = _he_uniform(rng, 9 * cin, (9 * cin, cout))
            p[f"fe.conv{i}.b"] = np.zeros(cout)
            cin = cout
        fin = arch.features + arch.n_scalars
        p["fc.w"] = _he_uniform(rng, fin, (fin, arch.hidden))
        p["fc.b"] = np.zeros(arch.hidden)
        p["actor.w"] = arch.head_init_scale * _he_uniform(rng, arch.hidden, (arch.hidden, arch.n_actions))
        p["actor.b"] = np.zeros(arch.n_actions)
        p["critic.w"] = arch.head_init_scale * _he_uniform(rng, arch.hidden, (arch.hidden, 1))
        p["critic.b"] = np.zeros(1)
        self.params = p

    # -- structure -------------------------------------------------------------

    @staticmethod
    def group_of(name: str) -> str:
        prefix = name.split(".", 1)[0]
        for g, pre in _ADAPTER_PREFIX.items():
            if prefix == pre:
                return g
        table = {"fe": FE, "fc": FC, "actor": ACTOR, "critic": CRITIC}
        if prefix not in table:
            raise PolicyError(f"parameter {name!r} has no group")
        return table[prefix]

    @property
    def adapters(self) -> tuple[str, ...]:
        return tuple(g for g in ADAPTER_GROUPS if f"{_ADAPTER_PREFIX[g]}.down.w" in self.params)

    def add_adapter(self, group: str, seed: int = 0) -> None:
        """Insert an identity-initialised residual bottleneck (zero up-projection)."""
        if group not in ADAPTER_GROUPS:
            raise PolicyError(f"{group!r} is not an adapter group")
        if group in self.adapters:
            return
        width = self.arch.adapter_v1_width if group == ADAPTER_V1 else self.arch.adapter_head_width
        rng = np.random.default_rng([seed, ADAPTER_GROUPS.index(group)])
        pre = _ADAPTER_PREFIX[group]
        hid = self.arch.hidden
        self.params[f"{pre}.down.w"] = _he_uniform(rng, hid, (hid, width))
        self.params[f"{pre}.down.b"] = np.zeros(width)
        self.params[f"{pre}.up.w"] = np.zeros((width, hid))
        self.params[f"{pre}.up.b"] = np.zeros(hid)

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.arch, self.seed, params=self.params)

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _check_params(self) -> None:
        ref = PolicyNet(self.arch, 0)
        for g in self.adapters:
            ref.add_adapter(g)
        if set(ref.params) != set(self.params):
            raise PolicyError(f"parameter names do not match architecture: {sorted(set(ref.params) ^ set(self.params))}")
        for k, v in ref.params.items():
            if v.shape != self.params[k].shape:
                raise PolicyError(f"parameter {k} has shape {self.params[k].shape}, expected {v.shape}")

    # -- computation -------------------------------------------------------------

    def _check_input(self, x, scalars):
        a = self.arch
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != (a.input_size, a.input_size, a.in_channels):
            raise PolicyError(
                f"state image has shape {x.shape}, expected (N, {a.input_size}, {a.input_size}, {a.in_channels})"
            )
        if a.n_scalars:
            if scalars is None:
                raise PolicyError(f"this agent needs {a.n_scalars} scalar inputs")
            scalars = np.asarray(scalars, dtype=np.float64).reshape(x.shape[0], -1)
            if scalars.shape[1] != a.n_scalars:
                raise PolicyError(f"got {scalars.shape[1]} scalars, expected {a.n_scalars}")
        return x, scalars

    def _adapter_fwd(self, pre, h):
        p = self.params
        dpre = h @ p[f"{pre}.down.w"] + p[f"{pre}.down.b"]
        mid = np.maximum(dpre, 0.0)
        return h + mid @ p[f"{pre}.up.w"] + p[f"{pre}.up.b"], (h, dpre, mid)

    def _adapter_bwd(self, pre, cache, dout, grads):
        p = self.params
        h, dpre, mid = cache
        grads[f"{pre}.up.w"] = mid.T @ dout
        grads[f"{pre}.up.b"] = dout.sum(axis=0)
        dmid = (dout @ p[f"{pre}.up.w"].T) * (dpre > 0)
        grads[f"{pre}.down.w"] = h.T @ dmid
        grads[f"{pre}.down.b"] = dmid.sum(axis=0)
        return dout + dmid @ p[f"{pre}.down.w"].T

    def forward_raw(self, x, scalars=None, keep: bool = False):
        """Unmasked logits (N, A) and values (N,); with ``keep`` also the backprop cache."""
        x, scalars = self._check_input(x, scalars)
        p, a = self.params, self.arch
        cache = _Cache() if keep else None
        h = x
        for i in range(1, len(a.conv_channels) + 1):
            n, hh, ww, _ = h.shape
            ho, wo = hh // 2, ww // 2
            xp = np.pad(h, ((0, 0), (1, 1), (1, 1), (0, 0)))
            cols = _im2col(xp, ho, wo)
            pre = cols @ p[f"fe.conv{i}.w"] + p[f"fe.conv{i}.b"]
            h = np.maximum(pre, 0.0)
            if keep:
                cache.cols.append(cols)
                cache.pre.append(pre)
                cache.shapes.append(xp.shape)
        n, side, _, ch = h.shape
        k = side // a.pool_out
        pooled = h.reshape(n, a.pool_out, k, a.pool_out, k, ch).mean(axis=(2, 4))
        z = pooled.reshape(n, -1)
        if a.n_scalars:
            z = np.concatenate([z, scalars], axis=1)
        fc_pre = z @ p["fc.w"] + p["fc.b"]
        trunk = np.maximum(fc_pre, 0.0)
        adapters = self.adapters
        v1 = None
        if ADAPTER_V1 in adapters:
            trunk, v1 = self._adapter_fwd("adapter_v1", trunk)
        a_in, ac = trunk, None
        if ADAPTER_A in adapters:
            a_in, ac = self._adapter_fwd("adapter_a", trunk)
        c_in, cc = trunk, None
        if ADAPTER_C in adapters:
            c_in, cc = self._adapter_fwd("adapter_c", trunk)
        logits = a_in @ p["actor.w"] + p["actor.b"]
        value = (c_in @ p["critic.w"] + p["critic.b"])[:, 0]
        if keep:
            cache.pooled_shape = (n, a.pool_out, k, a.pool_out, k, ch)
            cache.z, cache.fc_pre = z, fc_pre
            cache.v1, cache.a, cache.c = v1, ac, cc
            cache.trunk, cache.a_in, cache.c_in = trunk, a_in, c_in
        return logits, value, cache

    def backward(self, cache: _Cache, dlogits: np.ndarray, dvalue: np.ndarray, need: set | None = None) -> dict:
        """Gradients of sum(dlogits * logits) + sum(dvalue * value).

        ``need`` restricts computation to the listed groups (others are absent
        from the result); backprop stops below the lowest needed layer.
        """
        p, a = self.params, self.arch
        need = set(GROUPS) if need is None else set(need)
        grads = {}
        dvalue = dvalue.reshape(-1, 1)
        if ACTOR in need:
            grads["actor.w"] = cache.a_in.T @ dlogits
            grads["actor.b"] = dlogits.sum(axis=0)
        if CRITIC in need:
            grads["critic.w"] = cache.c_in.T @ dvalue
            grads["critic.b"] = dvalue.sum(axis=0)
        below_heads = need & {ADAPTER_A, ADAPTER_C, ADAPTER_V1, FC, FE}
        if not below_heads:
            return grads
        da_in = dlogits @ p["actor.w"].T
        dc_in = dvalue @ p["critic.w"].T
        dtrunk = np.zeros_like(cache.trunk)
        if cache.a is not None:
            dtrunk += self._adapter_bwd("adapter_a", cache.a, da_in, grads)
        else:
            dtrunk += da_in
        if cache.c is not None:
            dtrunk += self._adapter_bwd("adapter_c", cache.c, dc_in, grads)
        else:
            dtrunk += dc_in
        if not need & {ADAPTER_V1, FC, FE}:
            return grads
        if cache.v1 is not None:
            dtrunk = self._adapter_bwd("adapter_v1", cache.v1, dtrunk, grads)
        if not need & {FC, FE}:
            return grads
        dfc = dtrunk * (cache.fc_pre > 0)
        grads["fc.w"] = cache.z.T @ dfc
        grads["fc.b"] = dfc.sum(axis=0)
        if FE not in need:
            return grads
        dz = dfc @ p["fc.w"].T
        dpool = dz[:, : a.features].reshape(cache.pooled_shape[0], a.pool_out, 1, a.pool_out, 1, -1)
        k = cache.pooled_shape[2]
        dh = np.broadcast_to(dpool / (k * k), cache.pooled_shape).reshape(
            cache.pooled_shape[0], a.pool_out * k, a.pool_out * k, -1
        )
        for i in range(len(a.conv_channels), 0, -1):
            dpre = dh * (cache.pre[i - 1] > 0)
            cols = cache.cols[i - 1]
            cout = dpre.shape[-1]
            grads[f"fe.conv{i}.w"] = cols.reshape(-1, cols.shape[-1]).T @ dpre.reshape(-1, cout)
            grads[f"fe.conv{i}.b"] = dpre.reshape(-1, cout).sum(axis=0)
            if i == 1:
                break
            dcols = dpre @ p[f"fe.conv{i}.w"].T
            n, hp, wp, cin = cache.shapes[i - 1]
            ho, wo = dpre.shape[1:3]
            dxp = np.zeros((n, hp, wp, cin))
            j = 0
            for ky in range(3):
                for kx in range(3):
                    dxp[:, ky : ky + 2 * ho : 2, kx : kx + 2 * wo : 2, :] += dcols[..., j * cin : (j + 1) * cin]
                    j += 1
            dh = dxp[:, 1:-1, 1:-1, :]
        return grads
