"""Policy-value network in plain numpy with hand-written backprop.

The observation volume is split into one input stack per present object slot
(own footprint, own target, other objects, other targets, immovables). A
trunk shared by all slots turns each stack into a feature vector, which is
joined with that slot's geometry and auxiliary inputs (finished flag,
previous-action one-hot, path length of each primitive and a flag telling
whether parking the object would cut another object's route) and passed
through a tanh layer. The policy head
scores the five primitives of every slot; the value head reads the mean of
the slot embeddings. Absent slots get logit 0 and are always masked.

Two trunks are available:

* ``conv``: two 3x3 convolutions evaluated at the slot's reference cell and
  at its target cell. Only those two outputs are used, so the layers run on
  the 5x5 receptive-field windows around them instead of the whole grid.
* ``fc``: one dense layer over the flattened stack.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .geometry import N_KINDS

N_PLANES = 5
N_GEOM = 6
# finished, previous action, primitive lengths, arrival-blocks flag
N_AUX_SLOT = 1 + N_KINDS + N_KINDS + 1
CHECKPOINT_FORMAT = "npmo.policy/2"


class ShapeMismatch(ValueError):
    pass


class NoLegalAction(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    M: int = 10
    n_max: int = 20
    trunk: str = "conv"
    conv_channels: Tuple[int, int] = (16, 16)
    fc_width: int = 32
    hidden: int = 64

    def __post_init__(self):
        if self.trunk not in ("conv", "fc"):
            raise ValueError(f"unknown trunk {self.trunk!r}")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))

    @property
    def n_actions(self) -> int:
        return self.n_max * N_KINDS

    @property
    def obs_shape(self):
        return (self.M, self.M, 2 * self.n_max + 1)

    @property
    def aux_dim(self) -> int:
        return self.n_max * N_AUX_SLOT

    @property
    def feature_dim(self) -> int:
        return 2 * self.conv_channels[1] if self.trunk == "conv" else self.fc_width

    def layer_shapes(self):
        shapes = []
        if self.trunk == "conv":
            c1, c2 = self.conv_channels
            shapes += [("conv1.w", (9 * N_PLANES, c1)), ("conv1.b", (c1,)),
                       ("conv2.w", (9 * c1, c2)), ("conv2.b", (c2,))]
        else:
            shapes += [("fc.w", (self.M * self.M * N_PLANES, self.fc_width)), ("fc.b", (self.fc_width,))]
        d = self.feature_dim + N_GEOM + N_AUX_SLOT
        shapes += [("hidden.w", (d, self.hidden)), ("hidden.b", (self.hidden,)),
                   ("policy.w", (self.hidden, N_KINDS)), ("policy.b", (N_KINDS,)),
                   ("value.w", (self.hidden,)), ("value.b", (1,))]
        return shapes


class PolicyParams:
    """All weights as one flat float64 vector plus named views into it."""

    def __init__(self, config: NetConfig, flat: Optional[np.ndarray] = None):
        self.config = config
        self.shapes = config.layer_shapes()
        size = sum(int(np.prod(s)) for _, s in self.shapes)
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ShapeMismatch(f"expected {size} parameters, got {flat.shape}")
        self.flat = flat
        self.layers = {}
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self.layers[name] = flat[off:off + n].reshape(shape)
            off += n

    @property
    def size(self) -> int:
        return self.flat.size

    def __getitem__(self, name):
        return self.layers[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, self.flat.copy())

    def grad_views(self, grad: np.ndarray):
        out, off = {}, 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            out[name] = grad[off:off + n].reshape(shape)
            off += n
        return out


def init_params(seed: int, config: NetConfig = NetConfig()) -> PolicyParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = PolicyParams(config)
    for name, shape in params.shapes:
        if not name.endswith(".w"):
            continue
        if name.startswith("conv"):
            fan_in, fan_out = shape[0], 9 * shape[1]
        elif len(shape) == 1:
            fan_in, fan_out = shape[0], 1
        else:
            fan_in, fan_out = shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[name][...] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# input preparation

def make_aux(finished: np.ndarray, prev_action: Optional[int], n_max: int,
             lengths: Optional[np.ndarray] = None, blocks: Optional[np.ndarray] = None,
             M: int = 10) -> np.ndarray:
    """Auxiliary vector, in blocks of ``n_max`` slots: finished flags, the
    previous-action one-hot, primitive path lengths divided by ``2 M``
    (0 when unusable) and the arrival-blocks flags."""
    n = len(finished)
    aux = np.zeros(n_max * N_AUX_SLOT)
    aux[:n] = finished
    if prev_action is not None:
        aux[n_max + prev_action] = 1.0
    if lengths is not None:
        off = n_max * (1 + N_KINDS)
        aux[off:off + n * N_KINDS] = np.where(lengths >= 0, lengths / (2.0 * M), 0.0).reshape(-1)
    if blocks is not None:
        off = n_max * (1 + 2 * N_KINDS)
        aux[off:off + n] = blocks
    return aux


def _slot_inputs(obs: np.ndarray, aux: np.ndarray, n_max: int):
    B, M = obs.shape[0], obs.shape[1]
    pos = obs[..., 0:2 * n_max:2]
    present = pos.any(axis=(1, 2))                    # (B, n)
    b_idx, s_idx = np.nonzero(present)
    own_pos = pos[b_idx, :, :, s_idx].astype(np.float64)           # (K, M, M)
    own_tgt = obs[..., 1:2 * n_max:2][b_idx, :, :, s_idx].astype(np.float64)
    all_pos = pos.sum(-1, dtype=np.float64)
    # target planes of empty slots are ignored
    all_tgt = (obs[..., 1:2 * n_max:2] * present[:, None, None, :]).sum(-1, dtype=np.float64)
    wall = obs[..., 2 * n_max].astype(np.float64)
    X = np.stack([own_pos, own_tgt, all_pos[b_idx] - own_pos, all_tgt[b_idx] - own_tgt, wall[b_idx]], axis=-1)

    # reference (top-left) cell of the footprint and of the target
    K = X.shape[0]
    ref_pos = np.argmax(own_pos.reshape(K, -1), axis=1)
    ref_tgt = np.argmax(own_tgt.reshape(K, -1), axis=1)
    scale = 1.0 / max(M - 1, 1)
    px, py = (ref_pos % M) * scale, (ref_pos // M) * scale
    tx, ty = (ref_tgt % M) * scale, (ref_tgt // M) * scale
    geom = np.stack([px, py, tx, ty, np.abs(px - tx), np.abs(py - ty)], axis=1)

    prev = aux[:, n_max:n_max * (1 + N_KINDS)].reshape(B, n_max, N_KINDS)
    lens = aux[:, n_max * (1 + N_KINDS):n_max * (1 + 2 * N_KINDS)].reshape(B, n_max, N_KINDS)
    blocks = aux[:, n_max * (1 + 2 * N_KINDS):]
    slot_aux = np.concatenate([aux[b_idx, s_idx][:, None], prev[b_idx, s_idx], lens[b_idx, s_idx],
                               blocks[b_idx, s_idx][:, None]], axis=1)
    return X, geom, slot_aux, b_idx, s_idx, ref_pos, ref_tgt


def _glimpses(X: np.ndarray, ref_pos: np.ndarray, ref_tgt: np.ndarray) -> np.ndarray:
    """5x5 windows of every slot's stack centred on its footprint and on its
    target: ``(K, 2, 5, 5, N_PLANES)``. Cells outside the grid read as
    immovable."""
    K, M = X.shape[0], X.shape[1]
    Xp = np.zeros((K, M + 4, M + 4, N_PLANES))
    Xp[..., 4] = 1.0
    Xp[:, 2:-2, 2:-2, :] = X
    ref = np.stack([ref_pos, ref_tgt], axis=1)        # (K, 2)
    cy, cx = ref // M, ref % M
    off = np.arange(5)
    iy = cy[:, :, None, None] + off[None, None, :, None]
    ix = cx[:, :, None, None] + off[None, None, None, :]
    k = np.arange(K)[:, None, None, None]
    return Xp[k, iy, ix]


def _patches3(G: np.ndarray) -> np.ndarray:
    """Valid 3x3 patches, offset-major then channel: ``(..., H-2, W-2, 9*C)``."""
    h, w = G.shape[-3] - 2, G.shape[-2] - 2
    return np.concatenate([G[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)], axis=-1)


# ---------------------------------------------------------------------------
# forward / backward

def check_inputs(config: NetConfig, obs: np.ndarray, aux: np.ndarray) -> None:
    if obs.shape[1:] != config.obs_shape:
        raise ShapeMismatch(f"observation shape {obs.shape[1:]} != {config.obs_shape}")
    if aux.shape != (obs.shape[0], config.aux_dim):
        raise ShapeMismatch(f"aux shape {aux.shape} != {(obs.shape[0], config.aux_dim)}")


def forward_batch(params: PolicyParams, obs: np.ndarray, aux: np.ndarray):
    """Batched forward pass: ``(logits (B, n_max*5), values (B,), cache)``."""
    cfg = params.config
    obs = np.asarray(obs)
    aux = np.asarray(aux, dtype=np.float64)
    check_inputs(cfg, obs, aux)
    B, n = obs.shape[0], cfg.n_max
    X, geom, slot_aux, b_idx, s_idx, ref_pos, ref_tgt = _slot_inputs(obs, aux, n)
    K = X.shape[0]
    cache = {"B": B, "b_idx": b_idx, "s_idx": s_idx}

    if cfg.trunk == "conv":
        c1, c2 = cfg.conv_channels
        P1 = _patches3(_glimpses(X, ref_pos, ref_tgt)).reshape(K * 2 * 9, 9 * N_PLANES)
        A1 = np.tanh(P1 @ params["conv1.w"] + params["conv1.b"]).reshape(K * 2, 9 * c1)
        F = np.tanh(A1 @ params["conv2.w"] + params["conv2.b"])          # (2K, c2)
        feat = F.reshape(K, 2 * c2)
        cache.update(P1=P1, A1=A1)
    else:
        Xf = X.reshape(K, -1)
        feat = np.tanh(Xf @ params["fc.w"] + params["fc.b"])
        cache.update(Xf=Xf)

    z = np.concatenate([feat, geom, slot_aux], axis=1)
    H = np.tanh(z @ params["hidden.w"] + params["hidden.b"])
    lp = H @ params["policy.w"] + params["policy.b"]
    logits = np.zeros((B, n, N_KINDS))
    logits[b_idx, s_idx] = lp
    counts = np.bincount(b_idx, minlength=B).astype(np.float64)
    Hsum = np.zeros((B, cfg.hidden))
    np.add.at(Hsum, b_idx, H)
    Hmean = Hsum / np.maximum(counts, 1.0)[:, None]
    values = Hmean @ params["value.w"] + params["value.b"][0]
    cache.update(feat=feat, z=z, H=H, Hmean=Hmean, counts=counts)
    return logits.reshape(B, n * N_KINDS), values, cache


def backward(params: PolicyParams, cache: dict, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector, given the
    loss gradient w.r.t. the outputs of ``forward_batch``."""
    cfg = params.config
    grad = np.zeros(params.size)
    g = params.grad_views(grad)
    B, b_idx, s_idx = cache["B"], cache["b_idx"], cache["s_idx"]
    H, z, feat = cache["H"], cache["z"], cache["feat"]
    dvalues = np.asarray(dvalues, dtype=np.float64).reshape(B)

    g["value.w"][...] = cache["Hmean"].T @ dvalues
    g["value.b"][0] = dvalues.sum()
    dHmean = dvalues[:, None] * params["value.w"][None, :]
    dH = (dHmean / np.maximum(cache["counts"], 1.0)[:, None])[b_idx]

    dlp = dlogits.reshape(B, cfg.n_max, N_KINDS)[b_idx, s_idx]
    g["policy.w"][...] = H.T @ dlp
    g["policy.b"][...] = dlp.sum(0)
    dH = dH + dlp @ params["policy.w"].T

    dZh = dH * (1.0 - H * H)
    g["hidden.w"][...] = z.T @ dZh
    g["hidden.b"][...] = dZh.sum(0)
    dfeat = (dZh @ params["hidden.w"].T)[:, :feat.shape[1]]

    if cfg.trunk == "conv":
        c1, c2 = cfg.conv_channels
        F = feat.reshape(-1, c2)
        A1 = cache["A1"]
        dZ2 = dfeat.reshape(-1, c2) * (1.0 - F * F)
        g["conv2.w"][...] = A1.T @ dZ2
        g["conv2.b"][...] = dZ2.sum(0)
        dA1 = dZ2 @ params["conv2.w"].T
        dZ1 = (dA1 * (1.0 - A1 * A1)).reshape(-1, c1)
        g["conv1.w"][...] = cache["P1"].T @ dZ1
        g["conv1.b"][...] = dZ1.sum(0)
    else:
        dZ1 = dfeat * (1.0 - feat * feat)
        g["fc.w"][...] = cache["Xf"].T @ dZ1
        g["fc.b"][...] = dZ1.sum(0)
    return grad


def forward(params: PolicyParams, obs: np.ndarray, aux: np.ndarray):
    """Single-observation forward: ``(logits (n_max*5,), value)``."""
    obs = np.asarray(obs)
    if obs.shape != params.config.obs_shape:
        raise ShapeMismatch(f"observation shape {obs.shape} != {params.config.obs_shape}")
    logits, values, _ = forward_batch(params, obs[None], np.asarray(aux, dtype=np.float64)[None])
    return logits[0], float(values[0])


LossFn = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray, np.ndarray]]


def loss_gradients(params: PolicyParams, obs: np.ndarray, aux: np.ndarray, loss_fn: LossFn):
    """``loss_fn(logits, values) -> (loss, dloss/dlogits, dloss/dvalues)``;
    returns ``(loss, gradient w.r.t. params.flat)``."""
    logits, values, cache = forward_batch(params, obs, aux)
    loss, dlogits, dvalues = loss_fn(logits, values)
    return loss, backward(params, cache, dlogits, dvalues)


# ---------------------------------------------------------------------------
# masked categorical

def masked_log_softmax(logits: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise log-softmax over ``mask``; masked entries are ``-inf``."""
    z = np.where(mask, logits / temperature, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    with np.errstate(divide="ignore"):
        return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


class ActionDistribution:
    """Categorical over the flattened ``(object, primitive)`` space."""

    def __init__(self, probs: np.ndarray, mask: np.ndarray):
        self.probs = probs
        self.mask = mask

    def sample(self, rng: np.random.Generator) -> int:
        # inverse CDF so one uniform draw is consumed per sample
        cdf = np.cumsum(self.probs)
        idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        if idx >= self.probs.size:
            idx = int(np.flatnonzero(self.probs > 0)[-1])
        return idx

    def log_prob(self, a: int) -> float:
        p = self.probs[a]
        return float(np.log(p)) if p > 0 else -np.inf

    def entropy(self) -> float:
        p = self.probs[self.mask]
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    def greedy(self) -> int:
        return int(np.argmax(np.where(self.mask, self.probs, -1.0)))


def masked_distribution(logits: np.ndarray, legal: np.ndarray, temperature: float = 1.0) -> ActionDistribution:
    legal = np.asarray(legal, dtype=bool).reshape(-1)
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if legal.shape != logits.shape:
        raise ShapeMismatch(f"mask shape {legal.shape} != logits shape {logits.shape}")
    if not legal.any():
        raise NoLegalAction("no legal action")
    probs = np.exp(masked_log_softmax(logits, legal, temperature))
    probs[~legal] = 0.0
    probs /= probs.sum()
    return ActionDistribution(probs, legal)


# ---------------------------------------------------------------------------
# optimizer and checkpoints

class Adam:
    def __init__(self, size: int, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: PolicyParams, grad: np.ndarray) -> None:
        """In-place descent step on ``params.flat``."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params.flat -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def save_params(params: PolicyParams, path) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "config": asdict(params.config),
            "shapes": [[name, list(shape)] for name, shape in params.shapes]}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), flat=params.flat)


def load_params(path) -> PolicyParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        flat = data["flat"].copy()
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    config = NetConfig(**meta["config"])
    params = PolicyParams(config, flat)
    if [[n, list(s)] for n, s in params.shapes] != meta["shapes"]:
        raise ShapeMismatch(f"{path}: layer shapes do not match the stored config")
    return params
