"""Single-output Q-network scoring one candidate node at a time.

``N_i`` patches of a node go through one shared conv stage; the per-patch
features are concatenated, the outer product with the progress vector is
flattened, and a two-layer head reduces it to a scalar. Flattening puts the
features for target ``i`` in block ``i`` of the head input, so a one-hot
progress vector selects exactly one block of ``fc1_w`` rows.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InvalidArch, ParseError, ShapeMismatch
from .layers import (
    conv3x3_backward,
    conv3x3_forward,
    huber,
    maxpool2_backward,
    maxpool2_forward,
)

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
CHECKPOINT_MAGIC = b"QNET"
CHECKPOINT_VERSION = 1
PATCH_SIZE = 16
PATCH_CHANNELS = 3


@dataclass(frozen=True)
class ArchConfig:
    n_images: int = 10
    n_targets: int = 3
    conv1: int = 8
    conv2: int = 16
    hidden: int = 128

    def __post_init__(self):
        for name in ("n_images", "n_targets", "conv1", "conv2", "hidden"):
            if getattr(self, name) <= 0:
                raise InvalidArch(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def patch_features(self) -> int:
        side = PATCH_SIZE // 4
        return side * side * self.conv2

    @property
    def concat_features(self) -> int:
        return self.n_images * self.patch_features

    @property
    def head_inputs(self) -> int:
        return self.concat_features * self.n_targets

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv1_w": (3, 3, PATCH_CHANNELS, self.conv1),
            "conv1_b": (self.conv1,),
            "conv2_w": (3, 3, self.conv1, self.conv2),
            "conv2_b": (self.conv2,),
            "fc1_w": (self.head_inputs, self.hidden),
            "fc1_b": (self.hidden,),
            "fc2_w": (self.hidden, 1),
            "fc2_b": (1,),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


@dataclass
class QParams:
    arch: ArchConfig
    w: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.w[key]

    def copy(self) -> "QParams":
        return QParams(self.arch, {k: v.copy() for k, v in self.w.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w[k].ravel() for k in PARAM_ORDER])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.w.values())

    @property
    def dtype(self) -> np.dtype:
        return self.w["conv1_w"].dtype

    def astype(self, dtype) -> "QParams":
        """Copy with every array cast to ``dtype`` (used for float32 compute)."""
        return QParams(self.arch, {k: v.astype(dtype) for k, v in self.w.items()})

    def equals(self, other: "QParams") -> bool:
        return self.arch == other.arch and all(np.array_equal(self.w[k], other.w[k]) for k in PARAM_ORDER)


def init_params(seed: int, arch: ArchConfig | None = None) -> QParams:
    """Fan-in scaled uniform weights (He for ReLU layers, LeCun for the output), zero biases."""
    arch = arch or ArchConfig()
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x0DE7])
    w = {}
    for name, shape in arch.shapes().items():
        if name.endswith("_b"):
            w[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        gain = 3.0 if name == "fc2_w" else 6.0
        lim = np.sqrt(gain / fan_in)
        w[name] = rng.uniform(-lim, lim, size=shape)
    return QParams(arch, w)


def zero_params(arch: ArchConfig | None = None) -> QParams:
    arch = arch or ArchConfig()
    return QParams(arch, {k: np.zeros(s) for k, s in arch.shapes().items()})


# ------------------------------------------------------------------ forward
def conv_features(params: QParams, patches: np.ndarray, cache: bool = False):
    """Shared conv stage on ``(n, 16, 16, 3)`` patches -> ``(n, patch_features)``."""
    x = np.asarray(patches, dtype=params.dtype)
    a1, xp1 = conv3x3_forward(x, params["conv1_w"], params["conv1_b"])
    r1 = np.maximum(a1, 0.0)
    p1, i1 = maxpool2_forward(r1, keep_index=cache)
    a2, xp2 = conv3x3_forward(p1, params["conv2_w"], params["conv2_b"])
    r2 = np.maximum(a2, 0.0)
    p2, i2 = maxpool2_forward(r2, keep_index=cache)
    feats = p2.reshape(len(x), -1)
    if not cache:
        return feats, None
    return feats, (xp1, a1, i1, r1.shape, xp2, a2, i2, r2.shape)


def _head(params: QParams, feats: np.ndarray, x: np.ndarray):
    """Outer product with the progress vector, then FC-ReLU-FC.

    ``feats`` is ``(B, D)``; only the nonzero entries of ``x`` contribute, so
    for one-hot ``x`` each row touches a single block of ``fc1_w``.
    """
    arch = params.arch
    d = arch.concat_features
    w1 = params["fc1_w"]
    pre = np.zeros((len(feats), arch.hidden), dtype=feats.dtype)
    for i in range(arch.n_targets):
        rows = np.flatnonzero(x[:, i])
        if rows.size:
            pre[rows] += x[rows, i, None].astype(feats.dtype) * (feats[rows] @ w1[i * d : (i + 1) * d])
    pre += params["fc1_b"]
    hid = np.maximum(pre, 0.0)
    q = (hid @ params["fc2_w"])[:, 0] + params["fc2_b"][0]
    return q, pre, hid


def _check_inputs(params: QParams, patches, x):
    arch = params.arch
    patches = np.asarray(patches)
    x = np.asarray(x, dtype=np.float64)
    if patches.ndim == 4:
        patches = patches[None]
    if x.ndim == 1:
        x = x[None]
    if patches.shape[1:] != (arch.n_images, PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS):
        raise ShapeMismatch(f"expected (B, {arch.n_images}, 16, 16, 3) patches, got {patches.shape}")
    if x.shape[1] != arch.n_targets:
        raise ShapeMismatch(f"progress vector has {x.shape[1]} entries, expected {arch.n_targets}")
    if len(x) == 1 and len(patches) > 1:
        x = np.repeat(x, len(patches), axis=0)
    if len(x) != len(patches):
        raise ShapeMismatch("batch sizes of patches and progress vectors differ")
    return patches, x


def forward_batch(params: QParams, patches, x) -> np.ndarray:
    """Q-values for a batch: ``patches`` is ``(B, N_i, 16, 16, 3)``, ``x`` is ``(B, N_T)``."""
    patches, x = _check_inputs(params, patches, x)
    b, n = patches.shape[:2]
    feats, _ = conv_features(params, patches.reshape(b * n, PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS))
    q, _, _ = _head(params, feats.reshape(b, -1), x)
    return q


def forward(params: QParams, patches, x) -> float:
    """Scalar Q for one node's ``N_i`` patches and one progress vector."""
    patches = np.asarray(patches)
    if patches.ndim != 4:
        raise ShapeMismatch(f"expected (N_i, 16, 16, 3) patches, got {patches.shape}")
    return float(forward_batch(params, patches[None], np.asarray(x, dtype=np.float64)[None])[0])


def stack_patch_sets(sets: Sequence[Sequence[np.ndarray]], dtype=np.float64) -> np.ndarray:
    return np.asarray(sets, dtype=dtype)


# ----------------------------------------------------------------- training
@dataclass
class Transition:
    action_patches: tuple
    x: np.ndarray
    reward: float
    next_candidates: list
    x_next: np.ndarray
    done: bool


class FeatureCache:
    """Conv features per patch object under one frozen parameter set.

    Entries keep a reference to their patch, so ``id()`` keys cannot be
    recycled while cached. Build a fresh cache whenever the parameters change.
    """

    def __init__(self, params: QParams):
        self.params = params
        self._store: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self._store)

    def features(self, patches: Sequence[np.ndarray]) -> np.ndarray:
        missing = {}
        for p in patches:
            if id(p) not in self._store and id(p) not in missing:
                missing[id(p)] = p
        if missing:
            arr = np.asarray(list(missing.values()), dtype=self.params.dtype)
            feats, _ = conv_features(self.params, arr)
            for (key, p), f in zip(missing.items(), feats):
                self._store[key] = (p, f)
        return np.stack([self._store[id(p)][1] for p in patches])


def candidate_values(params: QParams, candidate_sets: Sequence[Sequence[np.ndarray]], x, cache: FeatureCache | None = None) -> np.ndarray:
    """Q for each candidate patch set under progress vector ``x`` (shared by all)."""
    arch = params.arch
    if not candidate_sets:
        return np.zeros(0)
    xv = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if cache is None:
        return forward_batch(params, stack_patch_sets(candidate_sets, params.dtype), xv)
    flat = [p for s in candidate_sets for p in s]
    feats = cache.features(flat).reshape(len(candidate_sets), arch.concat_features)
    q, _, _ = _head(params, feats, np.repeat(xv, len(candidate_sets), axis=0))
    return q


def td_targets(batch: Sequence[Transition], target_params: QParams, gamma: float, cache: FeatureCache | None = None) -> np.ndarray:
    """One-step targets: ``r`` if done or no candidates, else ``r + gamma * max Q_target``."""
    ys = np.empty(len(batch))
    live = [k for k, t in enumerate(batch) if not t.done and t.next_candidates]
    for k, t in enumerate(batch):
        ys[k] = t.reward
    if not live:
        return ys
    arch = target_params.arch
    sets, xs, owner = [], [], []
    for k in live:
        t = batch[k]
        for c in t.next_candidates:
            sets.append(c)
            xs.append(t.x_next)
            owner.append(k)
    xs = np.asarray(xs, dtype=np.float64)
    if cache is None:
        q = forward_batch(target_params, stack_patch_sets(sets, target_params.dtype), xs)
    else:
        flat = [p for s in sets for p in s]
        feats = cache.features(flat).reshape(len(sets), arch.concat_features)
        q, _, _ = _head(target_params, feats, xs)
    best = {}
    for k, v in zip(owner, q):
        if k not in best or v > best[k]:
            best[k] = v
    for k, v in best.items():
        ys[k] = batch[k].reward + gamma * v
    return ys


def loss_and_gradients(params: QParams, batch: Sequence[Transition], targets) -> tuple[float, dict[str, np.ndarray]]:
    """Mean Huber loss (delta 1) of ``Q(s, a) - y`` and its exact gradient."""
    patches = stack_patch_sets([t.action_patches for t in batch], params.dtype)
    x = np.asarray([t.x for t in batch], dtype=np.float64)
    return loss_and_gradients_arrays(params, patches, x, np.asarray(targets, dtype=np.float64))


def loss_and_gradients_arrays(params: QParams, patches: np.ndarray, x: np.ndarray, y: np.ndarray):
    patches, x = _check_inputs(params, patches, x)
    arch = params.arch
    b, n = patches.shape[:2]
    d = arch.concat_features
    feats_flat, cache = conv_features(params, patches.reshape(b * n, PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS), cache=True)
    feats = feats_flat.reshape(b, d)
    q, pre, hid = _head(params, feats, x)

    losses, dl = huber(q - y)
    loss = float(losses.mean())
    dq = (dl / b).astype(params.dtype)

    g: dict[str, np.ndarray] = {}
    g["fc2_w"] = hid.T @ dq[:, None]
    g["fc2_b"] = np.array([dq.sum()])
    dpre = (dq[:, None] * params["fc2_w"][:, 0][None, :]) * (pre > 0.0)
    g["fc1_b"] = dpre.sum(axis=0)
    w1 = params["fc1_w"]
    dw1 = np.zeros_like(w1)
    dfeats = np.zeros_like(feats)
    for i in range(arch.n_targets):
        rows = np.flatnonzero(x[:, i])
        if rows.size:
            xi = x[rows, i, None].astype(params.dtype)
            dw1[i * d : (i + 1) * d] = (xi * feats[rows]).T @ dpre[rows]
            dfeats[rows] += xi * (dpre[rows] @ w1[i * d : (i + 1) * d].T)
    g["fc1_w"] = dw1

    xp1, a1, i1, r1_shape, xp2, a2, i2, r2_shape = cache
    side = PATCH_SIZE // 4
    dp2 = dfeats.reshape(b * n, side, side, arch.conv2)
    dr2 = maxpool2_backward(dp2, i2, r2_shape)
    da2 = dr2 * (a2 > 0.0)
    dp1, g["conv2_w"], g["conv2_b"] = conv3x3_backward(da2, xp2, params["conv2_w"])
    dr1 = maxpool2_backward(dp1, i1, r1_shape)
    da1 = dr1 * (a1 > 0.0)
    _, g["conv1_w"], g["conv1_b"] = conv3x3_backward(da1, xp1, params["conv1_w"], need_dx=False)
    return loss, {k: v.astype(np.float64, copy=False) for k, v in g.items()}


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: QParams, grads: dict[str, np.ndarray], state: AdamState, lr: float | None = None) -> QParams:
    """Adaptive-moment update applied in place; returns ``params``."""
    lr = state.lr if lr is None else lr
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for k in PARAM_ORDER:
        g = grads[k]
        if g.shape != params.w[k].shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, expected {params.w[k].shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params.w[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def sync_target(params: QParams) -> QParams:
    return copy.deepcopy(params)


# --------------------------------------------------------------- checkpoint
def save_checkpoint(params: QParams, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def checkpoint_bytes(params: QParams) -> bytes:
    a = params.arch
    out = bytearray(CHECKPOINT_MAGIC)
    out += bytes([CHECKPOINT_VERSION])
    out += struct.pack("<5I", a.n_images, a.n_targets, a.conv1, a.conv2, a.hidden)
    for k in PARAM_ORDER:
        out += np.ascontiguousarray(params.w[k], dtype="<f8").tobytes()
    return bytes(out)


def load_checkpoint(path: str | Path) -> QParams:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_from_bytes(data: bytes) -> QParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError("not a QNET checkpoint")
    if len(data) < 25 or data[4] != CHECKPOINT_VERSION:
        raise ParseError("unsupported checkpoint version or truncated header")
    arch = ArchConfig(*struct.unpack_from("<5I", data, 5))
    off = 25
    w = {}
    for k, shape in arch.shapes().items():
        count = int(np.prod(shape))
        if off + 8 * count > len(data):
            raise ParseError(f"checkpoint truncated in {k}")
        w[k] = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
    if off != len(data):
        raise ParseError("trailing bytes after checkpoint weights")
    return QParams(arch, w)
