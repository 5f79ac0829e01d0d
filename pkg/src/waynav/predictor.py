"""Toy waypoint predictor: masked RGB->depth cross-attention plus a shared linear head.

Everything is batched over scenes: feature tensors are ``(S, 12, F)`` and
heatmaps ``(S, 120, 12)``. The backward pass is written out by hand.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import TrainingError, ValidationError
from .geometry import (
    MAX_RANGE_M,
    N_ANGLE_BINS,
    N_DIST_BINS,
    N_VIEWS,
    DepthCamera,
    DepthPanorama,
    occupancy_mask,
    shortest_distance_profile,
)
from .heatmap import target_heatmap
from .losses import DEFAULT_LAMBDA_OCC, grad_l_total_logits, l_occ, l_vis

FEATURE_DIM = 16
BINS_PER_VIEW = N_ANGLE_BINS // N_VIEWS  # 10
HEAD_OUT = BINS_PER_VIEW * N_DIST_BINS  # 120
DEFAULT_LR = 0.1
DEFAULT_EPOCHS = 500

TWP_MAGIC = b"TWP1"
TWP_VERSION = 1


def adjacency_mask(n: int = N_VIEWS) -> np.ndarray:
    """``allowed[i, j] = 1`` iff views i and j are cyclic neighbours (or equal)."""
    i = np.arange(n)
    d = np.abs(i[:, None] - i[None, :]) % n
    return (np.minimum(d, n - d) <= 1).astype(np.uint8)


@dataclass
class ToyPredictorParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w_head: np.ndarray
    b_head: np.ndarray
    lr: float = DEFAULT_LR
    seed: int = 0

    def __post_init__(self):
        f = self.wq.shape[0]
        for name in ("wq", "wk", "wv"):
            if getattr(self, name).shape != (f, f):
                raise ValidationError(f"{name} must be {f}x{f}")
        if self.w_head.shape != (f, HEAD_OUT) or self.b_head.shape != (HEAD_OUT,):
            raise ValidationError("head shapes inconsistent with feature dim")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, dim: int = FEATURE_DIM, seed: int = 0, lr: float = DEFAULT_LR) -> "ToyPredictorParams":
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(dim)
        return cls(
            wq=rng.normal(0, s, (dim, dim)),
            wk=rng.normal(0, s, (dim, dim)),
            wv=rng.normal(0, s, (dim, dim)),
            w_head=rng.normal(0, 0.01, (dim, HEAD_OUT)),
            b_head=np.zeros(HEAD_OUT),
            lr=lr,
            seed=seed,
        )

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM) -> "ToyPredictorParams":
        z = np.zeros((dim, dim))
        return cls(z.copy(), z.copy(), z.copy(), np.zeros((dim, HEAD_OUT)), np.zeros(HEAD_OUT))

    def arrays(self):
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "w_head": self.w_head, "b_head": self.b_head}

    def copy(self) -> "ToyPredictorParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def with_flat(self, vec) -> "ToyPredictorParams":
        out, i = {}, 0
        for k, v in self.arrays().items():
            out[k] = np.asarray(vec[i:i + v.size], dtype=np.float64).reshape(v.shape)
            i += v.size
        return replace(self, **out)


def _softmax_masked(scores, mask):
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _Cache:
    rgb: np.ndarray
    dep: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    fused: np.ndarray


def masked_cross_attention(rgb, depth, mask, params: ToyPredictorParams, return_weights=False):
    """Single-head attention: RGB features query, depth features are keys and values.

    Weights outside ``mask`` are exactly zero and each query's weights sum to 1.
    Accepts ``(12, F)`` or batched ``(S, 12, F)`` inputs.
    """
    out, cache = _attention(np.asarray(rgb, dtype=np.float64), np.asarray(depth, dtype=np.float64),
                            np.asarray(mask).astype(bool), params)
    return (out, cache.attn) if return_weights else out


def _attention(rgb, dep, mask, params):
    q = rgb @ params.wq
    k = dep @ params.wk
    v = dep @ params.wv
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(params.dim)
    attn = _softmax_masked(scores, mask)
    fused = attn @ v
    return fused, _Cache(rgb, dep, q, k, v, attn, fused)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(rgb, dep, params):
    fused, cache = _attention(rgb, dep, adjacency_mask().astype(bool), params)
    logits = fused @ params.w_head + params.b_head  # (S, 12, 120)
    shape = logits.shape[:-2] + (N_ANGLE_BINS, N_DIST_BINS)
    return _sigmoid(logits).reshape(shape), cache


def predict_heatmap(features, params: ToyPredictorParams) -> np.ndarray:
    """Heatmap in [0, 1]; view v fills angle bins ``[10 v, 10 v + 10)``.

    ``features`` is an ``(rgb, depth)`` pair of ``(12, F)`` or ``(S, 12, F)`` arrays.
    """
    rgb, dep = features
    p, _ = _forward(np.asarray(rgb, dtype=np.float64), np.asarray(dep, dtype=np.float64), params)
    return p


def _backward(grad_logits, cache: _Cache, params: ToyPredictorParams):
    """Parameter gradients given dL/dlogits shaped ``(S, 12, 120)``."""
    g = grad_logits
    d_w_head = np.einsum("svf,svc->fc", cache.fused, g)
    d_b_head = g.sum(axis=(0, 1))
    d_fused = g @ params.w_head.T
    d_attn = d_fused @ np.swapaxes(cache.v, -1, -2)
    d_v = np.swapaxes(cache.attn, -1, -2) @ d_fused
    a = cache.attn
    d_scores = a * (d_attn - (d_attn * a).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(params.dim)
    d_q = d_scores @ cache.k * scale
    d_k = np.swapaxes(d_scores, -1, -2) @ cache.q * scale
    return {
        "wq": np.einsum("svf,svg->fg", cache.rgb, d_q),
        "wk": np.einsum("svf,svg->fg", cache.dep, d_k),
        "wv": np.einsum("svf,svg->fg", cache.dep, d_v),
        "w_head": d_w_head,
        "b_head": d_b_head,
    }


@dataclass
class TrainingSet:
    rgb: np.ndarray  # (S, 12, F)
    depth: np.ndarray  # (S, 12, F)
    targets: np.ndarray  # (S, 120, 12) P*
    masks: np.ndarray  # (S, 120, 12) M

    def __len__(self):
        return self.rgb.shape[0]


def loss_and_grad(data: TrainingSet, params: ToyPredictorParams, lambda_occ: float):
    """Mean-over-all-cells losses on the batch and the parameter gradient of l_total."""
    p, cache = _forward(data.rgb, data.depth, params)
    lv = l_vis(p, data.targets)
    lo = l_occ(p, data.masks)
    g = grad_l_total_logits(p, data.targets, data.masks, lambda_occ)
    g = g.reshape(p.shape[0], N_VIEWS, HEAD_OUT)
    return (lv, lo, lv + lambda_occ * lo), _backward(g, cache, params)


def synth_features(pano: DepthPanorama, rng: np.random.Generator, dim: int = FEATURE_DIM):
    """Stand-in encoders.

    Depth: for each view, the horizontal extent is split into ``dim``
    contiguous column chunks and each chunk reports its nearest depth,
    normalised by the sensing range. RGB: seeded Gaussian noise.
    """
    depth = np.empty((N_VIEWS, dim))
    for i, view in enumerate(pano.views):
        col_min = view.pixels.min(axis=0)
        chunks = np.array_split(col_min, dim)
        depth[i] = [c.min() / MAX_RANGE_M for c in chunks]
    rgb = rng.standard_normal((N_VIEWS, dim))
    return rgb, depth


def prepare_training_set(scenes, camera: DepthCamera = DepthCamera(), seed: int = 0, dim: int = FEATURE_DIM) -> TrainingSet:
    """Render, featurise and label a list of :class:`~waynav.scenes.ToyScene`."""
    from .world import render_depth_panorama

    if not scenes:
        raise ValidationError("training set is empty")
    rng = np.random.default_rng(seed)
    rgbs, deps, tgts, masks = [], [], [], []
    for sc in scenes:
        pano = render_depth_panorama(sc.plan, sc.pose, camera)
        rgb, dep = synth_features(pano, rng, dim)
        rgbs.append(rgb)
        deps.append(dep)
        tgts.append(target_heatmap(sc.waypoints))
        masks.append(occupancy_mask(shortest_distance_profile(pano, camera)).astype(np.float64))
    return TrainingSet(np.array(rgbs), np.array(deps), np.array(tgts), np.array(masks))


@dataclass
class LossPoint:
    epoch: int
    l_vis: float
    l_occ: float
    l_total: float


def train_toy(
    data: TrainingSet,
    lambda_occ: float = DEFAULT_LAMBDA_OCC,
    epochs: int = DEFAULT_EPOCHS,
    params: Optional[ToyPredictorParams] = None,
) -> Tuple[ToyPredictorParams, List[LossPoint]]:
    """Full-batch gradient descent on l_total.

    The curve has one row per epoch plus the initial evaluation, so
    ``epochs=0`` returns the starting parameters and a single row.
    """
    if len(data) == 0:
        raise ValidationError("training set is empty")
    params = (params or ToyPredictorParams.init(data.rgb.shape[-1])).copy()
    curve: List[LossPoint] = []
    for epoch in range(epochs + 1):
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            (lv, lo, lt), grads = loss_and_grad(data, params, lambda_occ)
        if not all(np.isfinite((lv, lo, lt))) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError(f"loss diverged at epoch {epoch}", params=params, curve=curve)
        curve.append(LossPoint(epoch, lv, lo, lt))
        if epoch == epochs:
            break
        arrays = params.arrays()
        params = replace(params, **{k: arrays[k] - params.lr * grads[k] for k in arrays})
    return params, curve


def write_curve_csv(curve: Sequence[LossPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,l_vis,l_occ,l_total\n")
        for pt in curve:
            fh.write(f"{pt.epoch},{pt.l_vis!r},{pt.l_occ!r},{pt.l_total!r}\n")


_TWP_HEADER = struct.Struct("<4sIIIdq")


def encode_params(params: ToyPredictorParams) -> bytes:
    """TWP1: magic, version, F, head width, lr, seed, then wq wk wv w_head b_head as little-endian f8."""
    buf = io.BytesIO()
    buf.write(_TWP_HEADER.pack(TWP_MAGIC, TWP_VERSION, params.dim, HEAD_OUT, float(params.lr), int(params.seed)))
    for arr in params.arrays().values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_params(buf: bytes) -> ToyPredictorParams:
    if len(buf) < _TWP_HEADER.size:
        raise ValidationError("truncated TWP1 header")
    magic, version, dim, head, lr, seed = _TWP_HEADER.unpack_from(buf, 0)
    if magic != TWP_MAGIC:
        raise ValidationError(f"bad params magic {magic!r}")
    if version != TWP_VERSION or head != HEAD_OUT:
        raise ValidationError(f"unsupported TWP1 layout (version {version}, head {head})")
    shapes = [(dim, dim)] * 3 + [(dim, HEAD_OUT), (HEAD_OUT,)]
    need = _TWP_HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(buf) != need:
        raise ValidationError(f"TWP1 payload is {len(buf)} bytes, expected {need}")
    off = _TWP_HEADER.size
    arrs = []
    for s in shapes:
        n = int(np.prod(s))
        arrs.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(s))
        off += 8 * n
    return ToyPredictorParams(*arrs, lr=lr, seed=seed)


def save_params(params: ToyPredictorParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_params(params))


def load_params(path) -> ToyPredictorParams:
    with open(path, "rb") as fh:
        return decode_params(fh.read())
