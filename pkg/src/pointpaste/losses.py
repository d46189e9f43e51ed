"""Training-loss reference implementations with analytic gradients.

All functions take probabilities (not logits), clamp arguments of log at
EPS_LOG, and return (scalar loss, gradient) with the gradient taken with
respect to the probability array. Gradients are exact for the clamped
expressions, so finite differences match wherever the clamp is inactive.

Pieces:

    mask_consistency_loss   per segmentation mask, MSE of member predictions
                            against the mask mean plus the entropy of that
                            mean; averaged over masks
    cross_entropy_loss      mean -log p[label] over non-ignored points
    cross_modal_kl_loss     KL(main || aux) with main treated as a constant
                            target, gradient w.r.t. aux only
    xm_average              elementwise mean of two prediction arrays
    total_loss              weighted sum of the six training components
    ema_update              teacher <- alpha * teacher + (1 - alpha) * student
    swap_pseudo_labels      replace modal pseudo-labels by the cross-modal
                            average's labels with a fixed probability
    pseudo_label_from_probs argmax with a confidence floor

Dense tensors cross the process boundary in a tiny container format: 16-byte
header (magic "PPTS", dtype code u32, rank u32, 4 reserved bytes), then rank
u32 dims, then the row-major payload. Codes: 1 float32, 2 uint16, 3 uint32.
"""

from __future__ import annotations

import dataclasses
import struct
import warnings
from typing import Optional

import numpy as np

from .cloud import IGNORE_LABEL, FormatError

EPS_LOG = 1e-12

_MAGIC = b"PPTS"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u2"), 3: np.dtype("<u4")}
_CODES = {v: k for k, v in _DTYPES.items()}


# ── containers ───────────────────────────────────────────────────────────

@dataclasses.dataclass
class PredictionMap:
    """Dense H x W x C probability map."""

    probs: np.ndarray

    def validate(self, tol: float = 1e-6) -> None:
        if self.probs.ndim != 3:
            raise ValueError("prediction map must be H x W x C")
        _check_rows(self.probs, tol)


@dataclasses.dataclass
class PointPredictions:
    """N x C per-point probabilities plus a role tag (main/aux, 2d/3d)."""

    probs: np.ndarray
    role: str = ""

    def validate(self, tol: float = 1e-6) -> None:
        if self.probs.ndim != 2:
            raise ValueError("point predictions must be N x C")
        _check_rows(self.probs, tol)


def _check_rows(probs: np.ndarray, tol: float) -> None:
    if probs.size == 0:
        return
    if probs.min() < -tol or probs.max() > 1.0 + tol:
        raise ValueError("probabilities outside [0, 1]")
    sums = probs.sum(axis=-1)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise ValueError(f"rows do not sum to 1 (worst off by {np.max(np.abs(sums - 1.0)):.3g})")


@dataclasses.dataclass
class MaskSet:
    """Integer mask-id image (0 = unmasked) and per-id pixel areas."""

    mask_id: np.ndarray
    areas: dict


def mask_filter(mask_id: np.ndarray, area_fraction_cap: float = 0.1) -> MaskSet:
    """Drop masks covering more than the given fraction of the image.

    Dropped ids are relabeled to 0; survivors keep their ids. The boundary is
    inclusive: area == cap * H * W survives.
    """
    mask_id = np.asarray(mask_id)
    if mask_id.ndim != 2:
        raise ValueError("mask image must be H x W")
    if not 0 < area_fraction_cap <= 1:
        raise ValueError("area_fraction_cap must be in (0, 1]")
    out = mask_id.astype(np.int64).copy()
    limit = area_fraction_cap * mask_id.size + 1e-9
    ids, counts = np.unique(out[out > 0], return_counts=True)
    areas = {}
    for i, c in zip(ids.tolist(), counts.tolist()):
        if c > limit:
            out[out == i] = 0
        else:
            areas[int(i)] = int(c)
    return MaskSet(mask_id=out, areas=areas)


# ── losses ───────────────────────────────────────────────────────────────

def mask_consistency_loss(probs: np.ndarray, masks: MaskSet,
                          literal_sign: bool = False) -> tuple:
    """Within-mask prediction consistency.

    For each mask: the MSE of member-pixel probabilities against the mask
    mean, plus the entropy of the mask mean, averaged over masks. Minimizing
    pulls members together and sharpens the shared prediction.
    literal_sign=True flips the entropy term (adds +sum p log p instead).

    probs is H x W x C. Returns (loss, gradient w.r.t. probs).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ValueError("probs must be H x W x C")
    if masks.mask_id.shape != probs.shape[:2]:
        raise ValueError("mask image and probability map disagree on H x W")
    grad = np.zeros_like(probs)
    ids = sorted(i for i, a in masks.areas.items() if i > 0 and a > 0)
    if not ids:
        return 0.0, grad

    sign = -1.0 if literal_sign else 1.0
    c = probs.shape[2]
    total = 0.0
    for i in ids:
        member = masks.mask_id == i
        k = int(member.sum())
        p = probs[member]                      # (k, C)
        pbar = p.mean(axis=0)
        dev = p - pbar
        mse = float((dev ** 2).sum()) / (k * c)
        clamped = np.maximum(pbar, EPS_LOG)
        entropy = -float((pbar * np.log(clamped)).sum())
        total += mse + sign * entropy
        # d(mse)/dp = 2 dev / (k c); the mean-shift term cancels because
        # deviations sum to zero. d(entropy)/dpbar = -(log pbar + 1).
        dent = -(np.log(clamped) + (pbar >= EPS_LOG).astype(np.float64))
        grad[member] += 2.0 * dev / (k * c) + sign * dent / k
    n = len(ids)
    return total / n, grad / n


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray,
                       ignore_label: int = IGNORE_LABEL) -> tuple:
    """Mean -log p[label] over points whose label is not the ignore sentinel.

    Returns (loss, gradient w.r.t. probs). All points ignored yields loss 0
    (with a warning), matching the convention of an empty batch.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError("probs must be N x C with one label per row")
    keep = labels != ignore_label
    grad = np.zeros_like(probs)
    m = int(keep.sum())
    if m == 0:
        warnings.warn("cross_entropy_loss: every point ignored, loss is 0")
        return 0.0, grad
    lab = labels[keep].astype(np.int64)
    if lab.min() < 0 or lab.max() >= probs.shape[1]:
        raise ValueError("label outside [0, C)")
    rows = np.flatnonzero(keep)
    p = probs[rows, lab]
    loss = float(-np.log(np.maximum(p, EPS_LOG)).mean())
    live = p >= EPS_LOG
    grad[rows[live], lab[live]] = -1.0 / (m * p[live])
    return loss, grad


def cross_modal_kl_loss(main: np.ndarray, aux: np.ndarray) -> tuple:
    """KL(main || aux), averaged over points, main held constant.

    Returns (loss, gradient w.r.t. aux). The gradient with respect to main is
    deliberately not produced: main is the mimicry target.
    """
    main = np.asarray(main, dtype=np.float64)
    aux = np.asarray(aux, dtype=np.float64)
    if main.shape != aux.shape or main.ndim != 2:
        raise ValueError("main and aux must both be N x C")
    grad = np.zeros_like(aux)
    n = main.shape[0]
    if n == 0:
        return 0.0, grad
    lm = np.log(np.maximum(main, EPS_LOG))
    la = np.log(np.maximum(aux, EPS_LOG))
    loss = float((main * (lm - la)).sum() / n)
    live = aux >= EPS_LOG
    grad[live] = -(main[live] / aux[live]) / n
    return loss, grad


def xm_average(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise mean of two probability arrays of identical shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    return (a + b) / 2.0


@dataclasses.dataclass(frozen=True)
class LossWeights:
    xm_source: float = 1.0
    xm_target: float = 1.0
    insert_ce: float = 0.1
    mask_consistency: float = 0.01


@dataclasses.dataclass(frozen=True)
class LossComponents:
    source_ce: float
    source_xm: float
    target_ce: float
    target_xm: float
    insert_ce: float
    mask_consistency: float


def total_loss(components: LossComponents, weights: LossWeights) -> float:
    vals = dataclasses.astuple(components)
    if not all(np.isfinite(v) for v in vals):
        raise ValueError(f"non-finite loss component in {components}")
    return (components.source_ce
            + weights.xm_source * components.source_xm
            + components.target_ce
            + weights.xm_target * components.target_xm
            + weights.insert_ce * components.insert_ce
            + weights.mask_consistency * components.mask_consistency)


# ── teacher state and pseudo-labels ──────────────────────────────────────

@dataclasses.dataclass
class EmaState:
    """Exponential-moving-average teacher parameters."""

    params: dict
    alpha: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")


def ema_update(state: EmaState, student: dict) -> EmaState:
    """One convex update: theta' <- alpha * theta' + (1 - alpha) * theta.

    With a constant student the teacher converges geometrically,
    |theta'_k - theta| = alpha^k |theta'_0 - theta|.
    """
    if set(state.params) != set(student):
        raise ValueError("student and teacher parameter names differ")
    a = state.alpha
    new = {k: a * np.asarray(v, dtype=np.float64)
           + (1.0 - a) * np.asarray(student[k], dtype=np.float64)
           for k, v in state.params.items()}
    return EmaState(params=new, alpha=a)


@dataclasses.dataclass(frozen=True)
class SwapPolicy:
    probability: float = 0.7
    per_point: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")


def swap_pseudo_labels(modal: np.ndarray, xm: np.ndarray,
                       policy: SwapPolicy, seed) -> tuple:
    """Swap modal pseudo-labels for cross-modal ones with fixed probability.

    Whole batches swap atomically by default; per_point=True draws one coin
    per label instead. Returns (labels, swap_mask); deterministic under seed.
    """
    modal = np.asarray(modal)
    xm = np.asarray(xm)
    if modal.shape != xm.shape or modal.ndim != 1:
        raise ValueError("label arrays must be 1-D and equal length")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if policy.per_point:
        mask = rng.random(modal.shape[0]) < policy.probability
    else:
        mask = np.full(modal.shape[0], bool(rng.random() < policy.probability))
    return np.where(mask, xm, modal), mask


def pseudo_label_from_probs(probs: np.ndarray, threshold: float = 0.9,
                            ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """Argmax labels with low-confidence rows mapped to the ignore sentinel.

    Ties take the lowest class index; max prob exactly at the threshold keeps
    its label.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be N x C")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    lab = probs.argmax(axis=1).astype(np.uint32)
    lab[probs.max(axis=1) < threshold] = ignore_label
    return lab


# ── tensor container I/O ─────────────────────────────────────────────────

def write_tensor(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype.kind == "f":
        key = 1          # float payloads are stored as float32
    elif array.dtype == np.uint16:
        key = 2
    elif array.dtype == np.uint32:
        key = 3
    else:
        raise ValueError(f"unsupported tensor dtype {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II4x", key, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype(_DTYPES[key]).tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != _MAGIC:
            raise FormatError(f"{path}: not a tensor container")
        code, rank = struct.unpack_from("<II", head, 4)
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        if rank > 8:
            raise FormatError(f"{path}: implausible rank {rank}")
        dims_raw = fh.read(4 * rank)
        if len(dims_raw) < 4 * rank:
            raise FormatError(f"{path}: truncated dims")
        dims = struct.unpack(f"<{rank}I", dims_raw)
        payload = fh.read()
    dtype = _DTYPES[code]
    expect = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expect:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
