"""Hybrid score-stacking fusion of gait and face features.

Each modality gets a scalar score head; the score is concatenated onto the
modality's feature vector and a per-modality class head maps the widened
vector to 2 logits. The final logits are the sum over modalities. Only these
fusion parameters are trained; both feature extractors stay frozen.

Class index 0 is PD throughout, and argmax ties break toward PD.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gait_features, ndnn
from .errors import MissingModalityError, ShapeError
from .face_features import FaceModel, extract_face_features
from .gait_features import GaitClassifier, GaitModelConfig, load_keypoints, preprocess
from .io import load_image
from .manifest import PD_INDEX, SubjectRecord


@dataclass
class HybridFusionParams:
    """Score head and class head per modality.

    For modality m with feature f (dim d_m): score s = score_w . f + score_b,
    widened = concat(f, s), logits_m = class_w @ widened + class_b where
    class_w is (2, d_m + 1). Final logits = logits_gait + logits_face.
    """

    gait_score_w: np.ndarray
    gait_score_b: float
    gait_class_w: np.ndarray
    gait_class_b: np.ndarray
    face_score_w: np.ndarray
    face_score_b: float
    face_class_w: np.ndarray
    face_class_b: np.ndarray

    def __post_init__(self):
        self.gait_score_w = np.asarray(self.gait_score_w, dtype=np.float64)
        self.face_score_w = np.asarray(self.face_score_w, dtype=np.float64)
        self.gait_class_w = np.asarray(self.gait_class_w, dtype=np.float64)
        self.face_class_w = np.asarray(self.face_class_w, dtype=np.float64)
        self.gait_class_b = np.asarray(self.gait_class_b, dtype=np.float64)
        self.face_class_b = np.asarray(self.face_class_b, dtype=np.float64)
        for name, w, cw in (
            ("gait", self.gait_score_w, self.gait_class_w),
            ("face", self.face_score_w, self.face_class_w),
        ):
            if w.ndim != 1:
                raise ShapeError(f"{name} score weights must be 1-D, got {w.shape}")
            if cw.shape != (2, w.shape[0] + 1):
                raise ShapeError(
                    f"{name} class head must be (2, {w.shape[0] + 1}), got {cw.shape}"
                )
        if self.gait_class_b.shape != (2,) or self.face_class_b.shape != (2,):
            raise ShapeError("class biases must have shape (2,)")

    @property
    def gait_dim(self) -> int:
        return self.gait_score_w.shape[0]

    @property
    def face_dim(self) -> int:
        return self.face_score_w.shape[0]

    @classmethod
    def init(cls, gait_dim: int, face_dim: int, seed: int = 0) -> "HybridFusionParams":
        rng = np.random.default_rng(seed)
        return cls(
            gait_score_w=rng.normal(0, 1 / np.sqrt(gait_dim), gait_dim),
            gait_score_b=0.0,
            gait_class_w=rng.normal(0, 1 / np.sqrt(gait_dim + 1), (2, gait_dim + 1)),
            gait_class_b=np.zeros(2),
            face_score_w=rng.normal(0, 1 / np.sqrt(face_dim), face_dim),
            face_score_b=0.0,
            face_class_w=rng.normal(0, 1 / np.sqrt(face_dim + 1), (2, face_dim + 1)),
            face_class_b=np.zeros(2),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "gait_score_w": self.gait_score_w,
            "gait_score_b": np.asarray([self.gait_score_b]),
            "gait_class_w": self.gait_class_w,
            "gait_class_b": self.gait_class_b,
            "face_score_w": self.face_score_w,
            "face_score_b": np.asarray([self.face_score_b]),
            "face_class_w": self.face_class_w,
            "face_class_b": self.face_class_b,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "HybridFusionParams":
        return cls(
            gait_score_w=arrays["gait_score_w"],
            gait_score_b=float(arrays["gait_score_b"][0]),
            gait_class_w=arrays["gait_class_w"],
            gait_class_b=arrays["gait_class_b"],
            face_score_w=arrays["face_score_w"],
            face_score_b=float(arrays["face_score_b"][0]),
            face_class_w=arrays["face_class_w"],
            face_class_b=arrays["face_class_b"],
        )

    def checksum(self) -> str:
        return ndnn.params_checksum(self.arrays())


def _fuse_batch(f_gait: np.ndarray, f_face: np.ndarray, params: HybridFusionParams):
    """Vectorized fuse of (n, d_g) and (n, d_f) features; returns logits and caches."""
    s_g = f_gait @ params.gait_score_w + params.gait_score_b
    s_f = f_face @ params.face_score_w + params.face_score_b
    wide_g = np.concatenate([f_gait, s_g[:, None]], axis=1)
    wide_f = np.concatenate([f_face, s_f[:, None]], axis=1)
    logits = (
        wide_g @ params.gait_class_w.T
        + params.gait_class_b
        + wide_f @ params.face_class_w.T
        + params.face_class_b
    )
    return logits, (wide_g, wide_f)


def hybrid_fuse(f_gait: np.ndarray, f_face: np.ndarray, params: HybridFusionParams) -> np.ndarray:
    """Fuse one subject's feature vectors into 2 logits (index 0 = PD)."""
    f_gait = np.asarray(f_gait, dtype=np.float64)
    f_face = np.asarray(f_face, dtype=np.float64)
    if f_gait.shape != (params.gait_dim,):
        raise ShapeError(f"gait feature shape {f_gait.shape}, expected ({params.gait_dim},)")
    if f_face.shape != (params.face_dim,):
        raise ShapeError(f"face feature shape {f_face.shape}, expected ({params.face_dim},)")
    if not (np.all(np.isfinite(f_gait)) and np.all(np.isfinite(f_face))):
        raise ShapeError("feature vectors contain non-finite values")
    logits, _ = _fuse_batch(f_gait[None], f_face[None], params)
    return logits[0]


@dataclass(frozen=True)
class FusionTrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0


class _ParamsAsLayer(ndnn.Layer):
    """Adapter so the shared Adam can drive HybridFusionParams."""

    def __init__(self, params: HybridFusionParams):
        super().__init__()
        self.fusion = params
        self.params = {
            "gait_score_w": params.gait_score_w,
            "gait_class_w": params.gait_class_w,
            "gait_class_b": params.gait_class_b,
            "face_score_w": params.face_score_w,
            "face_class_w": params.face_class_w,
            "face_class_b": params.face_class_b,
            "score_b": np.asarray([params.gait_score_b, params.face_score_b]),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def sync_scalars(self):
        self.fusion.gait_score_b = float(self.params["score_b"][0])
        self.fusion.face_score_b = float(self.params["score_b"][1])


def _batch_loss_and_grads(
    layer: _ParamsAsLayer, f_gait: np.ndarray, f_face: np.ndarray, labels: np.ndarray
):
    """Mean cross-entropy on one batch, accumulating gradients into ``layer``."""
    params = layer.fusion
    logits, (wide_g, wide_f) = _fuse_batch(f_gait, f_face, params)
    loss, grad_logits = ndnn.cross_entropy(logits, labels)
    # class heads
    layer.grads["gait_class_w"] += grad_logits.T @ wide_g
    layer.grads["face_class_w"] += grad_logits.T @ wide_f
    layer.grads["gait_class_b"] += grad_logits.sum(axis=0)
    layer.grads["face_class_b"] += grad_logits.sum(axis=0)
    # gradient w.r.t. the scalar scores flows through the widened column
    grad_s_g = grad_logits @ params.gait_class_w[:, -1]
    grad_s_f = grad_logits @ params.face_class_w[:, -1]
    layer.grads["gait_score_w"] += f_gait.T @ grad_s_g
    layer.grads["face_score_w"] += f_face.T @ grad_s_f
    layer.grads["score_b"] += np.asarray([grad_s_g.sum(), grad_s_f.sum()])
    return loss, logits


def train_fusion(
    features_gait: np.ndarray,
    features_face: np.ndarray,
    labels: np.ndarray,
    cfg: FusionTrainConfig = FusionTrainConfig(),
) -> tuple[HybridFusionParams, dict]:
    """Train the fusion head on precomputed frozen features.

    ``features_gait`` (n, d_g), ``features_face`` (n, d_f), ``labels`` class
    indices with both classes present. Adam on mini-batches with mean
    cross-entropy. Returns the trained parameters and a per-epoch trace.
    """
    features_gait = np.asarray(features_gait, dtype=np.float64)
    features_face = np.asarray(features_face, dtype=np.float64)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if features_gait.shape[0] != n or features_face.shape[0] != n:
        raise ShapeError("feature matrices and labels disagree on subject count")
    if n < 2 or np.unique(labels).size < 2:
        raise ShapeError("fusion training needs subjects of both classes")

    params = HybridFusionParams.init(features_gait.shape[1], features_face.shape[1], seed=cfg.seed)
    layer = _ParamsAsLayer(params)
    optimizer = ndnn.Adam([(layer, k) for k in layer.params], learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    trace = {"loss": [], "accuracy": []}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            layer.zero_grads()
            loss, logits = _batch_loss_and_grads(
                layer, features_gait[idx], features_face[idx], labels[idx]
            )
            y = labels[idx]
            optimizer.step()
            layer.sync_scalars()
            epoch_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
        trace["loss"].append(epoch_loss / n)
        trace["accuracy"].append(correct / n)
    return params, trace


@dataclass(frozen=True)
class Prediction:
    subject_id: str
    label: str
    is_pd: bool
    pd_probability: float
    logits: np.ndarray

    @property
    def predicted_label_index(self) -> int:
        return PD_INDEX if self.is_pd else 1 - PD_INDEX


@dataclass
class DiagnosisModels:
    """Everything needed to score one subject end to end."""

    gait: GaitClassifier
    face: FaceModel
    fusion: HybridFusionParams
    gait_cfg: GaitModelConfig


def subject_features(
    subject: SubjectRecord, models: DiagnosisModels, resolve
) -> tuple[np.ndarray, np.ndarray]:
    """Load a subject's files and compute both frozen feature vectors.

    ``resolve`` maps a manifest-relative path to a real one. Raises
    MissingModalityError when either modality is absent or unusable.
    """
    gait_path = Path(resolve(subject.gait_path))
    if not gait_path.exists():
        raise MissingModalityError(
            f"subject {subject.subject_id!r}: gait keypoints missing at {gait_path}"
        )
    seq = load_keypoints(gait_path)
    try:
        windows = preprocess(seq, models.gait_cfg)
    except Exception as exc:
        raise MissingModalityError(
            f"subject {subject.subject_id!r}: no usable gait windows ({exc})"
        ) from exc
    if not subject.faces:
        raise MissingModalityError(f"subject {subject.subject_id!r}: no face images listed")
    images = []
    for ref in subject.faces:
        face_path = Path(resolve(ref.path))
        if not face_path.exists():
            raise MissingModalityError(
                f"subject {subject.subject_id!r}: face image missing at {face_path}"
            )
        images.append(load_image(face_path).pixels)
    f_gait = models.gait.subject_feature(windows)
    f_face = extract_face_features(np.stack(images), models.face)
    return f_gait, f_face


def predict_subject(subject: SubjectRecord, models: DiagnosisModels, resolve) -> Prediction:
    """Fused diagnosis for one subject; ties break toward PD."""
    f_gait, f_face = subject_features(subject, models, resolve)
    logits = hybrid_fuse(f_gait, f_face, models.fusion)
    probs = ndnn.softmax(logits[None])[0]
    is_pd = gait_features.predict_is_pd(logits)
    return Prediction(
        subject_id=subject.subject_id,
        label=subject.label,
        is_pd=is_pd,
        pd_probability=float(probs[PD_INDEX]),
        logits=logits,
    )
