"""Symmetric contrastive loss over a batch of matched image/text embeddings."""

from __future__ import annotations

from dataclasses import dataclass

from clipita import tensor as T
from clipita.tensor import DimensionError, Tensor

DEFAULT_LOGIT_SCALE = 20.0


@dataclass(frozen=True)
class LossConfig:
    logit_scale: float = DEFAULT_LOGIT_SCALE

    def __post_init__(self):
        if not self.logit_scale > 0:
            raise ValueError(f"logit_scale must be positive, got {self.logit_scale}")


def clip_loss(image_emb, text_emb, cfg: LossConfig | None = None, *,
              logit_scale: float | None = None) -> Tensor:
    """Mean of the image->text and text->image cross-entropies.

    Row i of ``image_emb`` is the positive for row i of ``text_emb``. Both
    matrices are L2-normalised here, so callers pass raw encoder outputs.
    ``logit_scale`` overrides ``cfg`` and may be 0 (uniform logits), which
    ``LossConfig`` itself rejects.
    """
    image_emb, text_emb = T.as_tensor(image_emb), T.as_tensor(text_emb)
    if image_emb.data.ndim != 2 or image_emb.shape != text_emb.shape:
        raise DimensionError(f"embedding shapes differ: {image_emb.shape} vs {text_emb.shape}")
    n = image_emb.shape[0]
    if n < 1:
        raise DimensionError("clip_loss needs at least one pair")
    if logit_scale is None:
        logit_scale = (cfg or LossConfig()).logit_scale
    img = T.l2_normalize_rows(image_emb)
    txt = T.l2_normalize_rows(text_emb)
    logits = T.scale(T.matmul(img, T.transpose(txt)), logit_scale)
    labels = range(n)
    loss_i = T.cross_entropy_rows(logits, labels)
    loss_t = T.cross_entropy_rows(T.transpose(logits), labels)
    return T.scale(T.add(loss_i, loss_t), 0.5)
