"""Training stack: AdaBelief updates, adaptive gradient clipping, cosine
learning-rate annealing and the two-phase (projection warm-up, then full
fine-tune) trainer with best-eval-loss checkpointing."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from clipita import encoders as E
from clipita import tensor as T
from clipita.augment import AugmentConfig, augment_pipeline
from clipita.loss import LossConfig, clip_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# -------------------------------------------------------------------- AGC

@dataclass(frozen=True)
class AGCConfig:
    clip_ratio: float = 0.01
    norm_floor: float = 1e-3

    def __post_init__(self):
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be positive")
        if self.norm_floor < 0:
            raise ValueError("norm_floor must be non-negative")


def agc_clip(grad: np.ndarray, param: np.ndarray, cfg: AGCConfig = AGCConfig()) -> np.ndarray:
    """Rescale ``grad`` so that |grad| <= clip_ratio * max(|param|, norm_floor).

    Norms are Euclidean over the whole array. Gradients already inside the
    bound are returned as the same object.
    """
    grad = np.asarray(grad, dtype=np.float64)
    param = np.asarray(param, dtype=np.float64)
    if grad.shape != param.shape:
        raise T.DimensionError(f"agc_clip shape mismatch: grad {grad.shape} vs param {param.shape}")
    g_norm = float(np.linalg.norm(grad))
    if g_norm == 0.0:
        return grad
    max_norm = cfg.clip_ratio * max(float(np.linalg.norm(param)), cfg.norm_floor)
    if g_norm <= max_norm:
        return grad
    return grad * (max_norm / g_norm)


# -------------------------------------------------------------- AdaBelief

@dataclass
class AdaBeliefState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    s: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: Mapping[str, np.ndarray], **hyper) -> "AdaBeliefState":
        return cls({k: np.zeros_like(v, dtype=np.float64) for k, v in arrays.items()},
                   {k: np.zeros_like(v, dtype=np.float64) for k, v in arrays.items()}, **hyper)

    def as_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"s/{k}": v for k, v in self.s.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], t: int, **hyper) -> "AdaBeliefState":
        m = {k[2:]: v for k, v in arrays.items() if k.startswith("m/")}
        s = {k[2:]: v for k, v in arrays.items() if k.startswith("s/")}
        return cls(m, s, t, **hyper)


def adabelief_step(params, grads: Mapping[str, np.ndarray], state: AdaBeliefState, lr: float):
    """One AdaBelief update; returns ``(new_params, new_state)``.

    ``params`` is a ``ModelParams`` (frozen groups are skipped) or a plain
    name -> array dict. Names without a gradient are left untouched.
    Gradients are expected to be clipped already.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if isinstance(params, E.ModelParams):
        arrays = params.arrays
        skip = {n for n in arrays if params.is_frozen(n)}
    else:
        arrays, skip = params, set()

    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.t + 1
    bc1, bc2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_arrays = dict(arrays)
    m_all, s_all = dict(state.m), dict(state.s)
    for name, g in grads.items():
        if name in skip:
            continue
        theta = arrays[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != theta.shape:
            raise T.DimensionError(f"{name}: grad {g.shape} vs param {theta.shape}")
        m = b1 * m_all.get(name, 0.0) + (1.0 - b1) * g
        s = b2 * s_all.get(name, 0.0) + (1.0 - b2) * (g - m) ** 2 + eps
        m_hat = m / bc1
        s_hat = s / bc2
        new_arrays[name] = theta - lr * m_hat / (np.sqrt(s_hat) + eps)
        m_all[name], s_all[name] = m, s

    new_state = replace(state, m=m_all, s=s_all, t=t)
    if isinstance(params, E.ModelParams):
        return E.ModelParams(params.config, new_arrays, params.vocab, dict(params.frozen)), new_state
    return new_arrays, new_state


# --------------------------------------------------------------- schedule

@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    total_steps: int = 1000
    warmup_phase: bool = False

    def __post_init__(self):
        if not self.lr_max >= self.lr_min >= 0:
            raise ValueError(f"need lr_max >= lr_min >= 0, got {self.lr_max}, {self.lr_min}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def cosine_lr(step: int, cfg: ScheduleConfig) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at total_steps.

    Steps past the end stay at lr_min.
    """
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if step >= cfg.total_steps:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * step / cfg.total_steps))


# ---------------------------------------------------------------- trainer

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    eval_every: int = 15
    eval_unit: str = "epoch"  # or "step"
    patience: int = 3
    min_rel_improvement: float = 1e-4
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for contrastive training")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.eval_unit not in ("epoch", "step"):
            raise ValueError(f"eval_unit must be 'epoch' or 'step', got {self.eval_unit!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class PairSet:
    """Images as uint8 (N, H, W, 3) plus one caption per image."""

    ids: list[str]
    images: np.ndarray
    captions: list[str]

    def __post_init__(self):
        if not (len(self.ids) == len(self.images) == len(self.captions)):
            raise ValueError("ids, images and captions must have equal length")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TrainResult:
    best: E.ModelParams
    best_eval_loss: float
    best_step: int
    final: E.ModelParams
    records: list[dict]
    checkpoint_dir: Path


def to_unit(images: np.ndarray) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) / 255.0


def loss_and_grads(params: E.ModelParams, images01: np.ndarray,
                   captions: Sequence[E.TokenizedCaption],
                   loss_cfg: LossConfig = LossConfig()) -> tuple[float, dict[str, np.ndarray]]:
    with T.Tape() as tape:
        w = E.bind(params, tape)
        img = E.encode_images(params, images01, w)
        txt = E.encode_texts(params, captions, w)
        loss = clip_loss(img, txt, loss_cfg)
    value = loss.item()
    if loss.tape is None:
        return value, {}
    tape.backward(loss)
    grads = {n: tape.grad(t) for n, t in w.items() if t.tape is tape}
    return value, grads


def eval_loss(params: E.ModelParams, images01: np.ndarray,
              captions: Sequence[E.TokenizedCaption], loss_cfg: LossConfig = LossConfig()) -> float:
    img = E.encode_images(params, images01)
    txt = E.encode_texts(params, captions)
    return clip_loss(img, txt, loss_cfg).item()


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def train(params: E.ModelParams, train_set: PairSet, eval_set: PairSet, cfg: TrainConfig,
          phase1: ScheduleConfig, phase2: ScheduleConfig, agc: AGCConfig = AGCConfig(),
          augment_cfg: AugmentConfig | None = None, loss_cfg: LossConfig = LossConfig(),
          metrics_path: str | Path | None = None) -> TrainResult:
    """Two-phase contrastive training.

    Phase 1 freezes both towers and trains the projections until the eval
    loss stops improving (``patience`` evaluations in a row with relative
    improvement below ``min_rel_improvement``) or ``phase1.total_steps`` is
    reached. Phase 2 unfreezes everything for ``phase2.total_steps`` steps
    with a fresh optimizer state. The parameters with the lowest eval loss
    seen at any evaluation are written to ``best.ckpt`` and returned.
    """
    if len(eval_set) == 0:
        raise ValueError("eval split is empty")
    if cfg.batch_size > len(train_set):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds train size {len(train_set)}")
    augment_cfg = augment_cfg or AugmentConfig()

    ckdir = Path(cfg.checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(metrics_path) if metrics_path else ckdir / "metrics.jsonl"
    metrics_path.write_text("")

    max_tok = params.config.max_tokens
    train_tok = [E.tokenize(c, params.vocab, max_tok) for c in train_set.captions]
    eval_tok = [E.tokenize(c, params.vocab, max_tok) for c in eval_set.captions]
    eval_img = to_unit(eval_set.images)

    rng = np.random.default_rng(cfg.seed)
    n_train = len(train_set)
    steps_per_epoch = n_train // cfg.batch_size

    records: list[dict] = []
    best = {"loss": math.inf, "params": params, "step": 0}

    def evaluate(p, step, phase, lr, running):
        try:
            value = eval_loss(p, eval_img, eval_tok, loss_cfg)
        except T.NonFiniteError as exc:
            raise TrainingError(f"eval at step {step} (phase {phase}): {exc}") from exc
        if not math.isfinite(value):
            raise TrainingError(f"non-finite eval loss at step {step} (phase {phase})")
        rec = {"step": step, "phase": phase, "lr": lr,
               "train_loss": (sum(running) / len(running)) if running else None,
               "eval_loss": value}
        if value < best["loss"]:
            best.update(loss=value, params=p, step=step)
            E.save_checkpoint(ckdir / "best.ckpt", p, extra_meta={"step": step, "eval_loss": value})
            rec["checkpoint_path"] = "best.ckpt"
        records.append(rec)
        with open(metrics_path, "a") as fh:
            fh.write(_dump(rec) + "\n")
        log.info("step %d phase %d eval_loss %.6f", step, phase, value)
        return value

    params = E.set_frozen(params, image_tower=True, text_tower=True, image_proj=False, text_proj=False)
    E.save_checkpoint(ckdir / "init.ckpt", params)

    step = 0
    sample_index = 0
    for phase, sched in ((1, phase1), (2, phase2)):
        if phase == 2:
            params = E.set_frozen(params, **{g: False for g in E.GROUPS})
        state = AdaBeliefState.zeros_like(params.arrays)
        phase_step = 0
        phase_best = math.inf
        stalls = 0
        running: list[float] = []
        lr = cosine_lr(0, sched)
        last_eval_step = None
        if phase == 1:
            phase_best = evaluate(params, step, phase, lr, running)
            last_eval_step = step
        epoch = 0
        done = False
        while not done:
            order = rng.permutation(n_train)
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                imgs = train_set.images[idx]
                if cfg.augment:
                    imgs = np.stack([augment_pipeline(im, augment_cfg, cfg.seed, sample_index + k)
                                     for k, im in enumerate(imgs)])
                sample_index += len(idx)
                lr = cosine_lr(phase_step, sched)
                try:
                    value, grads = loss_and_grads(params, to_unit(imgs), [train_tok[i] for i in idx], loss_cfg)
                except T.NonFiniteError as exc:
                    raise TrainingError(f"step {step} (phase {phase}, phase step {phase_step}, "
                                        f"lr {lr:.3e}): {exc}") from exc
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite training loss {value} at step {step} "
                                        f"(phase {phase}, phase step {phase_step}, lr {lr:.3e})")
                grads = {n: agc_clip(g, params.arrays[n], agc) for n, g in grads.items()}
                params, state = adabelief_step(params, grads, state, lr)
                running.append(value)
                step += 1
                phase_step += 1
                due = cfg.eval_unit == "step" and phase_step % cfg.eval_every == 0
                if due:
                    phase_best, stalls = _track(evaluate(params, step, phase, lr, running),
                                                phase_best, stalls, cfg)
                    running, last_eval_step = [], step
                if phase_step >= sched.total_steps or (phase == 1 and stalls >= cfg.patience):
                    done = True
                    break
            epoch += 1
            if not done and cfg.eval_unit == "epoch" and epoch % cfg.eval_every == 0:
                phase_best, stalls = _track(evaluate(params, step, phase, lr, running),
                                            phase_best, stalls, cfg)
                running, last_eval_step = [], step
                if phase == 1 and stalls >= cfg.patience:
                    done = True
        if last_eval_step != step:
            evaluate(params, step, phase, lr, running)
        if phase == 1:
            E.save_checkpoint(ckdir / "phase1.ckpt", params)

    E.save_checkpoint(ckdir / "last.ckpt", params, extra_arrays=state.as_arrays(),
                      extra_meta={"step": step, "optimizer_t": state.t})
    return TrainResult(best["params"], best["loss"], best["step"], params, records, ckdir)


def _track(value: float, phase_best: float, stalls: int, cfg: TrainConfig) -> tuple[float, int]:
    if math.isfinite(phase_best) and (phase_best - value) / abs(phase_best) >= cfg.min_rel_improvement:
        stalls = 0
    elif math.isfinite(phase_best):
        stalls += 1
    return min(phase_best, value), stalls


def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
