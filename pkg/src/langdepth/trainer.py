"""Training loop: alternating caption/image steps with a shared decoder.

Each global step updates exactly one branch. A caption step draws one
latent sample per caption and trains the caption head plus the decoder
under the scale-invariant loss with a KL pull toward the standard
normal. An image step trains the image sampler plus the decoder, with
the KL applied to the batch statistics of the predicted perturbation
grid while the caption statistics stay frozen behind detach. The branch
choice, the shuffles, and the latent draws are all pure functions of the
seed and the step index, so a run is reproducible bit for bit.

A step whose forward or backward pass trips a non-finite check is
skipped: the optimizer is never invoked, so parameters and moments stay
bit-identical to before the step.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .dataset import Sample
from .errors import ConfigError, ContractError, NumericError
from .losses import cs_objective, vae_objective
from .metrics import MetricsReport, compute_metrics
from .model import (
    ModelConfig,
    ParameterSet,
    caption_branch,
    image_branch,
    init_parameters,
)
from .optim import IMAGE_STEP, TEXT_STEP, Adam, cosine_lr, schedule_select
from .text import Vocabulary

EPS_SALT = 11
SHUFFLE_SALT = 7
SAMPLE_SALT = 17


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for fit(); everything has a sensible default."""

    p: float = 0.01
    batch_size: int = 16
    epochs: int = 30
    lr_start: float = 3e-3
    lr_end: float = 1e-3
    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 0.85
    sigma_floor: float = 1e-6
    latent_dim: int = 16
    text_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p={self.p} outside [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.lr_end <= 0 or self.lr_start < self.lr_end:
            raise ConfigError("need lr_start >= lr_end > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma={self.gamma} outside [0, 1]")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be positive")
        if self.latent_dim < 1 or self.text_dim < 1:
            raise ConfigError("latent_dim and text_dim must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**d)


@dataclass
class StepStats:
    branch: str
    total: float
    si: float
    kl: float


@dataclass
class FitResult:
    params: ParameterSet
    opt: Adam
    vocab: Vocabulary
    steps: int
    history: list[dict]
    log_lines: list[str]
    best: Checkpoint
    best_abs_rel: float
    best_epoch: int
    text_steps: int = 0
    image_steps: int = 0
    skipped: int = 0
    nonzero_caption_rows: int = 0


def _stack_batch(samples: list[Sample]):
    images = np.stack([s.image for s in samples])
    tokens = [s.tokens for s in samples]
    targets = np.stack([s.depth for s in samples])
    masks = np.stack([s.mask for s in samples])
    return images, tokens, targets, masks


def _require_finite_grads(group: dict) -> None:
    for name, t in group.items():
        if t.grad is not None and not np.isfinite(t.grad).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'")


def train_step_text(params: ParameterSet, opt: Adam, features: np.ndarray,
                    targets: np.ndarray, masks: np.ndarray, cfg: TrainConfig,
                    lr: float, eps: np.ndarray) -> StepStats:
    """One caption step: update the caption head and the decoder."""
    depth, dist = caption_branch(features, eps, params)
    total, si, kl = vae_objective(depth, targets, masks, dist,
                                  cfg.gamma, cfg.alpha)
    params.zero_grads()
    total.backward()
    group = {**params.group("text"), **params.group("decoder")}
    _require_finite_grads(group)
    opt.step(group, lr)
    return StepStats(branch=TEXT_STEP, total=float(total.data),
                     si=float(si.data), kl=float(kl.data))


def train_step_image(params: ParameterSet, opt: Adam, images: np.ndarray,
                     features: np.ndarray, targets: np.ndarray,
                     masks: np.ndarray, cfg: TrainConfig,
                     lr: float) -> StepStats:
    """One image step: update the image sampler and the decoder."""
    depth, eps_grid, _ = image_branch(images, features, params)
    total, si, kl = cs_objective(depth, targets, masks, eps_grid,
                                 cfg.gamma, cfg.beta, cfg.sigma_floor)
    params.zero_grads()
    total.backward()
    group = {**params.group("sampler"), **params.group("decoder")}
    _require_finite_grads(group)
    opt.step(group, lr)
    return StepStats(branch=IMAGE_STEP, total=float(total.data),
                     si=float(si.data), kl=float(kl.data))


def _model_config(cfg: TrainConfig, sample: Sample) -> ModelConfig:
    c, h, w = sample.image.shape
    return ModelConfig(image_channels=c, image_height=h, image_width=w,
                       text_dim=cfg.text_dim, latent_dim=cfg.latent_dim)


def fit(cfg: TrainConfig, train_samples: list[Sample], vocab: Vocabulary,
        val_samples: list[Sample], log_fn=None, params: ParameterSet = None,
        opt: Adam = None) -> FitResult:
    """Train from scratch (or from a provided state) and track the best epoch.

    One epoch is a seeded shuffle of the training set cut into full
    batches (the remainder is dropped). After every epoch the model is
    scored on the validation split through the image branch and a JSON
    log line is emitted; the parameter/optimizer state with the lowest
    validation absolute relative error is captured as a checkpoint.
    """
    if not train_samples or not val_samples:
        raise ContractError("need non-empty training and validation splits")
    if params is None:
        params = init_parameters(_model_config(cfg, train_samples[0]),
                                 len(vocab), cfg.seed)
    else:
        want = _model_config(cfg, train_samples[0])
        if params.config != want:
            raise ContractError(
                f"provided parameters were built for {params.config}, "
                f"but this run needs {want}"
            )
    if opt is None:
        opt = Adam()

    steps_per_epoch = len(train_samples) // cfg.batch_size
    if steps_per_epoch < 1:
        raise ConfigError("training split smaller than one batch")
    total_steps = cfg.epochs * steps_per_epoch

    result = FitResult(params=params, opt=opt, vocab=vocab, steps=0,
                       history=[], log_lines=[], best=None,
                       best_abs_rel=float("inf"), best_epoch=-1)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, SHUFFLE_SALT, epoch])
        ).permutation(len(train_samples))
        totals, sis, kls = [], [], []
        epoch_text = epoch_image = epoch_skipped = 0
        lr = cfg.lr_end
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [train_samples[i] for i in idx]
            images, tokens, targets, masks = _stack_batch(batch)
            features = params.embedder.embed_batch(tokens)
            result.nonzero_caption_rows += int(
                (np.abs(features).sum(axis=1) > 0).sum())
            branch = schedule_select(step, cfg.p)
            lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end)
            try:
                if branch == TEXT_STEP:
                    eps = np.random.default_rng(
                        np.random.SeedSequence([cfg.seed, EPS_SALT, step])
                    ).standard_normal((len(batch), cfg.latent_dim))
                    stats = train_step_text(params, opt, features, targets,
                                            masks, cfg, lr,
                                            eps.astype(np.float32))
                    epoch_text += 1
                else:
                    stats = train_step_image(params, opt, images, features,
                                             targets, masks, cfg, lr)
                    epoch_image += 1
                totals.append(stats.total)
                sis.append(stats.si)
                kls.append(stats.kl)
            except NumericError:
                # Forward, backward and the gradient check all run before
                # the optimizer, so a skipped step leaves every parameter
                # and moment buffer bit-identical.
                epoch_skipped += 1
                if branch == TEXT_STEP:
                    epoch_text += 1
                else:
                    epoch_image += 1
            step += 1
        result.text_steps += epoch_text
        result.image_steps += epoch_image
        result.skipped += epoch_skipped

        try:
            report = evaluate(params, val_samples, cfg.batch_size)
        except NumericError:
            # A model whose forward pass is non-finite cannot be scored;
            # log the epoch without metrics and keep the previous best.
            report = None
        record = {
            "epoch": epoch,
            "steps": step,
            "lr": lr,
            "train_loss": float(np.mean(totals)) if totals else None,
            "train_si": float(np.mean(sis)) if sis else None,
            "train_kl": float(np.mean(kls)) if kls else None,
            "text_steps": epoch_text,
            "image_steps": epoch_image,
            "skipped": epoch_skipped,
            "val": report.to_dict() if report is not None else None,
        }
        result.history.append(record)
        line = format_log_line(record)
        result.log_lines.append(line)
        if log_fn is not None:
            log_fn(line)
        if report is not None and report.abs_rel < result.best_abs_rel:
            result.best_abs_rel = report.abs_rel
            result.best_epoch = epoch
            result.best = Checkpoint.capture(params, opt, step,
                                             cfg.to_dict(), vocab)
    result.steps = step
    return result


def format_log_line(record: dict) -> str:
    """Canonical one-line JSON encoding; identical runs give identical bytes."""
    return json.dumps(record, sort_keys=True)


def infer_image(images: np.ndarray, token_lists, params: ParameterSet) -> np.ndarray:
    """Depth for a batch of images (with their captions), as (b, h, w) float32."""
    features = params.embedder.embed_batch(token_lists)
    depth, _, _ = image_branch(images, features, params)
    return depth.data.copy()


def infer_text(token_ids, params: ParameterSet, n_samples: int, seed: int):
    """Decode n latent draws for one caption, with zeroed decoder skips.

    Returns (depths, mu, sigma): depths is (n_samples, h, w) float32 and
    mu/sigma are the caption head's distribution over the latent code.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    features = params.embedder.embed_batch([list(token_ids)] * n_samples)
    eps = np.random.default_rng(
        np.random.SeedSequence([seed, SAMPLE_SALT])
    ).standard_normal((n_samples, params.config.latent_dim)).astype(np.float32)
    depth, dist = caption_branch(features, eps, params)
    return depth.data.copy(), dist.mu.data[0].copy(), dist.sigma.data[0].copy()


def evaluate(params: ParameterSet, samples: list[Sample],
             batch_size: int = 16) -> MetricsReport:
    """Pooled metrics over a split, predicting through the image branch."""
    if not samples:
        raise ContractError("cannot evaluate an empty split")
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images, tokens, _, _ = _stack_batch(chunk)
        preds.append(infer_image(images, tokens, params))
    pred = np.concatenate(preds)
    target = np.stack([s.depth for s in samples])
    mask = np.stack([s.mask for s in samples])
    return compute_metrics(pred, target, mask)


def run_ratio_sweep(cfg: TrainConfig, p_values, train_samples: list[Sample],
                    vocab: Vocabulary, val_samples: list[Sample],
                    eval_samples: list[Sample] = None, log_fn=None,
                    reuse: dict = None) -> dict:
    """Train once per caption-step ratio and score each fit on one split.

    Scores land on eval_samples when given, else on the validation split.
    reuse maps a ratio to an existing FitResult so an already-trained
    model is scored instead of retrained. Returns ratio -> {"fit", "metrics"}.
    """
    scored_on = eval_samples if eval_samples is not None else val_samples
    out = {}
    for p in p_values:
        run_cfg = dataclasses.replace(cfg, p=p)
        if reuse is not None and p in reuse:
            fit_result = reuse[p]
        else:
            fit_result = fit(run_cfg, train_samples, vocab, val_samples,
                             log_fn=log_fn)
        best_params, _, _ = fit_result.best.restore()
        out[p] = {"fit": fit_result,
                  "metrics": evaluate(best_params, scored_on, cfg.batch_size)}
    return out


def strip_captions(samples: list[Sample]) -> list[Sample]:
    """Copies of the samples with empty captions (features become zeros)."""
    return [Sample(image=s.image, tokens=[], depth=s.depth, mask=s.mask)
            for s in samples]


def run_caption_ablation(cfg: TrainConfig, train_samples: list[Sample],
                         vocab: Vocabulary, val_samples: list[Sample],
                         eval_samples: list[Sample] = None, log_fn=None):
    """Train a twin that never sees captions and score it like the real run.

    Every split is stripped before use, so the caption pathway carries
    zeros end to end; the returned fit's nonzero_caption_rows counter is
    the proof (it stays 0). Returns (fit_result, metrics_report).
    """
    train_bare = strip_captions(train_samples)
    val_bare = strip_captions(val_samples)
    fit_result = fit(cfg, train_bare, vocab, val_bare, log_fn=log_fn)
    scored_on = strip_captions(eval_samples) if eval_samples is not None else val_bare
    best_params, _, _ = fit_result.best.restore()
    return fit_result, evaluate(best_params, scored_on, cfg.batch_size)
