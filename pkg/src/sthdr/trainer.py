"""Optimization loop: Adam with cosine-annealed learning rate, a main phase
followed by a larger-patch fine-tune phase, checkpointing and resume."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data_io import collate, load_split, sample_batch
from .errors import ConfigError, DataError, NumericAbort
from .inference import evaluate_scenes
from .manifest import write_manifest
from .model import ModelConfig, build
from .objective import average_reports, multiscale_l1

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sthdr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr_init: float = 1e-4
    lr_min: float = 1e-6
    max_steps: int = 80000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patch: int = 256
    finetune_batch: int = 8
    finetune_patch: int = 384
    finetune_steps: int = 2000
    seed: int = 0
    eval_every: int = 5000
    checkpoint_every: int = 5000
    grad_clip: float = 1.0  # 0 disables clipping
    augment: bool = True

    def __post_init__(self):
        if not self.lr_min < self.lr_init:
            raise ConfigError(f"lr_min ({self.lr_min}) must be below lr_init ({self.lr_init})")
        for name in ("batch_size", "max_steps", "patch", "finetune_batch",
                     "finetune_patch", "eval_every", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.finetune_steps < 0 or self.grad_clip < 0:
            raise ConfigError("finetune_steps and grad_clip must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        for name in ("patch", "finetune_patch"):
            if getattr(self, name) % 4:
                raise ConfigError(f"{name} must be divisible by 4")

    @classmethod
    def tiny(cls, **overrides):
        """CPU smoke-test profile: 64 px patches, short schedule, larger lr."""
        kw = dict(batch_size=2, lr_init=1e-3, lr_min=1e-5, max_steps=200, patch=64,
                  finetune_batch=2, finetune_patch=64, finetune_steps=20,
                  eval_every=100, checkpoint_every=100)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def total_steps(self):
        return self.max_steps + self.finetune_steps


def lr_schedule(step, cfg):
    """Cosine annealing from ``lr_init`` at step 0 to ``lr_min`` at ``max_steps``."""
    if step < 0:
        raise ValueError(f"step must be nonnegative, got {step}")
    if step >= cfg.max_steps:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1 + math.cos(math.pi * step / cfg.max_steps))


def phase_for_step(step, cfg):
    """``(name, batch size, patch size, lr)`` used at optimizer step ``step``."""
    if step < cfg.max_steps:
        return "main", cfg.batch_size, cfg.patch, lr_schedule(step, cfg)
    return "finetune", cfg.finetune_batch, cfg.finetune_patch, cfg.lr_min


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    best_metric: float = -math.inf
    best_step: int = -1


def init_state(model_cfg, cfg):
    model = build(model_cfg, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_init,
                           betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    return TrainState(model, opt, np.random.default_rng(cfg.seed))


def train_step(state, batch, cfg, lr=None):
    """One Adam update on ``batch`` (a list of :class:`SamplePatch`).

    Returns the :class:`LossReport`; ``state`` is updated in place.
    """
    model = state.model
    mcfg = model.config
    if lr is None:
        lr = phase_for_step(state.step, cfg)[3]
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    x1, x2, x3, gt = collate(batch) if isinstance(batch, list) else batch
    if gt is None:
        raise DataError("training batch has no ground truth")
    model.train()
    out = model(x1, x2, x3)
    report = multiscale_l1(out.preds, gt, mcfg.lambdas, mcfg.mu, out.stage1)
    for s, v in enumerate(report.per_scale):
        if not math.isfinite(v):
            raise NumericAbort(f"non-finite loss at step {state.step}, scale {s + 1} "
                               f"(resolution 1/{2 ** s}): {v}")
    if not math.isfinite(report.value):
        raise NumericAbort(f"non-finite total loss at step {state.step}")
    state.optimizer.zero_grad(set_to_none=True)
    report.total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    return report


def save_checkpoint(path, state, cfg):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": state.model.config.to_dict(),
        "train_config": cfg.to_dict(),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "best_metric": state.best_metric,
        "best_step": state.best_step,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Restore ``(state, train_config)`` from a checkpoint file."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not an STHDR checkpoint")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload['version']}")
    mcfg = ModelConfig.from_dict(payload["model_config"])
    cfg = TrainConfig.from_dict(payload["train_config"])
    state = init_state(mcfg, cfg)
    try:
        state.model.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint parameters do not match variant {mcfg.variant}: {exc}") from None
    state.optimizer.load_state_dict(payload["optimizer"])
    state.rng.bit_generator.state = payload["rng"]
    state.step = payload["step"]
    state.best_metric = payload["best_metric"]
    state.best_step = payload["best_step"]
    return state, cfg


HISTORY_FIELDS = ("step", "phase", "lr", "loss", "per_scale",
                  "eval_psnr_mu", "eval_psnr_l", "eval_ssim_mu", "eval_ssim_l")


class History:
    """Append-only CSV of training losses and periodic evaluations."""

    def __init__(self, path):
        self.path = Path(path)
        self.rows = []
        if not self.path.exists():
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(HISTORY_FIELDS)

    def append(self, **row):
        record = {k: row.get(k, "") for k in HISTORY_FIELDS}
        self.rows.append(record)
        with self.path.open("a", newline="") as fh:
            csv.DictWriter(fh, HISTORY_FIELDS).writerow(record)


@dataclass
class RunResult:
    checkpoint: Path
    best_checkpoint: Optional[Path]
    history_path: Path
    history: list = field(default_factory=list)


def run(cfg, model_cfg, data_root, out_dir, resume=None, log_every=10, command="train"):
    """Main phase then fine-tune phase, with periodic evaluation on ``Test``.

    The best PSNR-mu checkpoint is kept as ``best.pt``; ``last.pt`` is the
    most recent state.  Resuming continues the same schedule from the
    stored step.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_scenes = load_split(data_root, "Training", require_gt=True)
    try:
        test_scenes = load_split(data_root, "Test", require_gt=True)
    except DataError:
        log.warning("no Test split under %s; periodic evaluation disabled", data_root)
        test_scenes = []
    smallest = min(min(s.shape) for s in train_scenes)
    biggest_patch = max(cfg.patch, cfg.finetune_patch if cfg.finetune_steps else 0)
    if biggest_patch > smallest:
        raise DataError(f"patch size {biggest_patch} exceeds smallest training image ({smallest} px)")
    if cfg.patch % model_cfg.required_multiple or (
            cfg.finetune_steps and cfg.finetune_patch % model_cfg.required_multiple):
        raise ConfigError(f"patch sizes must be multiples of {model_cfg.required_multiple}")

    if resume is not None:
        state, saved_cfg = load_checkpoint(resume)
        if state.model.config != model_cfg:
            raise ConfigError(f"checkpoint variant/config {state.model.config} differs from requested {model_cfg}")
    else:
        state = init_state(model_cfg, cfg)

    write_manifest(out / "manifest.json", command, {
        "model": model_cfg.to_dict(), "train": cfg.to_dict(),
        "data_root": str(data_root), "resume": str(resume) if resume else None,
    }, seed=cfg.seed)

    history = History(out / "history.csv")
    last = out / "last.pt"
    best = None
    while state.step < cfg.total_steps:
        phase, bs, patch, lr = phase_for_step(state.step, cfg)
        batch = sample_batch(train_scenes, state.rng, bs, patch, model_cfg.gamma, cfg.augment)
        report = train_step(state, batch, cfg, lr)
        done = state.step
        if done % log_every == 0 or done == cfg.total_steps:
            history.append(step=done, phase=phase, lr=f"{lr:.6e}", loss=f"{report.value:.6f}",
                           per_scale=";".join(f"{v:.6f}" for v in report.per_scale))
            log.info("step %d/%d [%s] lr=%.3e loss=%.5f", done, cfg.total_steps, phase, lr, report.value)
        if test_scenes and (done % cfg.eval_every == 0 or done == cfg.total_steps):
            avg = average_reports([r for r, _ in evaluate_scenes(state.model, test_scenes)])
            history.append(step=done, phase="eval", eval_psnr_mu=f"{avg.psnr_mu:.4f}",
                           eval_psnr_l=f"{avg.psnr_l:.4f}", eval_ssim_mu=f"{avg.ssim_mu:.6f}",
                           eval_ssim_l=f"{avg.ssim_l:.6f}")
            log.info("eval @%d: PSNR-mu %.3f dB, PSNR-L %.3f dB", done, avg.psnr_mu, avg.psnr_l)
            if avg.psnr_mu > state.best_metric:
                state.best_metric, state.best_step = avg.psnr_mu, done
                best = save_checkpoint(out / "best.pt", state, cfg)
        if done % cfg.checkpoint_every == 0:
            save_checkpoint(last, state, cfg)
    save_checkpoint(last, state, cfg)
    if best is None and (out / "best.pt").exists():
        best = out / "best.pt"
    return RunResult(last, best, history.path, history.rows)
