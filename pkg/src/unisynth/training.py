"""Adversarial training loop, learning-rate schedule and checkpoints."""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import losses
from .conditioning import curriculum_missing_count, sample_condition, zero_impute
from .config import ExperimentConfig
from .data import iterate_batches
from .model import build_models

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"UNISYNTH-CKPT\n"
CHECKPOINT_VERSION = 1
LOG_KEYS = ("epoch", "iter", "ac", "l_syn", "l_rec", "l_adv", "l_gen", "l_dis", "lr")


class DivergenceError(RuntimeError):
    def __init__(self, term, value):
        super().__init__(f"non-finite loss {term} = {value}")
        self.term = term
        self.value = value


class CheckpointError(RuntimeError):
    pass


class UnsupportedCheckpointError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


def lr_at_epoch(epoch, cfg: ExperimentConfig) -> float:
    """Constant LR until ``decay_start``, then linear decay to zero at ``epochs``."""
    t = cfg.train
    if not 0 <= epoch <= t.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {t.epochs}]")
    if epoch < t.decay_start:
        return t.lr
    return t.lr * (t.epochs - epoch) / (t.epochs - t.decay_start)


def make_optimizer(params, cfg: ExperimentConfig):
    t = cfg.train
    if t.optimizer == "adam":
        return torch.optim.Adam(params, lr=t.lr, betas=tuple(t.betas))
    return torch.optim.SGD(params, lr=t.lr, momentum=t.momentum)


@dataclass
class TrainState:
    config: ExperimentConfig
    generator: torch.nn.Module
    discriminators: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    epoch: int = 0       # completed epochs
    iteration: int = 0   # completed iterations

    def set_lr(self, lr):
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr


def init_state(cfg: ExperimentConfig) -> TrainState:
    cfg.validate()
    torch.manual_seed(cfg.seed)
    gen, dis = build_models(cfg.model)
    return TrainState(cfg, gen, dis, make_optimizer(gen.parameters(), cfg),
                      make_optimizer(dis.parameters(), cfg), np.random.default_rng(cfg.seed))


def _finite(name, value):
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise DivergenceError(name, v)
    return v


def training_step(targets, state: TrainState, ac=None):
    """One discriminator update followed by one generator update.

    The availability condition is drawn from the curriculum for the current
    epoch unless ``ac`` is given.  Returns ``(state, LossRecord, ac)``.
    """
    cfg = state.config
    t = cfg.train
    m = cfg.model.n_modalities
    if targets.dim() != 4 or targets.shape[1] != m:
        raise ValueError(f"expected B x {m} x H x W targets, got {tuple(targets.shape)}")
    if ac is None:
        rule = curriculum_missing_count(state.epoch, t.schedule, m)
        ac = sample_condition(state.rng, rule, m, t.uniform_over)
    ac.check_training()
    gen, dis = state.generator, state.discriminators
    gen.train()
    dis.train()

    fake = gen(zero_impute(targets, ac), ac)
    missing = ac.missing

    # discriminator update on detached synthetic images
    with torch.set_grad_enabled(t.update_discriminator):
        d_fake = {i: dis.discriminate(fake[:, i:i + 1].detach(), i) for i in missing}
        d_real = {i: dis.discriminate(targets[:, i:i + 1], i) for i in missing}
        l_dis = losses.discriminator_loss(d_fake, d_real, ac, t.reduction)
    l_dis_v = _finite("l_dis", l_dis)
    if t.update_discriminator:
        state.opt_d.zero_grad(set_to_none=True)
        l_dis.backward()
        state.opt_d.step()

    # generator update; discriminator weights frozen for this pass
    dis.requires_grad_(False)
    try:
        g_fake = {i: dis.discriminate(fake[:, i:i + 1], i) for i in missing}
        with torch.no_grad():
            g_real = {i: dis.discriminate(targets[:, i:i + 1], i) for i in missing}
        l_adv = losses.generator_adversarial_loss(g_fake, g_real, ac, t.reduction)
    finally:
        dis.requires_grad_(True)
    l_syn = losses.synthesis_loss(fake, targets, ac, t.reduction)
    l_rec = losses.reconstruction_loss(fake, targets, ac, t.reduction)
    l_gen = losses.total_generator_loss(l_syn, l_rec, l_adv, t.weights)
    record = losses.LossRecord(_finite("l_syn", l_syn), _finite("l_rec", l_rec), _finite("l_adv", l_adv),
                               _finite("l_gen", l_gen), l_dis_v)
    state.opt_g.zero_grad(set_to_none=True)
    l_gen.backward()
    state.opt_g.step()
    state.iteration += 1
    return state, record, ac


def _payload(state: TrainState) -> dict:
    return {
        "epoch": state.epoch,
        "iteration": state.iteration,
        "config": state.config.to_dict(),
        "generator": state.generator.state_dict(),
        "discriminators": state.discriminators.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng": state.rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
    }


def save_checkpoint(state: TrainState, path) -> Path:
    """Write a versioned, checksummed checkpoint container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(_payload(state), buf)
    payload = buf.getvalue()
    header = {
        "version": CHECKPOINT_VERSION,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
        "config_hash": state.config.hash(),
        "epoch": state.epoch,
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(CHECKPOINT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload)
    tmp.replace(path)
    return path


def read_checkpoint_header(path) -> tuple[dict, bytes]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC):]
    line, sep, payload = rest.partition(b"\n")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedCheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    if len(payload) != header.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")
    return header, payload


def load_checkpoint(path) -> TrainState:
    header, payload = read_checkpoint_header(path)
    data = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=False)
    cfg = ExperimentConfig.from_dict(data["config"]).validate()
    gen, dis = build_models(cfg.model)
    gen.load_state_dict(data["generator"])
    dis.load_state_dict(data["discriminators"])
    opt_g = make_optimizer(gen.parameters(), cfg)
    opt_d = make_optimizer(dis.parameters(), cfg)
    opt_g.load_state_dict(data["opt_g"])
    opt_d.load_state_dict(data["opt_d"])
    rng = np.random.default_rng()
    rng.bit_generator.state = data["rng"]
    torch.set_rng_state(data["torch_rng"])
    return TrainState(cfg, gen, dis, opt_g, opt_d, rng, data["epoch"], data["iteration"])


def checkpoint_name(epoch):
    return f"epoch_{epoch:04d}.ckpt"


def train(cfg: ExperimentConfig, train_slices, resume=None, run_dir=None, progress=None):
    """Train on an N x M x H x W slice array; returns (final checkpoint, log path).

    One JSON line per iteration is appended to ``<run_dir>/train_log.jsonl``;
    checkpoints land in ``<run_dir>/checkpoints``.
    """
    run_dir = Path(run_dir or cfg.run_dir)
    ckpt_dir = run_dir / "checkpoints"
    log_path = run_dir / "train_log.jsonl"
    if len(train_slices) == 0:
        raise ValueError("training split is empty")
    if resume is not None:
        state = load_checkpoint(resume)
        # a resumed run keeps its weights but may extend the epoch budget
        state.config.train.epochs = cfg.train.epochs
        state.config.validate()
        mode = "a"
    else:
        state = init_state(cfg)
        mode = "w"
    t = state.config.train
    data = torch.as_tensor(np.asarray(train_slices, dtype=np.float32))
    run_dir.mkdir(parents=True, exist_ok=True)
    last = None
    with open(log_path, mode, encoding="utf-8") as log_fh:
        for epoch in range(state.epoch, t.epochs):
            lr = lr_at_epoch(epoch, state.config)
            state.set_lr(lr)
            order_rng = state.rng if t.shuffle else None
            for batch in iterate_batches(data.numpy(), t.batch_size, order_rng):
                try:
                    state, rec, ac = training_step(batch, state)
                except DivergenceError:
                    log.error("diverged at epoch %d iteration %d; last checkpoint %s", epoch, state.iteration, last)
                    raise
                row = {"epoch": epoch, "iter": state.iteration, "ac": str(ac), **rec.as_dict(), "lr": lr}
                log_fh.write(json.dumps(row) + "\n")
                if progress:
                    progress(row)
            state.epoch = epoch + 1
            if state.epoch % t.checkpoint_every == 0 or state.epoch == t.epochs:
                last = save_checkpoint(state, ckpt_dir / checkpoint_name(state.epoch))
    if last is None:
        last = save_checkpoint(state, ckpt_dir / checkpoint_name(state.epoch))
    return last, log_path


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
