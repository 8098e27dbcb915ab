"""Two-stage training.

Stage 1 fits the background encoder on the background set alone with
instance discrimination + feature decorrelation. Stage 2 freezes it and fits
the target encoder on the target set, weighting every negative pair by the
similarity of the two samples' background features.
"""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import MemoryBank, TrainConfig, load_arrays, save_arrays
from .data.augment import augment_batch
from .data.datasets import ImageDataset
from .encoder import Encoder, build_encoder, embed
from .losses import bg_total_loss, tg_total_loss, weight_coefficients

log = logging.getLogger(__name__)


class StageOrderError(RuntimeError):
    """Stage 2 was requested before stage 1 finished."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


def _seeds(root: int) -> dict:
    names = ("f_init", "g_init", "z_bank", "v_bank", "w_bank", "stage1", "stage2")
    states = np.random.SeedSequence(root).generate_state(len(names))
    return {n: int(s) for n, s in zip(names, states)}


@dataclass
class TrainState:
    f: Encoder
    g: Encoder
    z_bank: MemoryBank
    v_bank: MemoryBank
    w_bank: MemoryBank
    stage: int = 1
    epoch_f: int = 0
    epoch_g: int = 0
    history: list = field(default_factory=list)
    f_checksum: str | None = None


def init_state(config: TrainConfig, arch: str, n_target: int, n_background: int) -> TrainState:
    s = _seeds(config.seed)
    d, beta = config.d, config.bank_momentum
    return TrainState(
        f=build_encoder(arch, d, s["f_init"]),
        g=build_encoder(arch, d, s["g_init"]),
        z_bank=MemoryBank.random(n_background, d, beta, s["z_bank"]),
        v_bank=MemoryBank.random(n_target, d, beta, s["v_bank"]),
        w_bank=MemoryBank.random(n_target, d, beta, s["w_bank"]),
    )


class NDJSONLogger:
    """Appends one JSON object per line; ``None`` path disables writing.

    ``keep`` filters records already in the file: lines it rejects are dropped
    on open, so a rerun replaces its own records instead of duplicating them.
    """

    def __init__(self, path=None, keep=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            old = self.path.read_text().splitlines() if self.path.exists() else []
            kept = [line for line in old if keep and keep(json.loads(line))]
            self.path.write_text("".join(line + "\n" for line in kept))

    def __call__(self, record: dict):
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _optimizer(params, config, steps):
    opt = torch.optim.SGD(params, lr=config.lr, momentum=config.sgd_momentum,
                          weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))
    return opt, sched


def _check_finite(loss, parts, stage, epoch, batch, ids):
    loss = loss.detach()
    parts = {k: p.detach() for k, p in parts.items()}
    if not math.isfinite(loss.item()):
        snapshot = {"stage": stage, "epoch": epoch, "batch": batch,
                    "parts": {k: v.item() for k, v in parts.items()},
                    "ids": ids.tolist()}
        raise NonFiniteLossError(f"non-finite loss in stage {stage}, epoch {epoch}, batch {batch}",
                                 snapshot)


def train_background(state: TrainState, dataset: ImageDataset, config: TrainConfig,
                     logger=None, on_epoch=None) -> TrainState:
    """Fit the background encoder for ``config.epochs_f`` epochs, then freeze it."""
    if state.stage != 1:
        raise StageOrderError("background stage already completed")
    if len(dataset) != len(state.z_bank):
        raise ValueError(f"background bank has {len(state.z_bank)} rows, dataset {len(dataset)}")
    config.validate_for(len(dataset))
    logger = logger or NDJSONLogger()
    rng = np.random.default_rng(_seeds(config.seed)["stage1"])
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    opt, sched = _optimizer(state.f.parameters(), config, config.epochs_f * steps_per_epoch)
    temps = config.temps

    state.f.train()
    for epoch in range(config.epochs_f):
        total = 0.0
        for b, idx in enumerate(_batches(len(dataset), config.batch_size, rng)):
            x = torch.from_numpy(augment_batch(dataset.images[idx], config.augment_policy, rng))
            ids = torch.from_numpy(idx)
            z = state.f(x)
            loss, parts = bg_total_loss(z, state.z_bank, temps, ids, reduction="mean")
            _check_finite(loss, parts, 1, epoch, b, ids)
            lr = opt.param_groups[0]["lr"]
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            state.z_bank.update(ids, z.detach())
            total += loss.item() * len(idx)
            logger({"stage": 1, "epoch": epoch, "batch": b, "loss": loss.item(),
                    **{k: v.item() for k, v in parts.items()},
                    "lr": lr, "time": time.time()})
        state.epoch_f += 1
        state.history.append({"stage": 1, "epoch": epoch, "mean_loss": total / len(dataset)})
        log.info("stage 1 epoch %d loss %.5f", epoch, total / len(dataset))
        if on_epoch:
            on_epoch(state)

    state.f.freeze()
    state.f_checksum = state.f.checksum()
    state.stage = 2
    return state


def train_target(state: TrainState, dataset: ImageDataset, config: TrainConfig,
                 logger=None, on_epoch=None) -> TrainState:
    """Fit the target encoder for ``config.epochs_g`` epochs with the background encoder frozen.

    With ``config.idfd_baseline`` every weight is 1 and the background
    encoder is never consulted, which is plain instance discrimination with
    feature decorrelation on the target set.
    """
    baseline = config.idfd_baseline
    if state.stage != 2 and not baseline:
        raise StageOrderError("target stage requires a completed background stage")
    if len(dataset) != len(state.v_bank):
        raise ValueError(f"target bank has {len(state.v_bank)} rows, dataset {len(dataset)}")
    config.validate_for(len(dataset))
    logger = logger or NDJSONLogger()
    rng = np.random.default_rng(_seeds(config.seed)["stage2"])
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    opt, sched = _optimizer(state.g.parameters(), config, config.epochs_g * steps_per_epoch)
    temps = config.temps
    f = state.f
    if not baseline:
        f.freeze()
        state.f_checksum = state.f_checksum or f.checksum()
        if config.cache_bg_features:
            cached_w = extract_features(f, dataset)
            state.w_bank.rows[:] = cached_w

    state.g.train()
    for epoch in range(config.epochs_g):
        total = 0.0
        for b, idx in enumerate(_batches(len(dataset), config.batch_size, rng)):
            x = torch.from_numpy(augment_batch(dataset.images[idx], config.augment_policy, rng))
            ids = torch.from_numpy(idx)
            v = state.g(x)
            if baseline:
                w = None
                alpha = torch.ones(len(idx), len(state.v_bank))
            else:
                w = cached_w[ids] if config.cache_bg_features else embed(f, x)
                alpha = weight_coefficients(w, state.w_bank, temps.tau_xb)
            loss, parts = tg_total_loss(v, state.v_bank, alpha, temps, ids, reduction="mean")
            _check_finite(loss, parts, 2, epoch, b, ids)
            lr = opt.param_groups[0]["lr"]
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            state.v_bank.update(ids, v.detach())
            if w is not None and not config.cache_bg_features:
                state.w_bank.update(ids, w)
            total += loss.item() * len(idx)
            logger({"stage": 2, "epoch": epoch, "batch": b, "loss": loss.item(),
                    **{k: p.item() for k, p in parts.items()},
                    "lr": lr, "time": time.time()})
        if not baseline and f.checksum() != state.f_checksum:
            raise RuntimeError("background encoder weights changed during the target stage")
        state.epoch_g += 1
        state.history.append({"stage": 2, "epoch": epoch, "mean_loss": total / len(dataset)})
        log.info("stage 2 epoch %d loss %.5f", epoch, total / len(dataset))
        if on_epoch:
            on_epoch(state)
    return state


def extract_features(encoder: Encoder, dataset: ImageDataset, batch_size: int = 512) -> torch.Tensor:
    """Un-augmented features for the whole dataset, in dataset order, inference mode."""
    was_training = encoder.training
    encoder.eval()
    try:
        return embed(encoder, dataset.images, batch_size)
    finally:
        encoder.train(was_training)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(state: TrainState, path, config: TrainConfig, extra: dict | None = None):
    arrays = {}
    for prefix, enc in (("f", state.f), ("g", state.g)):
        for name, t in enc.state_dict().items():
            arrays[f"{prefix}.{name}"] = t
    for name in ("z_bank", "v_bank", "w_bank"):
        arrays[name] = getattr(state, name).rows
    meta = {"arch": state.f.arch, "d": state.f.d, "seed": config.seed, "stage": state.stage,
            "epoch_f": state.epoch_f, "epoch_g": state.epoch_g, "f_checksum": state.f_checksum,
            "momentum": config.bank_momentum, "config": _config_dict(config),
            "history": state.history, **(extra or {})}
    return save_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[TrainState, dict]:
    path = Path(path)
    if not path.with_suffix(".json").exists():
        raise FileNotFoundError(f"checkpoint not found: {path.with_suffix('.json')}")
    arrays, meta = load_arrays(path)
    encoders = {}
    for prefix in ("f", "g"):
        enc = build_encoder(meta["arch"], meta["d"])
        sd = enc.state_dict()
        for name, t in sd.items():
            sd[name] = torch.from_numpy(arrays[f"{prefix}.{name}"].copy()).to(t.dtype).reshape(t.shape)
        enc.load_state_dict(sd)
        encoders[prefix] = enc
    banks = {n: MemoryBank.restore(torch.from_numpy(arrays[n].copy()), meta["momentum"])
             for n in ("z_bank", "v_bank", "w_bank")}
    state = TrainState(encoders["f"], encoders["g"], **banks, stage=meta["stage"],
                       epoch_f=meta["epoch_f"], epoch_g=meta["epoch_g"],
                       history=meta.get("history", []), f_checksum=None)
    if state.stage == 2:
        state.f.freeze()
        state.f_checksum = state.f.checksum()
    return state, meta


def _config_dict(config: TrainConfig) -> dict:
    return asdict(config)
