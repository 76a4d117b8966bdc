"""Training loops, label generation, and checkpointing.

Randomness is fully keyed by (seed, purpose, step), so a run is bit-for-bit
reproducible and can resume from a checkpoint without stored generator
state.  The learning rate is the configured base for the first half of the
iteration budget and one tenth of it afterwards.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import dataio, mimo, networks, seeding


def lr_at(step, total_iterations, base_lr):
    """Step is 0-based; the drop happens after floor(total/2) iterations."""
    return base_lr if step < total_iterations // 2 else base_lr / 10.0


def build_model(cfg, seed):
    if cfg.task == "precode":
        return networks.PrecodingNetwork(
            networks.PrecodingNetConfig(
                depth=cfg.depth,
                hidden=cfg.hidden,
                pattern=cfg.pattern,
                heads=cfg.heads,
                hermitian_aux=cfg.hermitian_aux,
            ),
            seed=seed,
        )
    return networks.SchedulingNetwork(
        networks.SchedulingNetConfig(
            k=cfg.k,
            depth=cfg.depth,
            hidden=cfg.hidden,
            pattern=cfg.pattern,
            heads=cfg.heads,
        ),
        seed=seed,
    )


def save_checkpoint(path, model, cfg):
    arrays = model.store.state_arrays()
    texts = {
        "config": cfg.to_text(),
        "seed": str(cfg.seed),
        "task": cfg.task,
        "trained_steps": str(model.store.step),
    }
    dataio.write_bundle(path, arrays, texts)


def load_checkpoint(path):
    """Rebuild the model recorded in a checkpoint; returns (model, cfg, steps)."""
    arrays, texts = dataio.read_bundle(path)
    cfg = dataio.config_from_text(texts["config"])
    model = build_model(cfg, cfg.seed)
    model.store.load_state_arrays(arrays)
    return model, cfg, int(texts.get("trained_steps", "0"))


def _batch_noise(cfg, step, size):
    snr = seeding.stream(cfg.seed, "snr", step).choice(np.asarray(cfg.snrs, dtype=np.float64), size)
    return cfg.power / 10.0 ** (snr / 10.0)


def train(cfg, h_train, labels=None, model=None, stop_step=None, log=None):
    """Advance training to ``stop_step`` (default: the configured total).

    Picks up from the model's optimizer step counter, so an interrupted run
    resumed from a checkpoint replays the exact remaining schedule.  For the
    scheduling task ``labels`` must hold one binary indicator row per
    training sample, generated at the configured label SNR.
    """
    if model is None:
        model = build_model(cfg, cfg.seed)
    start_step = model.store.step
    stop_step = cfg.iterations if stop_step is None else min(stop_step, cfg.iterations)
    if cfg.task == "schedule":
        if labels is None:
            raise ValueError("scheduling training needs labels")
        if len(labels) != len(h_train):
            raise ValueError("label count does not match sample count")
        noise = cfg.power / 10.0 ** (cfg.label_snr / 10.0)
    n = len(h_train)
    if n < cfg.batch_size:
        raise ValueError(f"dataset of {n} samples is smaller than one batch")
    losses = []
    for step in range(start_step, stop_step):
        lr = lr_at(step, cfg.iterations, cfg.base_lr)
        idx = seeding.stream(cfg.seed, "batch", step).choice(n, cfg.batch_size, replace=False)
        if cfg.task == "precode":
            loss = model.loss(h_train[idx], _batch_noise(cfg, step, cfg.batch_size), cfg.power)
        else:
            loss = model.loss(h_train[idx], noise, labels[idx])
        ad.backward(loss)
        ad.adam_step(model.store, lr)
        val = float(ad.value_of(loss))
        losses.append(val)
        if log is not None:
            log(step, lr, val)
    return model, losses


def label_precoder_callback(name, noise, power, checkpoint=None):
    """Per-subset precoder used inside greedy selection and label generation."""
    name = name.lower()
    if name == "mmse":
        return mimo.mmse_callback(noise, power)
    if name == "zf":
        return mimo.zf_callback(noise, power)
    if name == "wmmse":
        return mimo.wmmse_callback(noise, power)
    if name == "tecfp":
        if checkpoint is None:
            raise ValueError("tecfp labels need a trained checkpoint")
        model, _, _ = load_checkpoint(checkpoint)

        def run(h):
            return np.asarray(ad.value_of(model.precode(h, noise, power)))

        return run
    raise ValueError(f"unknown precoder {name!r}")


def generate_labels(h_cand, cfg, checkpoint=None):
    """Greedy scheduling indicators for every sample, at the label SNR."""
    noise = cfg.power / 10.0 ** (cfg.label_snr / 10.0)
    precoder = label_precoder_callback(cfg.label_precoder, noise, cfg.power, checkpoint)
    return np.stack(
        [
            mimo.greedy_schedule(h_cand[i], noise, cfg.power, cfg.k, precoder)
            for i in range(len(h_cand))
        ]
    )
