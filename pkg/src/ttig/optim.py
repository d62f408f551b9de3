"""Adafactor-style optimizer: factored second moments, int8 first moment,
global grad clipping, decoupled weight decay, warmup + exponential decay.

Memory shape: an m x n matrix keeps two mean accumulators of sizes m and n
(never m*n); only vectors and scalars keep a full second moment. The first
moment is materialized in float for the update, then requantized to int8 with
a per-tensor absmax scale, so its storage error is bounded by scale/127.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-2
    warmup: int = 500
    decay_start: int = 4000
    total_steps: int = 20000
    final_ratio: float = 0.025
    beta1: float = 0.9
    beta2: float = 0.96
    weight_decay: float = 0.0
    clip_norm: float = 4.0
    eps: float = 1e-30


# hyperparameters of the full-scale training run, kept as a named preset
FULL_SCALE_PRESET = OptimizerConfig(
    base_lr=4.5e-5, warmup=5000, decay_start=85000, total_steps=450000,
    final_ratio=0.025, weight_decay=4.5e-2,
)


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Piecewise schedule: linear 0 -> base over warmup, constant until
    decay_start, then exponential decay hitting base*final_ratio at
    total_steps (held there after)."""
    if step < cfg.warmup:
        return cfg.base_lr * step / cfg.warmup
    if step <= cfg.decay_start or cfg.total_steps <= cfg.decay_start:
        return cfg.base_lr
    frac = (step - cfg.decay_start) / (cfg.total_steps - cfg.decay_start)
    return cfg.base_lr * cfg.final_ratio ** min(frac, 1.0)


@dataclass
class OptimizerState:
    step: int = 0
    second: dict = field(default_factory=dict)       # name -> (R, C) or full v
    first_q: dict = field(default_factory=dict)      # name -> int8 array
    first_scale: dict = field(default_factory=dict)  # name -> float


def _factored_vhat(name, g2, state, beta2):
    mat = g2.reshape(-1, g2.shape[-1]) if g2.ndim > 2 else g2
    row = mat.mean(axis=1)
    col = mat.mean(axis=0)
    if name in state.second:
        r, c = state.second[name]
        r = beta2 * r + (1 - beta2) * row
        c = beta2 * c + (1 - beta2) * col
    else:
        r = (1 - beta2) * row
        c = (1 - beta2) * col
    state.second[name] = (r, c)
    denom = r.mean()
    if denom <= 0:
        return np.zeros_like(g2)
    vhat = np.outer(r, c) / denom
    return vhat.reshape(g2.shape)


def _full_vhat(name, g2, state, beta2):
    v = state.second.get(name)
    v = (1 - beta2) * g2 if v is None else beta2 * v + (1 - beta2) * g2
    state.second[name] = v
    return v


def adafactor_step(params, grads: dict, state: OptimizerState, cfg: OptimizerConfig):
    """One optimizer step over params (a ParamSet). grads maps a subset of
    parameter names to arrays; absent names are untouched. Updates in place
    and returns (params, state)."""
    sq_sum = 0.0
    for name, g in grads.items():
        flat = g.reshape(-1)
        sq_sum += float(np.dot(flat, flat))
    if not np.isfinite(sq_sum):
        bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
        raise NumericError(f"non-finite gradient for {bad or 'unknown parameters'}")
    gnorm = np.sqrt(sq_sum)
    clip = 1.0 if gnorm <= cfg.clip_norm or gnorm == 0.0 else cfg.clip_norm / gnorm
    lr = lr_at(state.step, cfg)

    for name, t in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float32) * np.float32(clip)
        g2 = g * g + np.float32(cfg.eps)
        if g.ndim >= 2:
            vhat = _factored_vhat(name, g2, state, cfg.beta2)
        else:
            vhat = _full_vhat(name, g2, state, cfg.beta2)
        u = g / np.sqrt(vhat + np.float32(cfg.eps))
        q = state.first_q.get(name)
        if q is None:
            m = (1 - cfg.beta1) * u
        else:
            m = q.astype(np.float32) * np.float32(cfg.beta1 * state.first_scale[name] / 127.0)
            m += np.float32(1 - cfg.beta1) * u
        step_arr = np.float32(lr) * m
        if cfg.weight_decay:
            step_arr += np.float32(lr * cfg.weight_decay) * t.data
        t.data -= step_arr
        scale = float(np.max(np.abs(m))) if m.size else 0.0
        if scale > 0:
            state.first_q[name] = np.round(m * np.float32(127.0 / scale)).astype(np.int8)
        else:
            state.first_q[name] = np.zeros(m.shape, dtype=np.int8)
        state.first_scale[name] = scale
    state.step += 1
    return params, state
