"""Minimal conv-net kernels with manual backprop, shared by both models.

Everything operates on float64 (channels, h, w) arrays. Parameters live in a
flat dict mapping "<layer>.w" / "<layer>.b" to ndarrays so they can be
serialized, perturbed for finite-difference checks, and updated in place by
plain gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class LayerSpec:
    name: str
    in_c: int
    out_c: int
    k: int
    stride: int
    pad: int
    act: str  # "relu" | "softplus" | "none"


def init_params(layers: list[LayerSpec], rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform [-a, a] weights with a = sqrt(6/(fan_in+fan_out)); zero biases."""
    params: dict[str, np.ndarray] = {}
    for spec in layers:
        fan_in = spec.in_c * spec.k * spec.k
        fan_out = spec.out_c * spec.k * spec.k
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{spec.name}.w"] = rng.uniform(-a, a, size=(spec.out_c, spec.in_c, spec.k, spec.k))
        params[f"{spec.name}.b"] = np.zeros(spec.out_c)
    return params


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    _, ho, wo = windows.shape[:3]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k)
    return cols, ho, wo


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    oc = w.shape[0]
    cols, ho, wo = _im2col(x, w.shape[2], stride, pad)
    out = cols @ w.reshape(oc, -1).T + b
    cache = (cols, x.shape, w, stride, pad)
    return out.T.reshape(oc, ho, wo), cache


def conv2d_backward(dy: np.ndarray, cache):
    cols, x_shape, w, stride, pad = cache
    oc, ho, wo = dy.shape
    k = w.shape[2]
    dy_mat = dy.reshape(oc, ho * wo)
    dw = (dy_mat @ cols).reshape(w.shape)
    db = dy.sum(axis=(1, 2))
    dcols = (dy_mat.T @ w.reshape(oc, -1)).reshape(ho, wo, x_shape[0], k, k)
    dcols = dcols.transpose(2, 3, 4, 0, 1)
    c, h, wd = x_shape
    dxp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += dcols[:, ki, kj]
    dx = dxp[:, pad : pad + h, pad : pad + wd]
    return dx, dw, db


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def stack_forward(params: dict[str, np.ndarray], layers: list[LayerSpec], x: np.ndarray):
    """Run the conv stack; returns the output and per-layer caches for backprop."""
    caches = []
    for spec in layers:
        z, conv_cache = conv2d_forward(
            x, params[f"{spec.name}.w"], params[f"{spec.name}.b"], spec.stride, spec.pad
        )
        if spec.act == "relu":
            x = np.maximum(z, 0.0)
        elif spec.act == "softplus":
            x = softplus(z)
        else:
            x = z
        caches.append((spec, conv_cache, z))
    return x, caches


def stack_backward(caches, dy: np.ndarray):
    """Backprop through a stack_forward run; returns (dx, grads dict)."""
    grads: dict[str, np.ndarray] = {}
    for spec, conv_cache, z in reversed(caches):
        if spec.act == "relu":
            dy = dy * (z > 0.0)
        elif spec.act == "softplus":
            dy = dy * sigmoid(z)
        dy, dw, db = conv2d_backward(dy, conv_cache)
        grads[f"{spec.name}.w"] = dw
        grads[f"{spec.name}.b"] = db
    return dy, grads


def accumulate_grads(total: dict[str, np.ndarray], part: dict[str, np.ndarray]) -> None:
    for key, val in part.items():
        if key in total:
            total[key] = total[key] + val
        else:
            total[key] = val


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def bilinear_resize(vol: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Resize a (c, h, w) volume with bilinear sampling at pixel centers."""
    c, h, w = vol.shape
    src_y = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0)[None, :, None]
    wx = (src_x - x0)[None, None, :]
    row0 = vol[:, y0, :] * (1.0 - wy) + vol[:, y1, :] * wy
    return row0[:, :, x0] * (1.0 - wx) + row0[:, :, x1] * wx
