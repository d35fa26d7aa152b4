"""Dense float32 tensor kernels used by every other module.

All functions are pure: ndarray in, new ndarray out, float32 storage with
float64 accumulation in reductions. Spatial maps are (h, w, C) row-major.
"""

from __future__ import annotations

import numpy as np


def _as_f32(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite values in input tensor")
    return a


def conv2d(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    dilation: int = 1,
    groups: int = 1,
    stride: int = 1,
) -> np.ndarray:
    """2-D convolution with 'same' zero padding (stride 1 preserves h, w).

    x: (h, w, C_in); weights: (kh, kw, C_in // groups, C_out); bias: (C_out,).
    Depthwise convolution is groups == C_in with C_out == C_in.
    """
    x = _as_f32(x)
    weights = _as_f32(weights)
    bias = _as_f32(bias)
    if x.ndim != 3 or weights.ndim != 4:
        raise ValueError("conv2d expects (h,w,C) input and (kh,kw,Cg,Cout) weights")
    h, w, c_in = x.shape
    kh, kw, c_g, c_out = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extent must be odd, got {kh}x{kw}")
    if dilation < 1 or groups < 1 or stride < 1:
        raise ValueError("dilation, groups and stride must be positive")
    if c_in % groups != 0 or c_out % groups != 0:
        raise ValueError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_g != c_in // groups:
        raise ValueError(f"weight channel dim {c_g} != C_in/groups = {c_in // groups}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    ph = (kh - 1) // 2 * dilation
    pw = (kw - 1) // 2 * dilation
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0))).astype(np.float64)
    oh = (h + 2 * ph - ((kh - 1) * dilation + 1)) // stride + 1
    ow = (w + 2 * pw - ((kw - 1) * dilation + 1)) // stride + 1
    wt = weights.astype(np.float64)

    out = np.zeros((oh, ow, c_out), dtype=np.float64)
    cg_in = c_in // groups
    cg_out = c_out // groups
    for g in range(groups):
        xin = xp[:, :, g * cg_in : (g + 1) * cg_in]
        wg = wt[:, :, :, g * cg_out : (g + 1) * cg_out]
        acc = np.zeros((oh, ow, cg_out), dtype=np.float64)
        for iy in range(kh):
            y0 = iy * dilation
            for ix in range(kw):
                x0 = ix * dilation
                patch = xin[
                    y0 : y0 + stride * (oh - 1) + 1 : stride,
                    x0 : x0 + stride * (ow - 1) + 1 : stride,
                ]
                acc += patch @ wg[iy, ix]
        out[:, :, g * cg_out : (g + 1) * cg_out] = acc
    out += bias.astype(np.float64)
    return out.astype(np.float32)


def _axis_coords(src: int, dst: int) -> np.ndarray:
    # align-corners: target i maps to i * (src-1)/(dst-1); extent-1 axes pin to 0
    if dst < 1:
        raise ValueError("target extent must be positive")
    if dst == 1 or src == 1:
        return np.zeros(dst, dtype=np.float64)
    return np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)


def resample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample an (h, w, C) grid to (out_h, out_w, C), align-corners bilinear."""
    grid = _as_f32(grid)
    if grid.ndim != 3:
        raise ValueError("resample expects an (h, w, C) grid")
    h, w, _ = grid.shape
    ys = _axis_coords(h, out_h)
    xs = _axis_coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    g = grid.astype(np.float64)
    top = g[y0][:, x0] * (1 - fx) + g[y0][:, x1] * fx
    bot = g[y1][:, x0] * (1 - fx) + g[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    # weights for the 4 taps at offsets -1..2, a = -0.5
    a = -0.5
    w = np.empty(t.shape + (4,), dtype=np.float64)
    for j, off in enumerate((-1.0, 0.0, 1.0, 2.0)):
        d = np.abs(t - off)
        w[..., j] = np.where(
            d <= 1.0,
            (a + 2) * d**3 - (a + 3) * d**2 + 1,
            np.where(d < 2.0, a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a, 0.0),
        )
    return w


def resample_bicubic(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Catmull-Rom bicubic resampling, align-corners, edge-clamped taps."""
    grid = _as_f32(grid)
    if grid.ndim != 3:
        raise ValueError("resample expects an (h, w, C) grid")
    h, w, c = grid.shape
    ys = _axis_coords(h, out_h)
    xs = _axis_coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = _catmull_rom(ys - y0)
    wx = _catmull_rom(xs - x0)
    g = grid.astype(np.float64)
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for jy in range(4):
        iy = np.clip(y0 + jy - 1, 0, h - 1)
        row = np.zeros((out_h, w, c), dtype=np.float64)
        row += g[iy]
        acc = np.zeros((out_h, out_w, c), dtype=np.float64)
        for jx in range(4):
            ix = np.clip(x0 + jx - 1, 0, w - 1)
            acc += row[:, ix] * wx[None, :, jx, None]
        out += acc * wy[:, None, jy, None]
    return out.astype(np.float32)


def gap(y: np.ndarray) -> np.ndarray:
    """Global average pool an (h, w, C) map to a (C,) vector."""
    y = _as_f32(y)
    if y.ndim != 3:
        raise ValueError("gap expects an (h, w, C) map")
    return y.astype(np.float64).mean(axis=(0, 1)).astype(np.float32)


def fc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x @ W + bias for a (a,) vector, (a, b) weights, (b,) bias."""
    x = _as_f32(x)
    weights = _as_f32(weights)
    bias = _as_f32(bias)
    if x.ndim != 1 or weights.ndim != 2 or x.shape[0] != weights.shape[0]:
        raise ValueError(f"fc shape mismatch: x {x.shape}, W {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"fc bias shape {bias.shape} != ({weights.shape[1]},)")
    return (x.astype(np.float64) @ weights.astype(np.float64) + bias).astype(np.float32)


def batchnorm_inference(x, mean, var, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x, mean, var, gamma, beta = map(_as_f32, (x, mean, var, gamma, beta))
    if np.any(var < 0):
        raise ValueError("variance must be nonnegative")
    denom = np.sqrt(var.astype(np.float64) + eps)
    if np.any(denom == 0):
        raise ValueError("var + eps is zero for some channel")
    out = gamma * (x.astype(np.float64) - mean) / denom + beta
    return out.astype(np.float32)


def layernorm(x, gamma, beta, eps: float = 1e-6) -> np.ndarray:
    x, gamma, beta = map(_as_f32, (x, gamma, beta))
    x64 = x.astype(np.float64)
    mu = x64.mean()
    var = x64.var()
    return (gamma * (x64 - mu) / np.sqrt(var + eps) + beta).astype(np.float32)


def softmax(x: np.ndarray) -> np.ndarray:
    x = _as_f32(x)
    e = np.exp(x.astype(np.float64) - x.max())
    return (e / e.sum()).astype(np.float32)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = _as_f32(x)
    n = np.linalg.norm(x.astype(np.float64))
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return (x.astype(np.float64) / n).astype(np.float32)
