"""Dense optical flow (Farneback polynomial expansion) and flow-feature reduction.

Flow arrays are channel-first: ``flow[0]`` is the horizontal (column)
displacement, ``flow[1]`` the vertical (row) displacement, in pixels per
frame, following the convention ``prev[y, x] ~ next[y + v, x + u]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataset import NATIVE_SHAPE
from .errors import ShapeMismatch

FEATURE_SHAPE = (2, 102, 137)
KEEP_FRACTION = 0.001


@dataclass(frozen=True)
class FarnebackParams:
    pyr_scale: float = 0.5
    levels: int = 3          # including the full-resolution level
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 5          # polynomial neighbourhood half-size
    poly_sigma: float = 1.1


DEFAULT_PARAMS = FarnebackParams()


def to_gray(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f[..., :3] @ np.array([0.299, 0.587, 0.114])
    return f


# -- polynomial expansion ---------------------------------------------------


def _expansion_basis(n: int, sigma: float):
    x = np.arange(-n, n + 1, dtype=np.float64)
    a = np.exp(-x * x / (2 * sigma * sigma))
    a /= a.sum()
    # basis order: 1, x, y, x^2, y^2, xy
    xx, yy = np.meshgrid(x, x)  # xx varies along columns
    basis = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy]).reshape(6, -1)
    w = np.outer(a, a).ravel()
    gram = (basis * w) @ basis.T
    return x, a, np.linalg.inv(gram)


def poly_expand(img: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Per-pixel weighted least-squares fit ``f ~ x'Ax + b'x + c``.

    Returns ``(5, H, W)``: ``b_x, b_y, A_xx, A_yy, A_xy``.
    """
    x, a, ginv = _expansion_basis(n, sigma)
    corr = ndimage.correlate1d
    r0 = corr(img, a, axis=1, mode="reflect")
    r1 = corr(img, a * x, axis=1, mode="reflect")
    r2 = corr(img, a * x * x, axis=1, mode="reflect")
    proj = np.stack([
        corr(r0, a, axis=0, mode="reflect"),
        corr(r1, a, axis=0, mode="reflect"),
        corr(r0, a * x, axis=0, mode="reflect"),
        corr(r2, a, axis=0, mode="reflect"),
        corr(r0, a * x * x, axis=0, mode="reflect"),
        corr(r1, a * x, axis=0, mode="reflect"),
    ])
    coef = np.tensordot(ginv, proj, axes=1)
    return np.stack([coef[1], coef[2], coef[3], coef[4], 0.5 * coef[5]])


def _update_flow(r1: np.ndarray, r2: np.ndarray, flow: np.ndarray, winsize: int) -> np.ndarray:
    h, w = r1.shape[1:]
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([rows + flow[1], cols + flow[0]])
    r2w = np.stack([ndimage.map_coordinates(c, coords, order=1, mode="nearest") for c in r2])

    axx = 0.5 * (r1[2] + r2w[2])
    ayy = 0.5 * (r1[3] + r2w[3])
    axy = 0.5 * (r1[4] + r2w[4])
    dbx = -0.5 * (r2w[0] - r1[0]) + axx * flow[0] + axy * flow[1]
    dby = -0.5 * (r2w[1] - r1[1]) + axy * flow[0] + ayy * flow[1]

    g = np.stack([
        axx * axx + axy * axy,
        axx * axy + axy * ayy,
        axy * axy + ayy * ayy,
        axx * dbx + axy * dby,
        axy * dbx + ayy * dby,
    ])
    g = ndimage.uniform_filter(g, size=(1, winsize, winsize), mode="reflect")
    det = g[0] * g[2] - g[1] * g[1] + 1e-3
    return np.stack([
        (g[2] * g[3] - g[1] * g[4]) / det,
        (g[0] * g[4] - g[1] * g[3]) / det,
    ])


def _resize(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    zoom = (shape[0] / img.shape[0], shape[1] / img.shape[1])
    return ndimage.zoom(img, zoom, order=1, mode="nearest", grid_mode=True)


def _farneback_numpy(prev: np.ndarray, nxt: np.ndarray, p: FarnebackParams) -> np.ndarray:
    flow = None
    for level in range(p.levels - 1, -1, -1):
        scale = p.pyr_scale ** level
        shape = (round(prev.shape[0] * scale), round(prev.shape[1] * scale))
        if level:
            sigma = (1 / scale - 1) * 0.5
            i1 = _resize(ndimage.gaussian_filter(prev, sigma), shape)
            i2 = _resize(ndimage.gaussian_filter(nxt, sigma), shape)
        else:
            i1, i2 = prev, nxt
        if flow is None:
            flow = np.zeros((2, *shape))
        else:
            flow = np.stack([_resize(c, shape) for c in flow]) / p.pyr_scale
        r1 = poly_expand(i1, p.poly_n, p.poly_sigma)
        r2 = poly_expand(i2, p.poly_n, p.poly_sigma)
        for _ in range(p.iterations):
            flow = _update_flow(r1, r2, flow, p.winsize)
    return flow


def _farneback_opencv(prev: np.ndarray, nxt: np.ndarray, p: FarnebackParams) -> np.ndarray:
    import cv2

    flow = cv2.calcOpticalFlowFarneback(
        prev.astype(np.float32), nxt.astype(np.float32), None,
        p.pyr_scale, p.levels, p.winsize, p.iterations, p.poly_n, p.poly_sigma, 0,
    )
    return np.moveaxis(flow, -1, 0).astype(np.float64)


def farneback_flow(prev, nxt, params: FarnebackParams = DEFAULT_PARAMS, backend: str = "numpy") -> np.ndarray:
    """Dense flow ``(2, H, W)`` from ``prev`` to ``nxt``.

    ``backend="numpy"`` is the in-package implementation; ``"opencv"`` runs
    OpenCV's implementation of the same method with the same parameters and
    is much faster for bulk extraction.
    """
    a, b = to_gray(prev), to_gray(nxt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    if backend == "numpy":
        return _farneback_numpy(a, b, params)
    if backend == "opencv":
        return _farneback_opencv(a, b, params)
    raise ValueError(f"unknown flow backend {backend!r}")


# -- reduction to the flow feature ------------------------------------------


def magnitude_threshold(flow: np.ndarray, keep_fraction: float = KEEP_FRACTION) -> float:
    """Magnitude of the ``ceil(keep_fraction * H * W)``-th strongest vector."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    mag = np.hypot(flow[0], flow[1]).ravel()
    k = max(1, math.ceil(keep_fraction * mag.size - 1e-9))
    return float(np.partition(mag, mag.size - k)[mag.size - k])


def percentile_filter(flow: np.ndarray, keep_fraction: float = KEEP_FRACTION,
                      threshold: float | None = None) -> np.ndarray:
    """Zero every vector weaker than the top ``keep_fraction`` by magnitude.

    Vectors tied with the threshold are kept, so at least
    ``ceil(keep_fraction * H * W)`` pixels survive.
    """
    flow = np.asarray(flow)
    if threshold is None:
        threshold = magnitude_threshold(flow, keep_fraction)
    keep = np.hypot(flow[0], flow[1]) >= threshold
    return np.where(keep, flow, 0.0)


def patch_pool(flow: np.ndarray) -> np.ndarray:
    """Average disjoint 3x3 patches of a native ``(2, 308, 410)`` field -> ``(2, 102, 137)``.

    One row is cropped from the top and bottom (306 rows) and the last
    column is replicated once (411 columns).
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (2, *NATIVE_SHAPE):
        raise ShapeMismatch(f"expected (2, {NATIVE_SHAPE[0]}, {NATIVE_SHAPE[1]}), got {flow.shape}")
    f = flow[:, 1:-1, :]
    f = np.concatenate([f, f[:, :, -1:]], axis=2)
    c, h, w = f.shape
    return f.reshape(c, h // 3, 3, w // 3, 3).mean(axis=(2, 4))


def flow_feature(prev, nxt, keep_fraction: float = KEEP_FRACTION, backend: str = "opencv",
                 params: FarnebackParams = DEFAULT_PARAMS) -> np.ndarray:
    return patch_pool(percentile_filter(farneback_flow(prev, nxt, params, backend), keep_fraction))


def trial_flow_features(frames, keep_fraction: float = KEEP_FRACTION, backend: str = "opencv",
                        params: FarnebackParams = DEFAULT_PARAMS) -> np.ndarray:
    """``(T, 2, 102, 137)`` float32 features; step 0 has no predecessor and is zero."""
    out = np.zeros((len(frames), *FEATURE_SHAPE), dtype=np.float32)
    for t in range(1, len(frames)):
        out[t] = flow_feature(frames[t - 1], frames[t], keep_fraction, backend, params)
    return out
