"""Dense descriptor matching with bicubic subpixel refinement.

A query descriptor is compared against every pixel of a target descriptor
map; the integer argmax of that response map is refined by sampling a
bicubic interpolant of the response on a ``1/refine_factor`` grid over the
surrounding 5x5 pixel window.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ChannelMismatch, OutOfBounds

WINDOW_RADIUS = 2  # 5x5 pixels around the integer argmax


@dataclass(frozen=True, eq=False)
class DescriptorMap:
    data: np.ndarray  # (H, W, C), unit-norm per pixel

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ValueError("descriptor data must be (H, W, C)")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def normalized(cls, data) -> DescriptorMap:
        d = np.asarray(data, dtype=np.float64)
        return cls(d / np.linalg.norm(d, axis=-1, keepdims=True))

    def sample(self, u: float, v: float) -> np.ndarray:
        """Bilinear descriptor at a continuous pixel, renormalized."""
        u0 = min(int(np.floor(u)), self.width - 1)
        v0 = min(int(np.floor(v)), self.height - 1)
        u1, v1 = min(u0 + 1, self.width - 1), min(v0 + 1, self.height - 1)
        a, b = u - u0, v - v0
        d = self.data
        q = (1 - a) * (1 - b) * d[v0, u0] + a * (1 - b) * d[v0, u1] + (1 - a) * b * d[v1, u0] + a * b * d[v1, u1]
        return q / np.linalg.norm(q)


class DescriptorExtractor(Protocol):
    """Anything that turns an (H, W, 3) image into a descriptor map."""

    def extract(self, image: np.ndarray) -> DescriptorMap: ...


class AnalyticDescriptor:
    """Smooth trigonometric descriptor field, translated by ``shift``.

    Channels come in (cos, sin) pairs of plane waves, so the dot product of
    two descriptors is the mean of ``cos(k_j . (p - q))``: exactly 1 at
    ``p == q`` and smooth elsewhere.  Pixel ``p`` of the rendered map holds
    the field value at ``p - shift``.
    """

    def __init__(self, channels: int = 32, seed: int = 0, shift=(0.0, 0.0), max_freq: float = 0.6):
        if channels < 2 or channels % 2:
            raise ValueError("channels must be an even number >= 2")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDE5C]))
        n = channels // 2
        angle = rng.uniform(0, 2 * np.pi, n)
        mag = rng.uniform(0.15, max_freq, n)
        self.wave = np.stack([mag * np.cos(angle), mag * np.sin(angle)], axis=1)
        self.phase = rng.uniform(0, 2 * np.pi, n)
        self.shift = np.asarray(shift, dtype=np.float64)
        self.channels = channels

    def evaluate(self, points) -> np.ndarray:
        """Field value at (..., 2) continuous ``(u, v)`` positions, untranslated."""
        p = np.asarray(points, dtype=np.float64)
        arg = p @ self.wave.T + self.phase
        out = np.concatenate([np.cos(arg), np.sin(arg)], axis=-1)
        return out / np.sqrt(self.channels // 2)

    def render(self, width: int, height: int) -> DescriptorMap:
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        pts = np.stack([u, v], axis=-1) - self.shift
        return DescriptorMap(self.evaluate(pts))

    def extract(self, image: np.ndarray) -> DescriptorMap:
        return self.render(image.shape[1], image.shape[0])


def compute_response(query, target: DescriptorMap) -> np.ndarray:
    """Dot product of ``query`` with every pixel descriptor, shape (H, W)."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != target.channels:
        raise ChannelMismatch(f"query has {q.shape[0]} channels, map has {target.channels}")
    return target.data @ q


def _keys(x):
    """Keys cubic convolution kernel, a = -0.5."""
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1.0,
        1.5 * x3 - 2.5 * x2 + 1.0,
        np.where(x < 2.0, -0.5 * x3 + 2.5 * x2 - 4.0 * x + 2.0, 0.0),
    )


def bicubic_sample(img, u, v) -> np.ndarray:
    """Bicubic (Keys) interpolation of a 2-D array at continuous (u, v).

    Interpolating: values at integer positions are reproduced exactly.
    Indices are clamped at the image border.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    out = np.zeros(np.broadcast(u, v).shape)
    for m in range(-1, 3):
        wv = _keys(v - (v0 + m))
        vi = np.clip(v0 + m, 0, h - 1)
        for n in range(-1, 3):
            wu = _keys(u - (u0 + n))
            ui = np.clip(u0 + n, 0, w - 1)
            out += wv * wu * img[vi, ui]
    return out


def integer_argmax(response: np.ndarray):
    """(u, v) of the maximum; ties go to the lowest v, then the lowest u."""
    flat = int(np.argmax(response))
    v, u = divmod(flat, response.shape[1])
    return u, v


def refine_peak(response: np.ndarray, u0: int, v0: int, refine_factor: int = 4):
    """Best bicubic sample on the refine grid over the 5x5 window at (u0, v0)."""
    h, w = response.shape
    steps = np.arange(-WINDOW_RADIUS * refine_factor, WINDOW_RADIUS * refine_factor + 1) / refine_factor
    us = u0 + steps
    vs = v0 + steps
    us = us[(us >= 0) & (us <= w - 1)]
    vs = vs[(vs >= 0) & (vs <= h - 1)]
    V, U = np.meshgrid(vs, us, indexing="ij")
    vals = bicubic_sample(response, U, V)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    return np.array([U[i, j], V[i, j]]), float(vals[i, j])


def match_subpixel(query_pixel, source: DescriptorMap, target: DescriptorMap, refine_factor: int = 4):
    """Locate ``query_pixel`` of ``source`` in ``target``; returns (pixel, score)."""
    if refine_factor < 1 or int(refine_factor) != refine_factor:
        raise ValueError("refine_factor must be a positive integer")
    if source.channels != target.channels:
        raise ChannelMismatch(f"{source.channels} vs {target.channels} channels")
    u, v = (float(x) for x in query_pixel)
    if not (0 <= u <= source.width - 1 and 0 <= v <= source.height - 1):
        raise OutOfBounds(f"query ({u}, {v}) outside {source.width}x{source.height} map")
    response = compute_response(source.sample(u, v), target)
    u0, v0 = integer_argmax(response)
    return refine_peak(response, u0, v0, int(refine_factor))


def match_many(queries, source: DescriptorMap, target: DescriptorMap, refine_factor: int = 4) -> np.ndarray:
    """Rows of ``u v u' v' score`` for each query pixel."""
    rows = []
    for q in np.asarray(queries, dtype=np.float64).reshape(-1, 2):
        p, s = match_subpixel(q, source, target, refine_factor)
        rows.append([q[0], q[1], p[0], p[1], s])
    return np.array(rows).reshape(-1, 5)
