"""Shared oracles and helpers for the test suite."""

import mpmath as mp
import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def mp_divided_diff(nodes, dps: int = 60) -> complex:
    """High-precision Lagrange divided difference of exp(-i s).

    Independent reference; nodes must be pairwise distinct.
    """
    with mp.workdps(dps):
        vals = [mp.mpf(float(x)) for x in nodes]
        total = mp.mpc(0)
        for t, nt in enumerate(vals):
            prod = mp.mpf(1)
            for l, nl in enumerate(vals):
                if l != t:
                    prod *= nt - nl
            total += mp.e ** (-1j * nt) / prod
        return complex(total)


def mp_confluent_diff(nodes, dps: int = 60) -> complex:
    """High-precision divided difference of exp(-i s) allowing repeated nodes.

    Newton table over sorted nodes; entries with coincident endpoints use
    the derivative value, everything else the recurrence (exact at 60
    digits even for gaps far below double precision).
    """
    with mp.workdps(dps):
        z = sorted(mp.mpf(float(x)) for x in nodes)
        n = len(z)
        table = {(i, i): mp.e ** (-1j * z[i]) for i in range(n)}
        for width in range(1, n):
            for i in range(n - width):
                k = i + width
                if z[k] == z[i]:
                    table[(i, k)] = ((-1j) ** width * mp.e ** (-1j * z[i])
                                     / mp.factorial(width))
                else:
                    table[(i, k)] = ((table[(i + 1, k)] - table[(i, k - 1)])
                                     / (z[k] - z[i]))
        return complex(table[(0, n - 1)])


def point_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Crossing-number test, vectorized over query points."""
    x = points[:, 0][:, None]
    y = points[:, 1][:, None]
    x0 = polygon[None, :, 0]
    y0 = polygon[None, :, 1]
    x1 = np.roll(polygon[:, 0], -1)[None, :]
    y1 = np.roll(polygon[:, 1], -1)[None, :]
    straddles = (y0 <= y) != (y1 <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hits = straddles & (x < x_cross)
    return hits.sum(axis=1) % 2 == 1


def supersampled_indicator(polygon: np.ndarray, resolution: int,
                           samples_per_axis: int = 16) -> np.ndarray:
    """Box-averaged point-in-polygon oracle at the raster's corner samples."""
    r = resolution
    offsets = (np.arange(samples_per_axis) + 0.5) / samples_per_axis - 0.5
    out = np.zeros((r, r))
    cells = np.stack(np.meshgrid(np.arange(r), np.arange(r), indexing="ij"),
                     axis=-1).reshape(-1, 2)
    for dx in offsets:
        for dy in offsets:
            pts = (cells + [dx, dy]) / r
            out += point_in_polygon(pts, polygon).reshape(r, r)
    return out / samples_per_axis ** 2


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
