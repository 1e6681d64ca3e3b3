"""Desk-scale parallel-beam tomography: phantom, projection matrix, sinogram.

Geometry: an ``N x N`` grid of unit pixels centred at the origin, pixel
``(r, c)`` covering ``x in [-N/2 + c, -N/2 + c + 1]`` and
``y in [N/2 - r - 1, N/2 - r]`` (row 0 at the top, row-major flattening).
View ``k`` has angle ``k pi / views``; its rays are the lines
``{s n + t d}`` with ``n = (cos a, sin a)``, ``d = (-sin a, cos a)`` and
offsets ``s`` equally spaced over the diameter of the circumscribed circle.
Matrix entries are exact intersection lengths of rays with pixel squares.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .linear import LinearBlockProblem, ResidualMinimizing

__all__ = [
    "SHEPP_LOGAN_MODIFIED",
    "PhantomSpec",
    "Projection",
    "rasterize_phantom",
    "ray_pixel_lengths",
    "build_projection_matrix",
    "block_by_view",
]

# (intensity, semi-axis a, semi-axis b, centre x, centre y, angle in degrees)
# in coordinates normalized so the grid spans [-1, 1]^2.
SHEPP_LOGAN_MODIFIED = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class PhantomSpec:
    grid: int = 63
    ellipses: tuple = SHEPP_LOGAN_MODIFIED
    views: int = 16
    rays_per_view: int = 99

    def __post_init__(self):
        if self.grid < 8:
            raise ValueError("grid must be at least 8")
        if self.views < 1 or self.rays_per_view < 1:
            raise ValueError("views and rays_per_view must be positive")

    def angles(self):
        return np.arange(self.views) * (math.pi / self.views)

    def offsets(self):
        half = self.grid * math.sqrt(2.0) / 2.0
        if self.rays_per_view == 1:
            return np.zeros(1)
        return np.linspace(-half, half, self.rays_per_view)


def rasterize_phantom(spec):
    """Sum of ellipse intensities at each pixel centre, clamped to [0, 1]."""
    N = spec.grid
    centres = (np.arange(N) + 0.5) * (2.0 / N) - 1.0
    u = np.tile(centres, N)             # x of pixel (r, c) -> column c
    v = np.repeat(centres[::-1], N)     # y of pixel (r, c) -> row r, top first
    img = np.zeros(N * N)
    for inten, a, b, x0, y0, deg in spec.ellipses:
        phi = math.radians(deg)
        du, dv = u - x0, v - y0
        p = du * math.cos(phi) + dv * math.sin(phi)
        q = -du * math.sin(phi) + dv * math.cos(phi)
        img[(p / a) ** 2 + (q / b) ** 2 <= 1.0] += inten
    # overlapping intensities cancel only up to rounding
    if img.min() < -1e-12 or img.max() > 1.0 + 1e-12:
        warnings.warn("phantom values outside [0, 1] were clamped")
    return np.clip(img, 0.0, 1.0)


def ray_pixel_lengths(N, angle, s):
    """Pixels crossed by one ray and the length inside each.

    Returns ``(pixel_indices, lengths)``; empty arrays when the ray misses
    the grid or only touches its boundary.
    """
    half = N / 2.0
    nx, ny = math.cos(angle), math.sin(angle)
    dx, dy = -ny, nx
    ox, oy = s * nx, s * ny
    tlo, thi = -math.inf, math.inf
    for o, d in ((ox, dx), (oy, dy)):
        if d == 0.0:
            if not -half < o < half:
                return np.empty(0, int), np.empty(0)
            continue
        t1, t2 = (-half - o) / d, (half - o) / d
        tlo, thi = max(tlo, min(t1, t2)), min(thi, max(t1, t2))
    if not thi > tlo:
        return np.empty(0, int), np.empty(0)
    planes = np.arange(N + 1) - half
    ts = [np.array([tlo, thi])]
    for o, d in ((ox, dx), (oy, dy)):
        if d != 0.0:
            t = (planes - o) / d
            ts.append(t[(t > tlo) & (t < thi)])
    t = np.unique(np.concatenate(ts))
    seg = np.diff(t)
    mid = 0.5 * (t[1:] + t[:-1])
    keep = seg > 1e-12
    seg, mid = seg[keep], mid[keep]
    col = np.floor(ox + mid * dx + half).astype(int)
    row = np.floor(half - (oy + mid * dy)).astype(int)
    ok = (col >= 0) & (col < N) & (row >= 0) & (row < N)
    return row[ok] * N + col[ok], seg[ok]


@dataclass
class Projection:
    """Projection matrix with its sinogram and ray bookkeeping."""

    A: sps.csr_matrix
    b: np.ndarray
    x_true: np.ndarray
    view_of_row: np.ndarray
    ray_of_row: np.ndarray
    spec: PhantomSpec = field(repr=False)

    def manifest(self):
        sp = self.spec
        angles = " ".join(repr(float(a)) for a in sp.angles())
        return (f"grid = {sp.grid}\nviews = {sp.views}\nrays_per_view = {sp.rays_per_view}\n"
                f"rows = {self.A.shape[0]}\ncols = {self.A.shape[1]}\nnnz = {self.A.nnz}\n"
                f"angles = {angles}\n")


def build_projection_matrix(spec, x_true=None):
    """Assemble ``A`` (rows that miss the grid dropped) and ``b = A x_true``."""
    N = spec.grid
    if x_true is None:
        x_true = rasterize_phantom(spec)
    rows, cols, vals, views, rays = [], [], [], [], []
    r_out = 0
    for k, ang in enumerate(spec.angles()):
        for j, s in enumerate(spec.offsets()):
            pix, seg = ray_pixel_lengths(N, float(ang), float(s))
            if pix.size == 0:
                continue
            rows.append(np.full(pix.size, r_out))
            cols.append(pix)
            vals.append(seg)
            views.append(k)
            rays.append(j)
            r_out += 1
    A = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(r_out, N * N))
    A.sum_duplicates()
    return Projection(A, A @ x_true, np.asarray(x_true, float), np.array(views),
                      np.array(rays), spec)


def block_by_view(proj, views=None):
    """One block per view, Cimmino weights, residual-minimizing steps."""
    views = proj.spec.views if views is None else views
    partition = [np.flatnonzero(proj.view_of_row == k) for k in range(views)]
    for k, ix in enumerate(partition):
        if ix.size == 0:
            raise ValueError(f"view {k} has no rays crossing the grid")
    return LinearBlockProblem(proj.A, proj.b, partition, lambda_strategy=ResidualMinimizing(),
                              solution=proj.x_true)
