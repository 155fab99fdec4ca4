"""Dense displacement-field algebra: TPS fitting, rigid alignment, inversion, warping.

Conventions
-----------
A :class:`DistortionField` stores one displacement vector per image block
(16x16 px by default).  The vector is the displacement *from* the image the
field is attached to *to* its counterpart: point ``(x, y)`` of the attached
image corresponds to point ``(x + dx, y + dy)`` of the counterpart.
``x`` runs along columns, ``y`` along rows, both in pixels.

``warp_image(img, f)`` builds the image attached to ``f``'s lattice by
sampling ``img`` at the pointed-to locations, so warping an image with the
field attached to the *other* image of the pair brings it into that other
frame.  Composing ``warp_image(warp_image(img, f), invert_field(f))``
returns ``img`` up to inversion error.
"""

import struct

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateInput,
    FileFormatError,
    FoldoverDetected,
    ShapeMismatch,
    SingularSystem,
)

FIELD_MAGIC = b"DFLD1"


class DistortionField:
    """2-channel displacement grid at block resolution, in pixels."""

    def __init__(self, dx, dy, block_size_px=16):
        dx = np.asarray(dx, dtype=np.float64)
        dy = np.asarray(dy, dtype=np.float64)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise ShapeMismatch(f"dx {dx.shape} and dy {dy.shape} must be equal 2-D shapes")
        if block_size_px < 1:
            raise ShapeMismatch(f"block_size_px must be >= 1, got {block_size_px}")
        if not (np.isfinite(dx).all() and np.isfinite(dy).all()):
            raise ShapeMismatch("displacements must be finite")
        self.dx = dx
        self.dy = dy
        self.block_size_px = int(block_size_px)

    @property
    def height_blocks(self):
        return self.dx.shape[0]

    @property
    def width_blocks(self):
        return self.dx.shape[1]

    @property
    def shape(self):
        return self.dx.shape

    def copy(self):
        return DistortionField(self.dx.copy(), self.dy.copy(), self.block_size_px)

    def __eq__(self, other):
        return (
            isinstance(other, DistortionField)
            and self.block_size_px == other.block_size_px
            and np.array_equal(self.dx, other.dx)
            and np.array_equal(self.dy, other.dy)
        )

    def block_centers(self):
        """Pixel coordinates of block centers as (X, Y) grids."""
        off = (self.block_size_px - 1) / 2.0
        xs = np.arange(self.width_blocks) * self.block_size_px + off
        ys = np.arange(self.height_blocks) * self.block_size_px + off
        return np.meshgrid(xs, ys)

    @classmethod
    def zeros(cls, height_blocks, width_blocks, block_size_px=16):
        return cls(
            np.zeros((height_blocks, width_blocks)),
            np.zeros((height_blocks, width_blocks)),
            block_size_px,
        )


class RigidTransform:
    """Proper rigid motion: rotation (det +1) plus translation, in pixels."""

    def __init__(self, rotation, translation):
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64).reshape(2)
        if rotation.shape != (2, 2):
            raise ShapeMismatch("rotation must be 2x2")
        if np.abs(rotation.T @ rotation - np.eye(2)).max() > 1e-9:
            raise ShapeMismatch("rotation must be orthogonal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ShapeMismatch("rotation must have determinant +1")
        self.rotation = rotation
        self.translation = translation

    @property
    def angle_rad(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def apply(self, points):
        """Apply to an (N, 2) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @classmethod
    def identity(cls):
        return cls(np.eye(2), np.zeros(2))

    @classmethod
    def from_angle(cls, angle_rad, translation=(0.0, 0.0)):
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        return cls(np.array([[c, -s], [s, c]]), translation)


class PointCorrespondences:
    """Paired source/target points in pixels."""

    def __init__(self, source, target):
        source = np.asarray(source, dtype=np.float64).reshape(-1, 2)
        target = np.asarray(target, dtype=np.float64).reshape(-1, 2)
        if source.shape != target.shape:
            raise ShapeMismatch("source and target must pair up one-to-one")
        self.source = source
        self.target = target

    def __len__(self):
        return self.source.shape[0]


def fit_rigid(corr):
    """Least-squares rigid transform mapping corr.source onto corr.target.

    Closed-form 2-D orthogonal Procrustes on the centered cross-covariance,
    with the reflection branch rejected (fingers do not mirror).
    """
    if len(corr) < 2:
        raise DegenerateInput("need at least 2 point pairs")
    src, tgt = corr.source, corr.target
    src_c = src.mean(axis=0)
    tgt_c = tgt.mean(axis=0)
    a = src - src_c
    b = tgt - tgt_c
    if np.abs(a).max() < 1e-12:
        raise DegenerateInput("all source points coincide")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, d]) @ u.T
    trans = tgt_c - rot @ src_c
    return RigidTransform(rot, trans)


def _tps_kernel(r):
    # U(r) = r^2 log r, with U(0) = 0; r in pixels.
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


def fit_tps_field(corr, height_blocks, width_blocks, block_size_px=16, regularization=1e-6):
    """Thin-plate-spline interpolation of control displacements onto block centers.

    The interpolated quantity is ``target - source``; with ``regularization``
    0 the spline reproduces every control displacement exactly.  The default
    small regularization is added to the kernel diagonal for conditioning.
    """
    n = len(corr)
    if n < 3:
        raise DegenerateInput("TPS needs at least 3 control points")
    pts = corr.source
    disp = corr.target - corr.source

    rr = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    k = _tps_kernel(rr) + float(regularization) * np.eye(n)
    p = np.hstack([np.ones((n, 1)), pts])
    lhs = np.zeros((n + 3, n + 3))
    lhs[:n, :n] = k
    lhs[:n, n:] = p
    lhs[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = disp
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"TPS system is singular: {exc}") from exc

    w, aff = sol[:n], sol[n:]
    if regularization == 0:
        # Exactly singular configurations can slip through the solver with
        # garbage coefficients; verify reproduction behaviorally.
        recon = _tps_kernel(rr) @ w + p @ aff
        if np.abs(recon - disp).max() > 1e-6 * max(1.0, np.abs(disp).max()):
            raise SingularSystem("control points are collinear or coincident")

    out = DistortionField.zeros(height_blocks, width_blocks, block_size_px)
    gx, gy = out.block_centers()
    q = np.stack([gx.ravel(), gy.ravel()], axis=1)
    rq = np.linalg.norm(q[:, None, :] - pts[None, :, :], axis=2)
    vals = _tps_kernel(rq) @ w + np.hstack([np.ones((q.shape[0], 1)), q]) @ aff
    out.dx = vals[:, 0].reshape(height_blocks, width_blocks)
    out.dy = vals[:, 1].reshape(height_blocks, width_blocks)
    return out


def _as_block_mask(mask, field):
    mask = np.asarray(mask)
    if mask.shape != field.shape:
        raise ShapeMismatch(f"mask {mask.shape} does not match field grid {field.shape}")
    return mask.astype(bool)


def remove_dc(field, mask):
    """Strip the best-fit rigid motion from a field, keeping non-rigid content.

    Fits a rigid transform explaining the field's displaced block centers
    inside ``mask`` and returns the residual displacement toward the rigidly
    aligned targets.  Refitting a rigid transform to the output gives the
    identity, and the operation is idempotent.
    """
    mb = _as_block_mask(mask, field)
    if mb.sum() < 2:
        raise DegenerateInput("mask must cover at least 2 blocks")
    gx, gy = field.block_centers()
    p2 = np.stack([gx[mb], gy[mb]], axis=1)
    p1 = p2 + np.stack([field.dx[mb], field.dy[mb]], axis=1)
    rigid = fit_rigid(PointCorrespondences(p1, p2))

    all_p2 = np.stack([gx.ravel(), gy.ravel()], axis=1)
    all_p1 = all_p2 + np.stack([field.dx.ravel(), field.dy.ravel()], axis=1)
    residual = rigid.apply(all_p1) - all_p2
    return DistortionField(
        residual[:, 0].reshape(field.shape),
        residual[:, 1].reshape(field.shape),
        field.block_size_px,
    )


def jacobian_determinant(field):
    """Local Jacobian determinant of the forward map x -> x + f(x), per block."""
    bs = float(field.block_size_px)
    ddx_dy, ddx_dx = np.gradient(field.dx, bs)
    ddy_dy, ddy_dx = np.gradient(field.dy, bs)
    return (1.0 + ddx_dx) * (1.0 + ddy_dy) - ddx_dy * ddy_dx


def invert_field(field, max_foldover_fraction=0.01, supersample=4):
    """Invert a displacement field.

    Returns ``g`` satisfying ``g(x + f(x)) = -f(x)``: composing warps by
    ``f`` then ``g`` is the identity.  Negated displacements are scattered
    forward with bilinear splatting (the field is sampled ``supersample``
    times per block for dense coverage); cells no displacement lands on are
    filled from the nearest scattered cell and blended with one 3x3 mean
    pass over the filled region.
    """
    det = jacobian_determinant(field)
    bad = np.count_nonzero(det <= 0)
    if bad > max_foldover_fraction * det.size:
        raise FoldoverDetected(
            f"forward map folds over on {bad}/{det.size} blocks"
        )

    h, w = field.shape
    bs = field.block_size_px
    off = (bs - 1) / 2.0
    s = max(1, int(supersample))
    # Source lattice in grid units, s samples per block, bilinear field values.
    sy = (np.arange(h * s) + 0.5) / s - 0.5
    sx = (np.arange(w * s) + 0.5) / s - 0.5
    cy, cx = np.meshgrid(sy, sx, indexing="ij")
    coords = np.stack([cy.ravel(), cx.ravel()])
    fdx = ndimage.map_coordinates(field.dx, coords, order=1, mode="nearest").reshape(cy.shape)
    fdy = ndimage.map_coordinates(field.dy, coords, order=1, mode="nearest").reshape(cy.shape)
    # Landing positions of each source sample, in grid units.
    tx = cx + fdx / bs
    ty = cy + fdy / bs

    acc = np.zeros((2, h, w))
    wgt = np.zeros((h, w))
    x0 = np.floor(tx).astype(int)
    y0 = np.floor(ty).astype(int)
    fx = tx - x0
    fy = ty - y0
    vals = np.stack([-fdx, -fdy])
    for dy_i, dx_i in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi = x0 + dx_i
        yi = y0 + dy_i
        wt = (fx if dx_i else 1.0 - fx) * (fy if dy_i else 1.0 - fy)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (wt > 0)
        np.add.at(wgt, (yi[ok], xi[ok]), wt[ok])
        for c in range(2):
            np.add.at(acc[c], (yi[ok], xi[ok]), (wt * vals[c])[ok])

    filled = wgt > 1e-12
    out = np.zeros_like(acc)
    out[:, filled] = acc[:, filled] / wgt[filled]
    if not filled.any():
        raise DegenerateInput("no displacement landed inside the grid")
    if not filled.all():
        _, (iy, ix) = ndimage.distance_transform_edt(~filled, return_indices=True)
        gap = ~filled
        for c in range(2):
            out[c][gap] = out[c][iy[gap], ix[gap]]
        # Single smoothing pass over the infilled cells to blend seams.
        for c in range(2):
            sm = ndimage.uniform_filter(out[c], size=3, mode="nearest")
            out[c][gap] = sm[gap]

    # Splatting low-passes the result; polish it against the defining
    # relation g(y) = -f(y + g(y)) with a few fixed-point sweeps (cubic
    # field interpolation, clamped at the borders).
    ly, lx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    gdx, gdy = out[0], out[1]
    for _ in range(4):
        qy = ly + gdy / bs
        qx = lx + gdx / bs
        coords = np.stack([qy.ravel(), qx.ravel()])
        gdx = -ndimage.map_coordinates(field.dx, coords, order=3, mode="nearest").reshape(h, w)
        gdy = -ndimage.map_coordinates(field.dy, coords, order=3, mode="nearest").reshape(h, w)
    return DistortionField(gdx, gdy, bs)


def upsample_field(field, out_height_px, out_width_px):
    """Bilinear upsampling from block centers to pixel centers.

    Pixels outside the block-center hull are clamped to the edge value.  The
    result is a pixel-resolution field (block size 1).
    """
    bs = field.block_size_px
    if out_height_px != field.height_blocks * bs or out_width_px != field.width_blocks * bs:
        raise ShapeMismatch(
            f"output {out_height_px}x{out_width_px} inconsistent with "
            f"{field.height_blocks}x{field.width_blocks} blocks of {bs} px"
        )
    off = (bs - 1) / 2.0
    py = (np.arange(out_height_px) - off) / bs
    px = (np.arange(out_width_px) - off) / bs
    cy, cx = np.meshgrid(py, px, indexing="ij")
    coords = np.stack([cy.ravel(), cx.ravel()])
    dx = ndimage.map_coordinates(field.dx, coords, order=1, mode="nearest")
    dy = ndimage.map_coordinates(field.dy, coords, order=1, mode="nearest")
    return DistortionField(
        dx.reshape(out_height_px, out_width_px),
        dy.reshape(out_height_px, out_width_px),
        block_size_px=1,
    )


def warp_image(image, field, fill=255):
    """Nearest-neighbor warp: output(x, y) = input(x + dx(x,y), y + dy(x,y)).

    ``field`` must be at pixel resolution and match the image shape;
    out-of-bounds reads return ``fill``.  A zero field is the bit-exact
    identity.
    """
    image = np.asarray(image)
    if field.block_size_px != 1 or field.shape != image.shape:
        raise ShapeMismatch(
            f"field grid {field.shape} (block {field.block_size_px}) does not "
            f"match image {image.shape} at pixel resolution"
        )
    h, w = image.shape
    gx, gy = np.meshgrid(np.arange(w), np.arange(h))
    sx = np.rint(gx + field.dx).astype(np.int64)
    sy = np.rint(gy + field.dy).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.full(image.shape, fill, dtype=image.dtype)
    out[inside] = image[sy[inside], sx[inside]]
    return out


def block_pool_mask(mask_px, block_size_px=16, threshold=0.5):
    """Downsample a pixel mask to block resolution by area pooling."""
    mask_px = np.asarray(mask_px).astype(np.float64)
    h, w = mask_px.shape
    if h % block_size_px or w % block_size_px:
        raise ShapeMismatch("mask size must be a multiple of the block size")
    hb, wb = h // block_size_px, w // block_size_px
    pooled = mask_px.reshape(hb, block_size_px, wb, block_size_px).mean(axis=(1, 3))
    return pooled >= threshold


def save_field(path, field):
    """Write a field in the DFLD1 binary format (little-endian float32)."""
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<III", field.width_blocks, field.height_blocks, field.block_size_px))
        fh.write(field.dx.astype("<f4").tobytes(order="C"))
        fh.write(field.dy.astype("<f4").tobytes(order="C"))


def load_field(path):
    """Read a DFLD1 field file."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != FIELD_MAGIC:
            raise FileFormatError(f"bad magic {magic!r}, expected {FIELD_MAGIC!r}")
        w, h, bs = struct.unpack("<III", fh.read(12))
        payload = fh.read(2 * 4 * h * w)
        if len(payload) != 2 * 4 * h * w:
            raise FileFormatError("truncated field payload")
        flat = np.frombuffer(payload, dtype="<f4")
    dx = flat[: h * w].reshape(h, w).astype(np.float64)
    dy = flat[h * w :].reshape(h, w).astype(np.float64)
    return DistortionField(dx, dy, bs)
