"""Vectorized distance and ray-intersection kernels for capsules, spheres and boxes.

All functions broadcast over leading dimensions. A sphere is a capsule whose
segment has zero length, so only two distance kernels are needed:
segment/segment and segment/axis-aligned-box.
"""
from __future__ import annotations

import numpy as np

_EPS = 1e-12


def point_segment(p, a, b):
    """Closest point on segment ``a-b`` to ``p``. Returns (distance, closest point)."""
    p, a, b = np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    denom = np.sum(ab * ab, axis=-1)
    t = np.sum((p - a) * ab, axis=-1) / np.where(denom > _EPS, denom, 1.0)
    t = np.clip(np.where(denom > _EPS, t, 0.0), 0.0, 1.0)
    c = a + t[..., None] * ab
    return np.linalg.norm(p - c, axis=-1), c


def segment_segment(p0, p1, q0, q1):
    """Closest points between segments ``p0-p1`` and ``q0-q1``.

    Returns ``(distance, point_on_p, point_on_q)``; handles degenerate
    (zero-length) segments and parallel pairs.
    """
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.sum(d1 * d1, axis=-1)
    e = np.sum(d2 * d2, axis=-1)
    f = np.sum(d2 * r, axis=-1)
    c = np.sum(d1 * r, axis=-1)
    b = np.sum(d1 * d2, axis=-1)
    a_ok = a > _EPS
    e_ok = e > _EPS
    a_safe = np.where(a_ok, a, 1.0)
    e_safe = np.where(e_ok, e, 1.0)

    denom = a * e - b * b
    par = denom <= _EPS * np.maximum(a * e, _EPS)
    s = np.where(par, 0.0, np.clip((b * f - c * e) / np.where(par, 1.0, denom), 0.0, 1.0))
    t = (b * s + f) / e_safe
    # t outside [0,1]: clamp and recompute s
    s = np.where(t < 0.0, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate cases
    s_pt = np.clip(-c / a_safe, 0.0, 1.0)  # second segment is a point
    t_pt = np.clip(f / e_safe, 0.0, 1.0)  # first segment is a point
    s = np.where(~e_ok, s_pt, s)
    t = np.where(~e_ok, 0.0, t)
    s = np.where(~a_ok, 0.0, s)
    t = np.where(~a_ok, t_pt, t)
    s = np.where(~a_ok & ~e_ok, 0.0, s)
    t = np.where(~a_ok & ~e_ok, 0.0, t)

    cp = p0 + s[..., None] * d1
    cq = q0 + t[..., None] * d2
    return np.linalg.norm(cp - cq, axis=-1), cp, cq


def point_box(p, lo, hi):
    """Distance from ``p`` to the axis-aligned box ``[lo, hi]`` and the closest box point."""
    p = np.asarray(p, float)
    c = np.clip(p, lo, hi)
    return np.linalg.norm(p - c, axis=-1), c


def segment_box(p0, p1, lo, hi):
    """Exact closest points between segment ``p0-p1`` and box ``[lo, hi]``.

    The squared distance along the segment is a convex piecewise quadratic in
    the segment parameter, with breakpoints where a coordinate crosses a slab
    face. Each piece is minimized in closed form.
    Returns ``(distance, point_on_segment, point_on_box)``.
    """
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    p0, p1, lo, hi = np.broadcast_arrays(p0, p1, lo, hi)
    u = p1 - p0
    nz = np.abs(u) > _EPS
    u_safe = np.where(nz, u, 1.0)
    t_lo = np.where(nz, (lo - p0) / u_safe, 0.0)
    t_hi = np.where(nz, (hi - p0) / u_safe, 0.0)
    shape = p0.shape[:-1]
    brk = np.concatenate(
        [np.zeros(shape + (1,)), np.ones(shape + (1,)), np.clip(t_lo, 0, 1), np.clip(t_hi, 0, 1)],
        axis=-1,
    )
    brk.sort(axis=-1)

    best_d2 = np.full(shape, np.inf)
    best_t = np.zeros(shape)
    for k in range(brk.shape[-1] - 1):
        ta, tb = brk[..., k], brk[..., k + 1]
        tm = 0.5 * (ta + tb)
        pm = p0 + tm[..., None] * u
        below = pm < lo
        above = pm > hi
        # excess on each axis is alpha + beta * t on this piece
        alpha = np.where(below, lo - p0, np.where(above, p0 - hi, 0.0))
        beta = np.where(below, -u, np.where(above, u, 0.0))
        bb = np.sum(beta * beta, axis=-1)
        ab = np.sum(alpha * beta, axis=-1)
        ts = np.where(bb > _EPS, -ab / np.where(bb > _EPS, bb, 1.0), ta)
        ts = np.clip(ts, ta, tb)
        pt = p0 + ts[..., None] * u
        d2 = np.sum((pt - np.clip(pt, lo, hi)) ** 2, axis=-1)
        better = d2 < best_d2
        best_d2 = np.where(better, d2, best_d2)
        best_t = np.where(better, ts, best_t)

    cp = p0 + best_t[..., None] * u
    cb = np.clip(cp, lo, hi)
    return np.sqrt(best_d2), cp, cb


def capsule_capsule(a0, a1, ra, b0, b1, rb):
    """Surface distance between capsules; points lie on the capsule surfaces.

    Distance is clamped at 0 for overlapping shapes.
    """
    d, pa, pb = segment_segment(a0, a1, b0, b1)
    return _inflate(d, pa, pb, np.asarray(ra, float), np.asarray(rb, float))


def capsule_box(a0, a1, ra, lo, hi):
    d, pa, pb = segment_box(a0, a1, lo, hi)
    return _inflate(d, pa, pb, np.asarray(ra, float), np.zeros_like(d))


def _inflate(d, pa, pb, ra, rb):
    ra = np.broadcast_to(ra, d.shape)
    rb = np.broadcast_to(rb, d.shape)
    n = pb - pa
    n = n / np.where(d > _EPS, d, 1.0)[..., None]
    sa = pa + ra[..., None] * n
    sb = pb - rb[..., None] * n
    dist = d - ra - rb
    inside = dist <= 0.0
    mid = 0.5 * (sa + sb)
    sa = np.where(inside[..., None], mid, sa)
    sb = np.where(inside[..., None], mid, sb)
    return np.maximum(dist, 0.0), sa, sb


# ---------------------------------------------------------------- ray casting


def ray_sphere(origins, dirs, centers, radii):
    """First positive hit parameter of unit rays against spheres.

    ``origins``/``dirs`` are (R, 3); ``centers`` (S, 3); returns (R, S) with
    ``inf`` for misses. Rays starting inside a sphere hit at t = 0.
    """
    oc = origins[:, None, :] - centers[None, :, :]
    b = np.einsum("rk,rsk->rs", dirs, oc)
    c = np.sum(oc * oc, axis=-1) - np.asarray(radii, float)[None, :] ** 2
    disc = b * b - c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 >= 0.0, t0, np.where(t1 >= 0.0, 0.0, np.inf))
    return np.where(ok, t, np.inf)


def ray_box(origins, dirs, lo, hi):
    """Slab test; returns (R, B) entry parameters (0 if the origin is inside)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo[None, :, :] - origins[:, None, :]) * inv[:, None, :]
        tb = (hi[None, :, :] - origins[:, None, :]) * inv[:, None, :]
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    par = dirs[:, None, :] == 0.0
    inside = (origins[:, None, :] >= lo[None]) & (origins[:, None, :] <= hi[None])
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    t_enter = tmin.max(axis=-1)
    t_exit = tmax.min(axis=-1)
    hit = (t_enter <= t_exit) & (t_exit >= 0.0)
    return np.where(hit, np.maximum(t_enter, 0.0), np.inf)


def ray_capsule(origins, dirs, p0, p1, radii):
    """First hit of unit rays with capsules (segment ``p0-p1`` inflated by radius)."""
    radii = np.asarray(radii, float)
    t = np.minimum(ray_sphere(origins, dirs, p0, radii), ray_sphere(origins, dirs, p1, radii))
    axis = p1 - p0
    length = np.linalg.norm(axis, axis=-1)
    has_body = length > _EPS
    if not np.any(has_body):
        return t
    ax = axis / np.where(has_body, length, 1.0)[:, None]
    oc = origins[:, None, :] - p0[None, :, :]
    d_par = np.einsum("rk,sk->rs", dirs, ax)
    o_par = np.einsum("rsk,sk->rs", oc, ax)
    d_perp = dirs[:, None, :] - d_par[..., None] * ax[None]
    o_perp = oc - o_par[..., None] * ax[None]
    a = np.sum(d_perp * d_perp, axis=-1)
    b = np.sum(d_perp * o_perp, axis=-1)
    c = np.sum(o_perp * o_perp, axis=-1) - radii[None, :] ** 2
    disc = b * b - a * c
    ok = (disc >= 0.0) & (a > _EPS) & has_body[None, :]
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(a > _EPS, a, 1.0)
    t0 = (-b - sq) / a_safe
    t1 = (-b + sq) / a_safe
    tc = np.where(t0 >= 0.0, t0, np.where(t1 >= 0.0, 0.0, np.inf))
    s = o_par + np.where(np.isfinite(tc), tc, 0.0) * d_par
    ok &= (s >= 0.0) & (s <= length[None, :])
    return np.minimum(t, np.where(ok, tc, np.inf))
