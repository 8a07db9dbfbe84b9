"""Quaternion and rotation helpers.

Quaternions are stored (w, x, y, z), unit norm, and all functions are
vectorized over leading dimensions. Rotation matrices act on column
vectors; the 6D rotation encoding is the first two matrix columns,
flattened column-major.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / norm


def conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b; rotate(multiply(a, b), v) == rotate(a, rotate(b, v))."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate 3-vectors v by unit quaternions q (shapes broadcast)."""
    qvec = q[..., 1:]
    uv = np.cross(qvec, v)
    uuv = np.cross(qvec, uv)
    return v + 2.0 * (q[..., :1] * uv + uuv)


def from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    return np.concatenate(
        [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
    )


def to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion -> 3x3 rotation matrix (leading dims preserved)."""
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion with non-negative w (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    mf = m.reshape((-1, 3, 3))
    out = np.empty((mf.shape[0], 4))
    # pick the largest of the four candidate pivots per element for stability
    tr = np.einsum("nii->n", mf)
    cand = np.stack([tr, mf[:, 0, 0], mf[:, 1, 1], mf[:, 2, 2]], axis=1)
    choice = np.argmax(cand, axis=1)
    for n in range(mf.shape[0]):
        a = mf[n]
        if choice[n] == 0:
            s = np.sqrt(tr[n] + 1.0) * 2.0
            out[n] = [0.25 * s, (a[2, 1] - a[1, 2]) / s,
                      (a[0, 2] - a[2, 0]) / s, (a[1, 0] - a[0, 1]) / s]
        elif choice[n] == 1:
            s = np.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2.0
            out[n] = [(a[2, 1] - a[1, 2]) / s, 0.25 * s,
                      (a[0, 1] + a[1, 0]) / s, (a[0, 2] + a[2, 0]) / s]
        elif choice[n] == 2:
            s = np.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2.0
            out[n] = [(a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s,
                      0.25 * s, (a[1, 2] + a[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2.0
            out[n] = [(a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s,
                      (a[1, 2] + a[2, 1]) / s, 0.25 * s]
    out = normalize(out)
    out[out[:, 0] < 0.0] *= -1.0
    return out.reshape(batch + (4,))


def to_rot6d(q: np.ndarray) -> np.ndarray:
    """Quaternion -> 6D rotation (first two matrix columns, column-major)."""
    m = to_matrix(q)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def from_rot6d(r6: np.ndarray, atol: float = 1e-6) -> np.ndarray:
    """6D rotation -> quaternion via Gram-Schmidt.

    Raises ValueError on degenerate input (near-zero or near-parallel
    columns); callers that decode untrusted data should catch and
    annotate with their own location info.
    """
    a1 = r6[..., :3]
    a2 = r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < atol):
        raise ValueError("degenerate 6D rotation: first column near zero")
    b1 = a1 / n1
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=-1, keepdims=True)
    if np.any(n2 < atol):
        raise ValueError("degenerate 6D rotation: columns near parallel")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    m = np.stack([b1, b2, b3], axis=-1)
    return from_matrix(m)


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic rotation angle in radians between unit quaternions."""
    dot = np.clip(np.abs(np.sum(a * b, axis=-1)), 0.0, 1.0)
    return 2.0 * np.arccos(dot)


def slerp(a: np.ndarray, b: np.ndarray, t: float | np.ndarray) -> np.ndarray:
    """Spherical interpolation from a to b, shortest arc, t in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    t = np.asarray(t, dtype=float)[..., None] if np.ndim(t) else float(t)
    # fall back to nlerp when nearly aligned
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    close = sin_theta < 1e-6
    w_a = np.where(close, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(close, 1.0, sin_theta))
    w_b = np.where(close, t, np.sin(t * theta) / np.where(close, 1.0, sin_theta))
    return normalize(w_a * a + w_b * b)
