"""Independent reference implementations used as test oracles.

Everything here is deliberately written by a different route than the
package code it checks: pair counting instead of threshold sweeps, numeric
root finding and finite differences instead of closed-form normals, naive
loops instead of library convolutions.
"""

import numpy as np


def mann_whitney_auc(scores, labels) -> float:
    """Probability a random fake outscores a random real, ties credited 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    is_fake = np.asarray([lab == "fake" for lab in labels])
    fake = scores[is_fake]
    real = scores[~is_fake]
    if fake.size == 0 or real.size == 0:
        raise ValueError("need both classes")
    greater = (fake[:, None] > real[None, :]).sum()
    equal = (fake[:, None] == real[None, :]).sum()
    return float((greater + 0.5 * equal) / (fake.size * real.size))


def accuracy_recount(scores, labels, threshold) -> float:
    """Accuracy by explicit per-sample recount."""
    correct = 0
    for score, lab in zip(scores, labels):
        pred = "fake" if score >= threshold else "real"
        correct += pred == lab
    return correct / len(scores)


def bilinear_resize(image, out_h: int, out_w: int) -> np.ndarray:
    """Plain-float bilinear resampler with pixel-center alignment."""
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    a = img[np.ix_(y0c, x0c)]
    b = img[np.ix_(y0c, x1c)]
    c = img[np.ix_(y1c, x0c)]
    d = img[np.ix_(y1c, x1c)]
    return (a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx
            + c * wy * (1 - wx) + d * wy * wx)


def conv2d_direct(x, weights, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Naive direct convolution (cross-correlation), small tensors only."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n, c, _, _ = x.shape
    o, cw, k, _ = weights.shape
    assert c == cw, (c, cw)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (x.shape[2] - k) // stride + 1
    w_out = (x.shape[3] - k) // stride + 1
    out = np.zeros((n, o, h_out, w_out))
    for ni in range(n):
        for oi in range(o):
            for i in range(h_out):
                for j in range(w_out):
                    patch = x[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, oi, i, j] = np.sum(patch * weights[oi])
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return out


def ellipsoid_normals_numeric(scene, height: int, width: int) -> np.ndarray:
    """World-frame normal field computed independently of the renderer.

    Surface points come from bisection on the implicit function along each
    viewing ray; normals from central finite differences of that function
    (exact for a quadric up to roundoff); the camera-to-world rotation from
    scipy with the matching ZYX euler convention.
    """
    from scipy.spatial.transform import Rotation

    ax, ay, az = scene.axes
    cx, cy = scene.center
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    x = np.broadcast_to((2 * u - 1)[None, :], (height, width)).copy()
    y = np.broadcast_to((1 - 2 * v)[:, None], (height, width)).copy()

    def phi(px, py, pz):
        return ((px - cx) / ax) ** 2 + ((py - cy) / ay) ** 2 + (pz / az) ** 2 - 1.0

    r2 = ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2
    inside = r2 <= 1.0
    lo = np.zeros_like(x)
    hi = np.full_like(x, az)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = phi(x, y, mid) > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    z = 0.5 * (lo + hi)

    step = 1e-6
    gx = (phi(x + step, y, z) - phi(x - step, y, z)) / (2 * step)
    gy = (phi(x, y + step, z) - phi(x, y - step, z)) / (2 * step)
    gz = (phi(x, y, z + step) - phi(x, y, z - step)) / (2 * step)
    grad = np.stack([gx, gy, gz], axis=-1)
    grad /= np.linalg.norm(grad, axis=-1, keepdims=True)

    plane = np.asarray(scene.plane_normal, dtype=np.float64)
    plane = plane / np.linalg.norm(plane)
    grad[~inside] = plane

    roll, pitch, yaw = scene.rotation_deg
    rot = Rotation.from_euler("ZYX", [yaw, pitch, roll], degrees=True).as_matrix()
    return grad @ rot.T


def angular_error_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dots = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def linear_probe(x_train, y_train, x_eval=None, ridge: float = 1e-3):
    """Closed-form ridge linear classifier on flattened pixels (kernel form).

    Returns (train_predictions, eval_predictions) as +/-1 sign arrays.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    gram = x_train @ x_train.T
    alpha = np.linalg.solve(gram + ridge * np.eye(len(gram)), y_train)
    train_pred = np.sign(gram @ alpha)
    eval_pred = None
    if x_eval is not None:
        eval_pred = np.sign(np.asarray(x_eval, dtype=np.float64) @ x_train.T @ alpha)
    return train_pred, eval_pred
