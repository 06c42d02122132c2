"""Color transfer between two images through UOT on their color histograms."""

import os
from dataclasses import dataclass

import numpy as np

from .core import CostMatrix, Measure, UotProblem, sparsity_ratio
from .exceptions import ValidationError
from .io import atomic_write_bytes
from .solvers import GemConfig, gem_uot, sinkhorn_uot

__all__ = [
    "ColorHistogramPair",
    "ColorTransferResult",
    "quantize_image",
    "kmeans_objective",
    "color_cost_matrix",
    "build_histogram_pair",
    "color_transfer",
    "read_ppm",
    "write_ppm",
    "read_image",
    "write_image",
]

SPARSITY_THRESHOLD = 1e-10


def _as_pixels(image):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected an (h, w, 3) RGB array, got shape {img.shape}")
    return img.reshape(-1, 3).astype(np.float64)


def _sq_dists(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_objective(pixels, centroids, assignments):
    """Sum of squared RGB distances from each pixel to its assigned centroid."""
    pts = _as_pixels(pixels)
    lab = np.asarray(assignments).ravel()
    return float(((pts - np.asarray(centroids)[lab]) ** 2).sum())


def quantize_image(pixels, n, seed=0, tol=1e-3, max_iters=100, return_history=False):
    """k-means quantization of an RGB image to ``n`` colors.

    Initialization is farthest-point over the distinct colors, starting from
    one chosen by ``seed``; Lloyd iterations then run until no centroid moves
    more than ``tol`` or ``max_iters`` is reached. Clustering operates on
    distinct colors weighted by pixel counts, which gives the same result as
    clustering every pixel.

    Returns ``(centroids, assignments)`` with ``centroids`` of shape
    ``(n, 3)`` and ``assignments`` of shape ``(h, w)``; with
    ``return_history`` the per-iteration objective is appended.
    """
    img = np.asarray(pixels)
    pts = _as_pixels(img)
    colors, inverse, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if not 1 <= n <= colors.shape[0]:
        raise ValidationError(f"n={n} must be between 1 and the number of distinct colors ({colors.shape[0]})")
    w = counts.astype(np.float64)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(colors.shape[0]))]
    mind = ((colors - colors[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, n):
        k = int(np.argmax(mind))
        chosen.append(k)
        mind = np.minimum(mind, ((colors - colors[k]) ** 2).sum(axis=1))
    centroids = colors[chosen].copy()

    history = []
    for _ in range(max_iters):
        d = _sq_dists(colors, centroids)
        lab = np.argmin(d, axis=1)
        history.append(float((w * d[np.arange(colors.shape[0]), lab]).sum()))
        new = centroids.copy()
        for k in range(n):
            mask = lab == k
            if mask.any():
                new[k] = (w[mask, None] * colors[mask]).sum(axis=0) / w[mask].sum()
        move = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if move < tol:
            break
    d = _sq_dists(colors, centroids)
    lab = np.argmin(d, axis=1)
    history.append(float((w * d[np.arange(colors.shape[0]), lab]).sum()))
    assignments = lab[inverse].reshape(img.shape[:2])
    if return_history:
        return centroids, assignments, history
    return centroids, assignments


def color_cost_matrix(source_centroids, target_centroids):
    """Squared RGB distance between centroids divided by ``3 * 255^2``."""
    s = np.asarray(source_centroids, dtype=np.float64)
    t = np.asarray(target_centroids, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2 or s.shape[1] != 3:
        raise ValidationError("centroid sets must both have shape (n, 3)")
    return CostMatrix(_sq_dists(s, t) / (3.0 * 255.0 ** 2))


@dataclass
class ColorHistogramPair:
    source_centroids: np.ndarray
    target_centroids: np.ndarray
    a: Measure
    b: Measure
    source_assignments: np.ndarray
    target_assignments: np.ndarray


def _histogram(assignments, n):
    counts = np.bincount(np.asarray(assignments).ravel(), minlength=n).astype(np.float64)
    if np.any(counts == 0):
        raise ValidationError("a quantization cluster is empty; lower n")
    return Measure(counts / counts.sum())


def build_histogram_pair(source, target, n, seed=0):
    cs, la = quantize_image(source, n, seed)
    ct, lb = quantize_image(target, n, seed)
    return ColorHistogramPair(cs, ct, _histogram(la, n), _histogram(lb, n), la, lb)


@dataclass
class ColorTransferResult:
    image: np.ndarray
    sparsity: float
    plan: np.ndarray
    report: object
    pair: ColorHistogramPair
    tau: float


def color_transfer(source, target, n=64, solver="gem-uot", tau=None, epsilon=1e-2,
                   eta=None, seed=0, max_iters=200_000):
    """Recolor ``source`` with the palette of ``target``.

    Both images are quantized to ``n`` colors, UOT is solved between the two
    color histograms with cost :func:`color_cost_matrix`, and each source
    centroid ``k`` is replaced by ``sum_l X_kl y_l / sum_l X_kl`` (centroids
    whose plan row is empty keep their color). ``tau`` defaults to
    ``10 ||C||_inf``. Sinkhorn uses ``eta`` (default ``epsilon / 2``); GEM-UOT
    uses ``eta`` when given, else ``epsilon / (2R)``.
    """
    pair = build_histogram_pair(source, target, n, seed)
    C = color_cost_matrix(pair.source_centroids, pair.target_centroids)
    if tau is None:
        tau = 10.0 * C.max_abs if C.max_abs > 0 else 1.0
    problem = UotProblem(C, pair.a, pair.b, tau)
    if solver == "gem-uot":
        plan, report = gem_uot(problem, GemConfig(epsilon=epsilon, eta=eta, max_iters=max_iters))
    elif solver == "sinkhorn":
        plan, report = sinkhorn_uot(problem, eta if eta is not None else epsilon / 2.0,
                                    epsilon=1e-9, max_iters=max_iters)
    else:
        raise ValidationError(f"unknown color-transfer solver {solver!r}")
    X = plan.entries
    rows = X.sum(axis=1)
    mapped = pair.source_centroids.copy()
    nz = rows > 0
    mapped[nz] = (X[nz] @ pair.target_centroids) / rows[nz, None]
    out = np.clip(np.rint(mapped[pair.source_assignments]), 0, 255).astype(np.uint8)
    return ColorTransferResult(out, sparsity_ratio(X, SPARSITY_THRESHOLD), X, report, pair, float(tau))


def _ppm_tokens(data):
    """Yield (token, end_offset) for the header, skipping comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValidationError("truncated PPM header")
        yield data[start:pos], pos


def read_ppm(path):
    """Read a binary PPM (P6, maxval <= 255) into an ``(h, w, 3)`` uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _ppm_tokens(data)
    magic, _ = next(toks)
    if magic != b"P6":
        raise ValidationError(f"{path}: not a binary PPM (P6) file")
    w, _ = next(toks)
    h, _ = next(toks)
    mx, end = next(toks)
    w, h, mx = int(w), int(h), int(mx)
    if not 0 < mx <= 255:
        raise ValidationError(f"{path}: only 8-bit PPM is supported (maxval {mx})")
    body = data[end + 1:end + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise ValidationError(f"{path}: truncated pixel data")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    if mx != 255:
        img = np.rint(img.astype(np.float64) * 255.0 / mx).astype(np.uint8)
    return img.copy()


def write_ppm(path, image):
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError("expected an (h, w, 3) image")
    img = np.clip(img, 0, 255).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())


def _pil():
    try:
        from PIL import Image
    except ImportError as exc:
        raise ValidationError("PNG support needs Pillow: pip install 'artifact[png]'") from exc
    return Image


def read_image(path):
    """Read PPM natively, anything else through Pillow."""
    if os.path.splitext(os.fspath(path))[1].lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    Image = _pil()
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()


def write_image(path, image):
    if os.path.splitext(os.fspath(path))[1].lower() in (".ppm", ".pnm"):
        write_ppm(path, image)
        return
    Image = _pil()
    import io as _io
    buf = _io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
