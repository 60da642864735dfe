"""Dense array kernels for the fusion blocks: Gaussian kernels and
smoothing, nearest-neighbor upsampling, 2D convolution, and 3D convolution
over a scale axis.

Feature maps are float64 numpy arrays of shape (channels, height, width);
feature volumes add a depth axis: (channels, depth, height, width). Arrays
are row-major and contiguous; shapes are validated at every operation
boundary. Smoothing uses edge replication at borders so a constant map
stays exactly constant.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

FMAP_MAGIC = b"FMAP"


def as_feature_map(data, name: str = "feature map") -> np.ndarray:
    """Validate and return a (C, H, W) float64 array with finite values."""
    fm = np.ascontiguousarray(data, dtype=np.float64)
    if fm.ndim != 3:
        raise ValueError(f"{name} must have shape (C, H, W), got {fm.shape}")
    if min(fm.shape) < 1:
        raise ValueError(f"{name} dimensions must all be >= 1, got {fm.shape}")
    if not np.isfinite(fm).all():
        raise ValueError(f"{name} contains non-finite values")
    return fm


def as_feature_volume(data, name: str = "feature volume") -> np.ndarray:
    """Validate and return a (C, D, H, W) float64 array with finite values."""
    vol = np.ascontiguousarray(data, dtype=np.float64)
    if vol.ndim != 4:
        raise ValueError(f"{name} must have shape (C, D, H, W), got {vol.shape}")
    if min(vol.shape) < 1:
        raise ValueError(f"{name} dimensions must all be >= 1, got {vol.shape}")
    if not np.isfinite(vol).all():
        raise ValueError(f"{name} contains non-finite values")
    return vol


@dataclass(frozen=True)
class GaussianKernel:
    """Normalized 2D Gaussian kernel on the integer grid [-radius, radius]^2.

    weights sums to 1 and is symmetric under x <-> -x, y <-> -y, and
    x <-> y. The separable 1D factor is kept alongside for the two-pass
    smoothing path.
    """

    sigma: float
    radius: int
    weights: np.ndarray      # (2r+1, 2r+1), sums to 1
    weights_1d: np.ndarray   # (2r+1,), sums to 1; outer product gives weights


def default_radius(sigma: float) -> int:
    """Kernel truncation radius: ceil(3 sigma), at least 1."""
    return max(1, math.ceil(3 * sigma))


def gaussian_kernel(sigma: float, radius: int | None = None) -> GaussianKernel:
    """Build a normalized Gaussian kernel exp(-(x^2+y^2) / (2 sigma^2))
    sampled on the integer grid and renormalized to sum to 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = default_radius(sigma)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    w1 = np.exp(-(coords**2) / (2 * sigma**2))
    w1 /= w1.sum()
    w2 = np.outer(w1, w1)
    w2 /= w2.sum()
    return GaussianKernel(sigma=sigma, radius=radius, weights=w2, weights_1d=w1)


def gaussian_smooth(fm, k: GaussianKernel) -> np.ndarray:
    """Per-channel 2D smoothing with a normalized Gaussian kernel.

    Output size equals input size; borders are handled by edge replication.
    """
    fm = as_feature_map(fm)
    r = k.radius
    _, h, w = fm.shape
    padded = np.pad(fm, ((0, 0), (r, r), (r, r)), mode="edge")
    out = np.zeros_like(fm)
    for ky in range(2 * r + 1):
        for kx in range(2 * r + 1):
            out += k.weights[ky, kx] * padded[:, ky : ky + h, kx : kx + w]
    return out


def gaussian_smooth_separable(fm, k: GaussianKernel) -> np.ndarray:
    """Two-pass (horizontal then vertical) variant of :func:`gaussian_smooth`.

    Edge replication is applied per axis, which matches the 2D clamp exactly.
    """
    fm = as_feature_map(fm)
    r = k.radius
    _, h, w = fm.shape
    padded = np.pad(fm, ((0, 0), (0, 0), (r, r)), mode="edge")
    mid = np.zeros_like(fm)
    for kx in range(2 * r + 1):
        mid += k.weights_1d[kx] * padded[:, :, kx : kx + w]
    padded = np.pad(mid, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.zeros_like(fm)
    for ky in range(2 * r + 1):
        out += k.weights_1d[ky] * padded[:, ky : ky + h, :]
    return out


def upsample_nearest(fm, factor: int) -> np.ndarray:
    """Replicate each pixel ``factor`` times along both spatial axes."""
    fm = as_feature_map(fm)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return fm.copy()
    return np.repeat(np.repeat(fm, factor, axis=1), factor, axis=2)


def conv2d(fm, weights, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Standard cross-correlation of a (C_in, H, W) map with
    (C_out, C_in, k, k) weights and zero padding.

    Output spatial dims are floor((H + 2p - k) / stride) + 1.
    """
    fm = as_feature_map(fm)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ValueError(f"weights must have shape (C_out, C_in, k, k), got {weights.shape}")
    c_in, h, w = fm.shape
    c_out, w_cin, k, _ = weights.shape
    if w_cin != c_in:
        raise ValueError(f"weights expect {w_cin} input channels, map has {c_in}")
    if stride < 1 or k < 1:
        raise ValueError(f"kernel size and stride must be >= 1, got k={k}, stride={stride}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"kernel {k}x{k} with padding {padding} does not fit the {h}x{w} map"
        )
    padded = np.pad(fm, ((0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((c_out, h_out, w_out))
    for ky in range(k):
        for kx in range(k):
            patch = padded[:, ky : ky + h_out * stride : stride, kx : kx + w_out * stride : stride]
            out += np.einsum("oc,chw->ohw", weights[:, :, ky, kx], patch)
    return out


def conv3d_scale(vol, weights) -> np.ndarray:
    """3D convolution that fully contracts the depth (scale) axis.

    ``vol`` is (C_in, D, H, W); ``weights`` is (C_out, C_in, D, k, k) with
    odd k. Spatial padding is (k-1)/2 and there is no depth padding, so the
    output is a (C_out, H, W) map.
    """
    vol = as_feature_volume(vol)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.ndim != 5 or weights.shape[3] != weights.shape[4]:
        raise ValueError(f"weights must have shape (C_out, C_in, D, k, k), got {weights.shape}")
    c_in, depth, h, w = vol.shape
    c_out, w_cin, w_depth, k, _ = weights.shape
    if w_cin != c_in:
        raise ValueError(f"weights expect {w_cin} input channels, volume has {c_in}")
    if w_depth != depth:
        raise ValueError(f"weights expect depth {w_depth}, volume has depth {depth}")
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd for same-size output, got {k}")
    pad = (k - 1) // 2
    padded = np.pad(vol, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((c_out, h, w))
    for d in range(depth):
        for ky in range(k):
            for kx in range(k):
                patch = padded[:, d, ky : ky + h, kx : kx + w]
                out += np.einsum("oc,chw->ohw", weights[:, :, d, ky, kx], patch)
    return out


def write_fmap(path, fm) -> None:
    """Write a (C, H, W) array in the FMAP fixture format: magic "FMAP",
    little-endian u32 dims C, H, W, then float32 values row-major."""
    fm = as_feature_map(fm)
    c, h, w = fm.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<III", c, h, w))
        f.write(fm.astype("<f4").tobytes())


def read_fmap(path) -> np.ndarray:
    """Read an FMAP fixture file back into a (C, H, W) float64 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != FMAP_MAGIC:
        raise ValueError(f"{path}: not an FMAP file (bad magic or truncated header)")
    c, h, w = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * c * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for dims ({c}, {h}, {w}), got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return as_feature_map(values.reshape(c, h, w), name=str(path))
