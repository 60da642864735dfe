"""Forward pass of the scale-sequence fusion block.

Each pyramid level (finest first) is normalized to a common channel count
with a 1x1 convolution, upsampled to the finest level's spatial dims,
smoothed with a per-level Gaussian whose standard deviation grows with the
level's coarseness, stacked along a new depth axis, and fused by a 3D
convolution that contracts the depth axis. Every stage is linear, so the
whole block is linear in its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_ops
from .tensor_ops import as_feature_map, conv2d, conv3d_scale, gaussian_kernel, gaussian_smooth, upsample_nearest


@dataclass
class SsffConfig:
    common_channels: int
    sigma_schedule: tuple[float, ...]
    norm_weights: list[np.ndarray]   # per level, (common_channels, C_level, 1, 1)
    fuse_weights: np.ndarray         # (C_out, common_channels, n_levels, k, k)
    kernel_radii: tuple[int, ...] | None = None  # per level; None -> ceil(3 sigma)

    @property
    def n_levels(self) -> int:
        return len(self.sigma_schedule)

    def radius_for(self, level: int) -> int:
        if self.kernel_radii is not None:
            return self.kernel_radii[level]
        return tensor_ops.default_radius(self.sigma_schedule[level])


def validate_config(cfg: SsffConfig) -> list[str]:
    """Return a list of violated invariants; empty when the config is valid."""
    problems = []
    sched = cfg.sigma_schedule
    if len(sched) < 2:
        problems.append(f"need at least 2 levels, got {len(sched)}")
    if any(s <= 0 for s in sched):
        problems.append(f"sigma_schedule entries must be positive: {sched}")
    if any(b <= a for a, b in zip(sched, sched[1:])):
        problems.append(f"sigma_schedule must be strictly increasing: {sched}")
    if len(cfg.norm_weights) != len(sched):
        problems.append(
            f"{len(cfg.norm_weights)} norm weight sets for {len(sched)} schedule entries"
        )
    for i, nw in enumerate(cfg.norm_weights):
        if nw.ndim != 4 or nw.shape[2:] != (1, 1):
            problems.append(f"norm_weights[{i}] must have shape (C, C_in, 1, 1), got {nw.shape}")
        elif nw.shape[0] != cfg.common_channels:
            problems.append(
                f"norm_weights[{i}] outputs {nw.shape[0]} channels, expected {cfg.common_channels}"
            )
    fw = cfg.fuse_weights
    if fw.ndim != 5:
        problems.append(f"fuse_weights must have shape (C_out, C_in, D, k, k), got {fw.shape}")
    else:
        if fw.shape[1] != cfg.common_channels:
            problems.append(
                f"fuse_weights expect {fw.shape[1]} input channels, common_channels is {cfg.common_channels}"
            )
        if fw.shape[2] != len(sched):
            problems.append(
                f"fuse_weights depth {fw.shape[2]} does not match level count {len(sched)}"
            )
        if fw.shape[3] != fw.shape[4] or fw.shape[3] % 2 != 1:
            problems.append(f"fuse_weights spatial kernel must be square and odd, got {fw.shape[3:]}")
    if cfg.kernel_radii is not None:
        if len(cfg.kernel_radii) != len(sched):
            problems.append(
                f"{len(cfg.kernel_radii)} kernel radii for {len(sched)} levels"
            )
        elif any(r < 1 for r in cfg.kernel_radii):
            problems.append(f"kernel radii must be >= 1: {cfg.kernel_radii}")
    return problems


def preprocess_level(fm, norm_w, factor: int, sigma: float, radius: int | None = None) -> np.ndarray:
    """Single-level pipeline: 1x1 channel normalization, nearest upsampling
    to the common resolution, then Gaussian smoothing."""
    out = conv2d(fm, norm_w, stride=1, padding=0)
    out = upsample_nearest(out, factor)
    return gaussian_smooth(out, gaussian_kernel(sigma, radius))


def stack_levels(processed) -> np.ndarray:
    """Stack same-shape (C, H, W) maps into a (C, D, H, W) volume, depth in
    list order (finest first)."""
    vols = [as_feature_map(p) for p in processed]
    base = vols[0].shape
    for i, v in enumerate(vols):
        if v.shape != base:
            raise ValueError(f"level {i} has shape {v.shape}, expected {base}")
    return np.stack(vols, axis=1)


def _upsample_factor(finest_shape, level_shape, index: int) -> int:
    _, hf, wf = finest_shape
    _, hi, wi = level_shape
    if hf % hi != 0 or wf % wi != 0 or hf // hi != wf // wi:
        raise ValueError(
            f"level {index} dims {hi}x{wi} do not divide the finest dims {hf}x{wf} "
            "by a common integer factor"
        )
    return hf // hi


def ssff_stack(levels, cfg: SsffConfig) -> np.ndarray:
    """Preprocess all levels and stack them into the pre-fusion scale volume."""
    levels = [as_feature_map(lv, name=f"level {i}") for i, lv in enumerate(levels)]
    if len(levels) < 2:
        raise ValueError(f"need at least 2 levels, got {len(levels)}")
    if len(levels) != cfg.n_levels:
        raise ValueError(f"config describes {cfg.n_levels} levels, got {len(levels)}")
    processed = []
    for i, fm in enumerate(levels):
        nw = cfg.norm_weights[i]
        if nw.shape[1] != fm.shape[0]:
            raise ValueError(
                f"level {i} has {fm.shape[0]} channels but norm weights expect {nw.shape[1]}"
            )
        factor = _upsample_factor(levels[0].shape, fm.shape, i)
        processed.append(
            preprocess_level(fm, nw, factor, cfg.sigma_schedule[i], cfg.radius_for(i))
        )
    return stack_levels(processed)


def ssff_forward(levels, cfg: SsffConfig) -> np.ndarray:
    """Full block: preprocess, stack, and fuse. The output is a feature map
    with fuse_weights' output channels at the finest level's spatial dims."""
    return conv3d_scale(ssff_stack(levels, cfg), cfg.fuse_weights)


def _container_dims(shape) -> tuple[int, int, int]:
    # FMAP files hold rank-3 data; higher-rank weights are flattened to
    # (first, prod(middle), last) and reshaped per the manifest on load.
    return shape[0], int(np.prod(shape[1:-1], dtype=np.int64)), shape[-1]


def _write_weight(path, array) -> None:
    tensor_ops.write_fmap(path, array.reshape(_container_dims(array.shape)))


def _read_weight(path, shape) -> np.ndarray:
    raw = tensor_ops.read_fmap(path)
    expected = _container_dims(tuple(shape))
    if raw.shape != expected:
        raise ValueError(f"{path}: container dims {raw.shape} do not match declared shape {tuple(shape)}")
    return raw.reshape(shape)


def ssff_save_config(cfg: SsffConfig, directory) -> None:
    """Write a config fixture: manifest.json plus FMAP weight files."""
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "common_channels": cfg.common_channels,
        "level_channels": [int(nw.shape[1]) for nw in cfg.norm_weights],
        "sigma_schedule": list(cfg.sigma_schedule),
        "kernel_radii": list(cfg.kernel_radii) if cfg.kernel_radii is not None else None,
        "norm_weights": [
            {"file": f"norm{i}.fmap", "shape": list(nw.shape)}
            for i, nw in enumerate(cfg.norm_weights)
        ],
        "fuse_weights": {"file": "fuse.fmap", "shape": list(cfg.fuse_weights.shape)},
    }
    for i, nw in enumerate(cfg.norm_weights):
        _write_weight(d / f"norm{i}.fmap", nw)
    _write_weight(d / "fuse.fmap", cfg.fuse_weights)
    with open(d / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def ssff_load_config(directory) -> SsffConfig:
    """Load a config fixture written by :func:`ssff_save_config`. All
    violated invariants are reported together."""
    d = Path(directory)
    manifest_path = d / "manifest.json"
    if not manifest_path.is_file():
        raise ValueError(f"{d}: missing manifest.json")
    with open(manifest_path, encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{manifest_path}: malformed JSON: {e}") from e
    try:
        norm_weights = [
            _read_weight(d / entry["file"], entry["shape"])
            for entry in manifest["norm_weights"]
        ]
        fuse = manifest["fuse_weights"]
        cfg = SsffConfig(
            common_channels=int(manifest["common_channels"]),
            sigma_schedule=tuple(float(s) for s in manifest["sigma_schedule"]),
            norm_weights=norm_weights,
            fuse_weights=_read_weight(d / fuse["file"], fuse["shape"]),
            kernel_radii=(
                tuple(int(r) for r in manifest["kernel_radii"])
                if manifest.get("kernel_radii") is not None
                else None
            ),
        )
    except KeyError as e:
        raise ValueError(f"{manifest_path}: missing field {e}") from e
    problems = validate_config(cfg)
    if problems:
        raise ValueError(f"{d}: invalid config: " + "; ".join(problems))
    return cfg


def random_config(
    seed: int,
    level_channels,
    common_channels: int = 8,
    c_out: int = 8,
    kernel: int = 3,
    sigma_schedule=None,
) -> SsffConfig:
    """Seeded random weights for property tests and demos."""
    rng = np.random.default_rng(seed)
    n = len(level_channels)
    if sigma_schedule is None:
        sigma_schedule = tuple(0.5 * 2**i for i in range(n))
    norm_weights = [
        rng.standard_normal((common_channels, c, 1, 1)) / math.sqrt(c)
        for c in level_channels
    ]
    fuse_weights = rng.standard_normal(
        (c_out, common_channels, n, kernel, kernel)
    ) / math.sqrt(common_channels * n * kernel * kernel)
    return SsffConfig(
        common_channels=common_channels,
        sigma_schedule=tuple(sigma_schedule),
        norm_weights=norm_weights,
        fuse_weights=fuse_weights,
    )
