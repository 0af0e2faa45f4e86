"""Image quality metrics and theoretical cross-range resolution."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .scene import SceneConfig


def normalize_max(image) -> np.ndarray:
    """Magnitude scaled so the maximum is one (all-zero input stays zero)."""
    image = np.abs(np.asarray(image, dtype=complex if np.iscomplexobj(image) else float))
    peak = image.max() if image.size else 0.0
    return image / peak if peak > 0 else image.astype(float)


def _pair(recon, truth) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(recon, dtype=float)
    b = np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.ravel(), b.ravel()


def rmse(recon, truth) -> float:
    a, b = _pair(recon, truth)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ssim(recon, truth, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Global (single-window) structural similarity of two images."""
    a, b = _pair(recon, truth)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


def cross_range_resolution(cfg: SceneConfig) -> tuple[float, float]:
    """``(lambda_c R / D_x, lambda_c R / D_y)`` for the RIS aperture.

    Raises ``ValueError`` for a single-element side, whose resolution is
    unbounded.
    """
    if cfg.ris_rows < 2 or cfg.ris_cols < 2:
        raise ValueError("cross-range resolution is unbounded for a RIS with a single row or column")
    d = cfg.element_spacing
    Dx = (cfg.ris_rows - 1) * d
    Dy = (cfg.ris_cols - 1) * d
    R = cfg.grid_plane_z - cfg.ris_center[2]
    return cfg.wavelength * R / Dx, cfg.wavelength * R / Dy


@dataclass
class MetricReport:
    rmse: float
    ssim: float
    resolution_x: float | None = None
    resolution_y: float | None = None

    @classmethod
    def evaluate(cls, recon, truth, cfg: SceneConfig | None = None) -> "MetricReport":
        a = normalize_max(recon)
        b = normalize_max(truth)
        res = (None, None)
        if cfg is not None and cfg.ris_rows > 1 and cfg.ris_cols > 1:
            res = cross_range_resolution(cfg)
        return cls(rmse=rmse(a, b), ssim=ssim(a, b), resolution_x=res[0], resolution_y=res[1])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
