"""CSI synthesis for a reflectivity map under a given RIS configuration.

Per subcarrier s the channel is

    h_s = sum_k v(k) * (a_k exp(j beta_k^s) + sum_l a_lk exp(j (phi_lk^s + theta_l)))

with ``beta_k^s = 2 pi (d_tk + d_rk) / lambda_s`` on the direct path and
``phi_lk^s = 2 pi (d_tl + d_lk + d_rk) / lambda_s`` on the path through
element l. RIS phases are frequency-flat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .scene import SceneConfig, SceneDistances, path_lengths, scene_distances

TWO_PI = 2 * np.pi


def quantize_phase(theta, bits: int | None = None):
    """Round phases to the nearest of ``2**bits`` uniform levels in [0, 2 pi).

    ``bits=None`` is the continuous phase shifter and only wraps to
    [0, 2 pi). Works elementwise on arrays.
    """
    theta = np.mod(theta, TWO_PI)
    if bits is None:
        return theta
    if int(bits) != bits or bits < 1:
        raise ValueError(f"bits must be a positive integer or None, got {bits!r}")
    levels = 2 ** int(bits)
    step = TWO_PI / levels
    # wrap-around: an index equal to `levels` is level 0
    idx = np.mod(np.floor(theta / step + 0.5), levels)
    return idx * step


def phase_levels(bits: int) -> np.ndarray:
    levels = 2 ** int(bits)
    return np.arange(levels) * TWO_PI / levels


@dataclass(frozen=True)
class PhaseConfig:
    """Per-element RIS phases in [0, 2 pi).

    ``bits`` records the shifter resolution the phases were quantised to
    (``None`` for continuous).
    """

    phases: np.ndarray
    bits: int | None = None
    config_id: str = "0"

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if not np.all(np.isfinite(phases)):
            raise ValueError("phases must be finite")
        phases = quantize_phase(phases, self.bits)
        object.__setattr__(self, "phases", phases)

    @classmethod
    def uniform(cls, num_elements: int, value: float = 0.0, bits: int | None = None) -> "PhaseConfig":
        return cls(np.full(num_elements, value), bits=bits)


@dataclass(frozen=True)
class AttenuationModel:
    """Path-loss amplitudes.

    ``unit`` sets every amplitude to one. ``free-space-product`` uses
    ``1 / (d_tk d_rk)`` on the direct path and ``1 / (d_tl d_lk d_rk)`` on
    each RIS path.
    """

    mode: str = "unit"

    def __post_init__(self):
        if self.mode not in ("unit", "free-space-product"):
            raise ValueError(f"unknown attenuation mode {self.mode!r}")

    def direct(self, dist: SceneDistances) -> np.ndarray:
        if self.mode == "unit":
            return np.ones_like(dist.d_tk)
        return 1.0 / (dist.d_tk * dist.d_rk)

    def ris(self, dist: SceneDistances) -> np.ndarray:
        if self.mode == "unit":
            return np.ones_like(dist.d_lk)
        return 1.0 / (dist.d_tl[:, None] * dist.d_lk * dist.d_rk[None, :])


@dataclass(frozen=True)
class CsiMeasurement:
    """Complex CSI, one entry per subcarrier, taken under one RIS configuration."""

    h: np.ndarray
    config_id: str = "0"


def direct_path_phase(cfg: SceneConfig, voxel: int, subcarrier: int) -> float:
    """Unwrapped direct-path phase ``2 pi (d_tk + d_rk) / lambda_s``."""
    geom = path_lengths(cfg, voxel)
    lam = cfg.subcarrier_wavelengths()[subcarrier]
    return TWO_PI / lam * geom.direct


def ris_path_phase(cfg: SceneConfig, element: int, voxel: int, subcarrier: int) -> float:
    """Unwrapped phase along Tx -> element -> voxel -> Rx."""
    geom = path_lengths(cfg, voxel)
    lam = cfg.subcarrier_wavelengths()[subcarrier]
    return TWO_PI / lam * geom.ris[element]


class ForwardModel:
    """Cached geometry for repeated CSI synthesis on one scene.

    Measuring a fixed scene under many RIS configurations only needs the
    per-element scene response, which is computed once per map.
    """

    def __init__(self, cfg: SceneConfig, attenuation: AttenuationModel | None = None,
                 ris_enabled: bool = True):
        self.cfg = cfg
        self.attenuation = attenuation or AttenuationModel()
        self.ris_enabled = ris_enabled
        self.dist = scene_distances(cfg)
        self.wavenumbers = TWO_PI / cfg.subcarrier_wavelengths()
        self.alpha_direct = self.attenuation.direct(self.dist)
        self.alpha_ris = self.attenuation.ris(self.dist)

    @property
    def num_elements(self) -> int:
        return self.cfg.num_elements if self.ris_enabled else 0

    def _check_map(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.cfg.num_voxels:
            raise ValueError(
                f"reflectivity map has {v.size} cells, scene grid has {self.cfg.num_voxels}")
        return v.reshape(-1)

    def direct_response(self, v) -> np.ndarray:
        """(S,) direct-path CSI of map ``v``."""
        v = self._check_map(v)
        weights = self.alpha_direct * v
        out = np.empty(self.cfg.subcarrier_count, dtype=complex)
        for s, kw in enumerate(self.wavenumbers):
            out[s] = np.sum(weights * np.exp(1j * kw * self.dist.direct))
        return out

    def element_response(self, v) -> np.ndarray:
        """(S, L) scene response seen through each element before its phase shift."""
        v = self._check_map(v)
        if not self.ris_enabled:
            return np.zeros((self.cfg.subcarrier_count, 0), dtype=complex)
        weights = self.alpha_ris * v[None, :]
        total = self.dist.ris
        out = np.empty((self.cfg.subcarrier_count, self.cfg.num_elements), dtype=complex)
        for s, kw in enumerate(self.wavenumbers):
            out[s] = np.sum(weights * np.exp(1j * kw * total), axis=1)
        return out

    def measure(self, direct: np.ndarray, element: np.ndarray, phases: PhaseConfig) -> CsiMeasurement:
        theta = np.asarray(phases.phases)
        if theta.size != element.shape[1]:
            raise ValueError(f"phase config has {theta.size} elements, RIS has {element.shape[1]}")
        h = direct + element @ np.exp(1j * theta)
        return CsiMeasurement(h=h, config_id=phases.config_id)

    def synthesize(self, v, phases: PhaseConfig, snr_db: float | None = None,
                   rng: np.random.Generator | None = None) -> CsiMeasurement:
        meas = self.measure(self.direct_response(v), self.element_response(v), phases)
        if snr_db is None:
            return meas
        return CsiMeasurement(h=add_noise(meas.h, snr_db, rng), config_id=meas.config_id)


def add_noise(h: np.ndarray, snr_db: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Add circular complex Gaussian noise at ``snr_db`` relative to mean |h|^2."""
    rng = np.random.default_rng() if rng is None else rng
    power = np.mean(np.abs(h) ** 2)
    sigma2 = power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    return h + np.sqrt(sigma2 / 2) * noise


def synthesize_csi(cfg: SceneConfig, v, phase_cfg: PhaseConfig | None,
                   att: AttenuationModel | None = None, snr_db: float | None = None,
                   rng: np.random.Generator | None = None) -> CsiMeasurement:
    """CSI of map ``v`` under RIS phases ``phase_cfg``.

    ``phase_cfg=None`` removes the RIS (direct path only).
    """
    model = ForwardModel(cfg, att, ris_enabled=phase_cfg is not None)
    if phase_cfg is None:
        phase_cfg = PhaseConfig(np.zeros(0))
    return model.synthesize(v, phase_cfg, snr_db=snr_db, rng=rng)


def write_csi_csv(path, cfg: SceneConfig, measurements: Iterable[CsiMeasurement]) -> None:
    freqs = cfg.subcarrier_frequencies()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_id", "subcarrier_index", "frequency_hz", "real", "imag"])
        for meas in measurements:
            for s, value in enumerate(meas.h):
                writer.writerow([meas.config_id, s, repr(float(freqs[s])),
                                 repr(float(value.real)), repr(float(value.imag))])


def read_csi_csv(path) -> list[CsiMeasurement]:
    rows: dict[str, list[tuple[int, complex]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["config_id"], []).append(
                (int(row["subcarrier_index"]), complex(float(row["real"]), float(row["imag"]))))
    out = []
    for config_id, entries in rows.items():
        entries.sort()
        out.append(CsiMeasurement(h=np.array([v for _, v in entries]), config_id=config_id))
    return out
