"""RIS focusing, measurement-based beamforming, the transfer matrix and the
commodity 3x3 MIMO baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import TWO_PI, AttenuationModel, ForwardModel, PhaseConfig, add_noise, quantize_phase
from .scene import SceneConfig, scene_distances


@dataclass(frozen=True)
class BeamformedImage:
    """Complex beamforming output ``p``, one value per voxel."""

    p: np.ndarray
    shape: tuple[int, int]

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.p).reshape(self.shape)


def _focus_phases_all(cfg: SceneConfig, bits: int | None, dist=None) -> np.ndarray:
    """(K, L) RIS phases focusing on each voxel, at the centre frequency."""
    dist = scene_distances(cfg) if dist is None else dist
    kc = TWO_PI / cfg.wavelength
    # beta_k' - phi_lk' ; the common d_rk' term cancels
    theta = kc * (dist.d_tk[None, :] - dist.d_tl[:, None] - dist.d_lk)
    return quantize_phase(theta.T, bits)


def focus_phases(cfg: SceneConfig, focus_voxel: int, bits: int | None = None,
                 dist=None) -> PhaseConfig:
    """RIS phases that bring every element path of ``focus_voxel`` into phase
    with its direct path at the centre frequency, optionally quantised."""
    if not 0 <= focus_voxel < cfg.num_voxels:
        raise IndexError(f"voxel index {focus_voxel} outside [0, {cfg.num_voxels})")
    dist = scene_distances(cfg) if dist is None else dist
    kc = TWO_PI / cfg.wavelength
    theta = kc * (dist.d_tk[focus_voxel] - dist.d_tl - dist.d_lk[:, focus_voxel])
    return PhaseConfig(theta, bits=bits, config_id=str(focus_voxel))


def beamform_image(cfg: SceneConfig, v, att: AttenuationModel | None = None,
                   bits: int | None = None, snr_db: float | None = None,
                   rng: np.random.Generator | None = None) -> BeamformedImage:
    """Image a scene by K sequential measurements, one focus per voxel.

    For every focus voxel k' the RIS is set by :func:`focus_phases`, the CSI
    is measured, and the subcarriers are summed after compensating the
    direct-path phase of k'.
    """
    model = ForwardModel(cfg, att)
    direct = model.direct_response(v)
    element = model.element_response(v)
    dist = model.dist
    p = np.empty(cfg.num_voxels, dtype=complex)
    for kp in range(cfg.num_voxels):
        meas = model.measure(direct, element, focus_phases(cfg, kp, bits, dist))
        h = meas.h
        if snr_db is not None:
            h = add_noise(h, snr_db, rng)
        p[kp] = np.sum(h * np.exp(-1j * model.wavenumbers * dist.direct[kp]))
    return BeamformedImage(p=p, shape=cfg.grid_shape)


def build_transfer_matrix(cfg: SceneConfig, att: AttenuationModel | None = None,
                          bits: int | None = None) -> np.ndarray:
    """K x K complex operator with ``beamform_image(v).p == H @ v``.

    ``H[k', k] = sum_s exp(-j beta_k'^s) (a_k exp(j beta_k^s)
    + sum_l a_lk exp(j (phi_lk^s + theta_l(k'))))``, with ``theta(k')`` the
    (possibly quantised) focusing phases, so phase-shifter error is part of
    the operator.
    """
    att = att or AttenuationModel()
    dist = scene_distances(cfg)
    a_direct = att.direct(dist)
    a_ris = att.ris(dist)
    steer = np.exp(1j * _focus_phases_all(cfg, bits, dist))  # (K', L)
    wavenumbers = TWO_PI / cfg.subcarrier_wavelengths()
    ris_total = dist.ris
    direct = dist.direct
    K = cfg.num_voxels
    H = np.zeros((K, K), dtype=complex)
    for kw in wavenumbers:
        comp = np.exp(-1j * kw * direct)  # focus-side range compensation
        row = a_direct * np.exp(1j * kw * direct)
        block = steer @ (a_ris * np.exp(1j * kw * ris_total))
        block += row[None, :]
        H += comp[:, None] * block
    return H


def save_transfer_matrix(path, H: np.ndarray) -> None:
    np.save(path, np.asarray(H, dtype=complex))


def load_transfer_matrix(path) -> np.ndarray:
    H = np.load(path)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got shape {H.shape}")
    return H


@dataclass(frozen=True)
class MimoArrayConfig:
    """T-shaped 3x3 array of two commodity APs.

    Tx antennas lie along x (the bar of the T) and Rx antennas along -y (the
    stem), all on the plane z = ``height`` with the bar centred at
    ``center``.
    """

    antennas: int = 3
    spacing: float = 0.03
    center: tuple[float, float] = (0.0, 0.0)
    height: float = 0.0

    def __post_init__(self):
        if self.antennas < 1 or not self.spacing > 0:
            raise ValueError("MIMO array needs at least one antenna and positive spacing")

    @property
    def tx_offsets(self) -> np.ndarray:
        m = np.arange(self.antennas) - (self.antennas - 1) / 2
        return np.stack([m * self.spacing, np.zeros_like(m), np.zeros_like(m)], axis=1)

    @property
    def rx_offsets(self) -> np.ndarray:
        n = np.arange(1, self.antennas + 1)
        return np.stack([np.zeros(n.size), -n * self.spacing, np.zeros(n.size)], axis=1)

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.center[0], self.center[1], self.height])

    def tx_positions(self) -> np.ndarray:
        return self.origin + self.tx_offsets

    def rx_positions(self) -> np.ndarray:
        return self.origin + self.rx_offsets


def mimo_csi(cfg: SceneConfig, v, array: MimoArrayConfig | None = None,
             att: AttenuationModel | None = None) -> np.ndarray:
    """(S, M, N) direct-path CSI for every Tx antenna m / Rx antenna n pair."""
    array = array or MimoArrayConfig()
    att = att or AttenuationModel()
    v = np.asarray(v, dtype=float).reshape(-1)
    voxels = cfg.voxel_positions()
    d_t = np.linalg.norm(voxels[None, :, :] - array.tx_positions()[:, None, :], axis=2)  # (M, K)
    d_r = np.linalg.norm(voxels[None, :, :] - array.rx_positions()[:, None, :], axis=2)  # (N, K)
    total = d_t[:, None, :] + d_r[None, :, :]
    if att.mode == "unit":
        weights = np.broadcast_to(v, total.shape)
    else:
        weights = v / (d_t[:, None, :] * d_r[None, :, :])
    wavenumbers = TWO_PI / cfg.subcarrier_wavelengths()
    return np.stack([np.sum(weights * np.exp(1j * kw * total), axis=2) for kw in wavenumbers])


def mimo_baseline_image(cfg: SceneConfig, v, array: MimoArrayConfig | None = None,
                        att: AttenuationModel | None = None) -> BeamformedImage:
    """Angle/range matched filtering of the T-array CSI, projected on the grid.

    Each voxel is seen from the phase centre of the Tx and of the Rx
    sub-array at elevation ``alpha``, azimuth ``phi`` and range ``r``. Pair
    (m, n) is steered with the far-field offsets ``o . u(alpha, phi)`` of
    its two antennas, and every subcarrier is compensated for the range
    ``r_tx + r_rx``.
    """
    array = array or MimoArrayConfig()
    h = mimo_csi(cfg, v, array, att)
    voxels = cfg.voxel_positions()

    def look(positions):
        centre = positions.mean(axis=0)
        rel = voxels - centre
        r = np.linalg.norm(rel, axis=1)
        alpha = np.arccos(rel[:, 2] / r)
        phi = np.arctan2(rel[:, 1], rel[:, 0])
        u = np.stack([np.sin(alpha) * np.cos(phi), np.sin(alpha) * np.sin(phi)], axis=1)
        return r, u @ (positions - centre)[:, :2].T

    r_tx, tx_shift = look(array.tx_positions())  # (K,), (K, M)
    r_rx, rx_shift = look(array.rx_positions())  # (K,), (K, N)
    # far field: d(antenna, voxel) ~ r - offset . u
    path = (r_tx + r_rx)[:, None, None] - tx_shift[:, :, None] - rx_shift[:, None, :]
    p = np.zeros(cfg.num_voxels, dtype=complex)
    for s, lam_s in enumerate(cfg.subcarrier_wavelengths()):
        p += np.einsum("kmn,mn->k", np.exp(-1j * TWO_PI / lam_s * path), h[s])
    return BeamformedImage(p=p, shape=cfg.grid_shape)


def local_maxima(image: np.ndarray, rel_threshold: float = 0.5) -> list[tuple[int, int]]:
    """Cells that are the maximum of their 3x3 neighbourhood and exceed
    ``rel_threshold`` times the global maximum. Plateaus count once."""
    image = np.asarray(image, dtype=float)
    peak = image.max()
    if peak <= 0:
        return []
    is_max = image == ndimage.maximum_filter(image, size=3, mode="constant", cval=-np.inf)
    is_max &= image >= rel_threshold * peak
    labels, count = ndimage.label(is_max)
    if count == 0:
        return []
    centers = ndimage.center_of_mass(is_max, labels, range(1, count + 1))
    return [(int(round(cx)), int(round(cy))) for cx, cy in centers]


def peak_to_sidelobe_ratio(image: np.ndarray, targets, exclusion: float) -> float:
    """Weakest target intensity over the strongest intensity farther than
    ``exclusion`` cells from every target."""
    image = np.asarray(image, dtype=float)
    targets = [tuple(t) for t in targets]
    ix, iy = np.indices(image.shape)
    near = np.zeros(image.shape, dtype=bool)
    for tx, ty in targets:
        near |= np.hypot(ix - tx, iy - ty) <= exclusion
    if near.all():
        raise ValueError("exclusion zone covers the whole image")
    main = min(image[t] for t in targets)
    return float(main / image[~near].max())
