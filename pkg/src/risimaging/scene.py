"""Scene geometry, RF parameters and ground-truth targets.

Reflectivity maps are plain ``(grid_nx, grid_ny)`` float arrays; voxel ``k``
is ``(ix, iy)`` with ``k = ix * grid_ny + iy`` (row-major, as ``ravel``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


def _vec3(value) -> tuple[float, float, float]:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got {value!r}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class SceneConfig:
    """Geometry and RF description of one RIS-aided imaging setup.

    Defaults reproduce the desk-scale setup: Tx/Rx on the y axis at
    height 0.5 m, RIS on the x-y plane centred at the origin, a 26 x 26
    imaging grid with 2 cm step on the plane z = 1 m, 30 subcarriers over
    40 MHz around 5.31 GHz.

    ``ris_element_spacing=None`` means half the centre wavelength.
    ``grid_origin`` is the (x, y) position of voxel (0, 0); the grid lies on
    the plane ``z = grid_plane_z``.
    """

    tx_position: tuple[float, float, float] = (0.0, -1.0, 0.5)
    rx_position: tuple[float, float, float] = (0.0, 1.0, 0.5)
    ris_rows: int = 17
    ris_cols: int = 17
    ris_element_spacing: float | None = None
    ris_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center_frequency: float = 5.31e9
    bandwidth: float = 40e6
    subcarrier_count: int = 30
    grid_origin: tuple[float, float] = (-0.26, -0.26)
    grid_nx: int = 26
    grid_ny: int = 26
    grid_step: float = 0.02
    grid_plane_z: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tx_position", _vec3(self.tx_position))
        object.__setattr__(self, "rx_position", _vec3(self.rx_position))
        object.__setattr__(self, "ris_center", _vec3(self.ris_center))
        origin = tuple(float(x) for x in np.asarray(self.grid_origin, dtype=float).reshape(-1))
        if len(origin) != 2:
            raise ValueError(f"grid_origin must be (x, y), got {self.grid_origin!r}")
        object.__setattr__(self, "grid_origin", origin)
        for name in ("ris_rows", "ris_cols", "subcarrier_count", "grid_nx", "grid_ny"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.grid_step > 0:
            raise ValueError(f"grid_step must be positive, got {self.grid_step!r}")
        if not self.center_frequency > 0 or self.bandwidth < 0:
            raise ValueError("center_frequency must be positive and bandwidth non-negative")
        if self.ris_element_spacing is not None and not self.ris_element_spacing > 0:
            raise ValueError("ris_element_spacing must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @property
    def wavelength(self) -> float:
        """Centre wavelength in metres."""
        return SPEED_OF_LIGHT / self.center_frequency

    @property
    def element_spacing(self) -> float:
        if self.ris_element_spacing is None:
            return self.wavelength / 2
        return self.ris_element_spacing

    @property
    def num_elements(self) -> int:
        return self.ris_rows * self.ris_cols

    @property
    def num_voxels(self) -> int:
        return self.grid_nx * self.grid_ny

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.grid_nx, self.grid_ny)

    def subcarrier_frequencies(self) -> np.ndarray:
        """Centred uniform layout ``f_c - B/2 + (s + 1/2) B / S`` for s = 0..S-1."""
        s = np.arange(self.subcarrier_count)
        return self.center_frequency - self.bandwidth / 2 + (s + 0.5) * self.bandwidth / self.subcarrier_count

    def subcarrier_wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.subcarrier_frequencies()

    def voxel_positions(self) -> np.ndarray:
        """(K, 3) voxel centres in flattening order."""
        ix, iy = np.meshgrid(np.arange(self.grid_nx), np.arange(self.grid_ny), indexing="ij")
        x = self.grid_origin[0] + ix.ravel() * self.grid_step
        y = self.grid_origin[1] + iy.ravel() * self.grid_step
        z = np.full(x.shape, float(self.grid_plane_z))
        return np.stack([x, y, z], axis=1)


@dataclass(frozen=True)
class PathGeometry:
    """Path-segment lengths (metres) for one voxel."""

    d_tk: float
    d_rk: float
    d_tl: np.ndarray = field(repr=False)
    d_lk: np.ndarray = field(repr=False)

    @property
    def direct(self) -> float:
        return self.d_tk + self.d_rk

    @property
    def ris(self) -> np.ndarray:
        return self.d_tl + self.d_lk + self.d_rk


def ris_element_positions(cfg: SceneConfig) -> np.ndarray:
    """Positions of the RIS elements as an (M*N, 3) array.

    The array lies on the x-y plane through ``cfg.ris_center``; rows run
    along x and columns along y, and element ``l = m * N + n``.
    """
    d = cfg.element_spacing
    m = np.arange(cfg.ris_rows) - (cfg.ris_rows - 1) / 2
    n = np.arange(cfg.ris_cols) - (cfg.ris_cols - 1) / 2
    mm, nn = np.meshgrid(m, n, indexing="ij")
    offsets = np.stack([mm.ravel() * d, nn.ravel() * d, np.zeros(mm.size)], axis=1)
    return np.asarray(cfg.ris_center) + offsets


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


@dataclass(frozen=True)
class SceneDistances:
    """All path lengths of a scene, vectorised over voxels and elements.

    Shapes: ``d_tk``/``d_rk`` are (K,), ``d_tl`` is (L,), ``d_lk`` is (L, K).
    """

    d_tk: np.ndarray
    d_rk: np.ndarray
    d_tl: np.ndarray
    d_lk: np.ndarray

    @property
    def direct(self) -> np.ndarray:
        return self.d_tk + self.d_rk

    @property
    def ris(self) -> np.ndarray:
        """(L, K) total Tx -> element -> voxel -> Rx length."""
        return self.d_tl[:, None] + self.d_lk + self.d_rk[None, :]


def scene_distances(cfg: SceneConfig) -> SceneDistances:
    voxels = cfg.voxel_positions()
    elements = ris_element_positions(cfg)
    tx = np.asarray(cfg.tx_position)[None, :]
    rx = np.asarray(cfg.rx_position)[None, :]
    dist = SceneDistances(
        d_tk=_distances(tx, voxels)[0],
        d_rk=_distances(rx, voxels)[0],
        d_tl=_distances(tx, elements)[0],
        d_lk=_distances(elements, voxels),
    )
    for name in ("d_tk", "d_rk", "d_tl", "d_lk"):
        if not np.all(getattr(dist, name) > 0):
            raise ValueError(f"degenerate geometry: zero-length path segment in {name}")
    return dist


def path_lengths(cfg: SceneConfig, voxel_index: int) -> PathGeometry:
    """Direct-path and per-element RIS-path segment lengths for voxel ``k``."""
    if not 0 <= voxel_index < cfg.num_voxels:
        raise IndexError(f"voxel index {voxel_index} outside [0, {cfg.num_voxels})")
    voxel = cfg.voxel_positions()[voxel_index]
    elements = ris_element_positions(cfg)
    tx = np.asarray(cfg.tx_position)
    rx = np.asarray(cfg.rx_position)
    return PathGeometry(
        d_tk=float(np.linalg.norm(voxel - tx)),
        d_rk=float(np.linalg.norm(voxel - rx)),
        d_tl=np.linalg.norm(elements - tx, axis=1),
        d_lk=np.linalg.norm(elements - voxel, axis=1),
    )


# Strokes as half-open rectangles [r0, r1) x [c0, c1) in units of the letter
# box (0..1); row runs down the letter, column across it.
_STROKE = 0.2
_LETTERS = {
    "T": [(0.0, _STROKE, 0.0, 1.0), (0.0, 1.0, 0.4, 0.6)],
    "E": [
        (0.0, 1.0, 0.0, _STROKE),
        (0.0, _STROKE, 0.0, 1.0),
        (0.4, 0.6, 0.0, 1.0),
        (0.8, 1.0, 0.0, 1.0),
    ],
    "L": [(0.0, 1.0, 0.0, _STROKE), (0.8, 1.0, 0.0, 1.0)],
    "H": [(0.0, 1.0, 0.0, _STROKE), (0.0, 1.0, 0.8, 1.0), (0.4, 0.6, 0.0, 1.0)],
    "I": [(0.0, _STROKE, 0.0, 1.0), (0.0, 1.0, 0.4, 0.6), (0.8, 1.0, 0.0, 1.0)],
    "U": [(0.0, 1.0, 0.0, _STROKE), (0.0, 1.0, 0.8, 1.0), (0.8, 1.0, 0.0, 1.0)],
}
SUPPORTED_LETTERS = tuple(sorted(_LETTERS))


def make_letter_scene(letter: str, extent: float = 0.50, step: float = 0.02) -> np.ndarray:
    """Binary raster of a capital letter, indexed ``[ix, iy]``.

    The raster is drawn as an upright page image: letter rows run along x
    (top row at ``ix = 0``) and letter columns along y, so ``v`` shown as a
    matrix reads correctly. It fills an ``extent`` x ``extent`` box sampled
    every ``step`` metres (``round(extent / step) + 1`` samples per side). Strokes are one fifth
    of the box wide, i.e. 10 cm for the default 50 cm box. A sample is set
    when its position falls inside a half-open stroke rectangle.
    """
    key = letter.upper()
    if key not in _LETTERS:
        raise ValueError(f"unsupported letter {letter!r}; choose from {', '.join(SUPPORTED_LETTERS)}")
    ratio = extent / step
    n = int(round(ratio))
    if n < 0 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"extent {extent} is not an integer multiple of step {step}")
    n += 1
    # positions in letter-box units; nudge by a tiny fraction so that
    # boundaries computed in floating point land on the intended side
    pos = np.arange(n) * step / extent if extent > 0 else np.zeros(1)
    pos = pos + 1e-9
    out = np.zeros((n, n))
    for r0, r1, c0, c1 in _LETTERS[key]:
        rows = (pos >= r0) & (pos < r1)
        cols = (pos >= c0) & (pos < c1)
        out[np.ix_(rows, cols)] = 1.0
    return out


def make_point_scene(points, cfg: SceneConfig) -> np.ndarray:
    """Map with a one at the grid cell nearest to each (x, y) point."""
    out = np.zeros(cfg.grid_shape)
    x0, y0 = cfg.grid_origin
    for point in points:
        x, y = float(point[0]), float(point[1])
        fx = (x - x0) / cfg.grid_step
        fy = (y - y0) / cfg.grid_step
        if not (-0.5 <= fx <= cfg.grid_nx - 0.5 and -0.5 <= fy <= cfg.grid_ny - 0.5):
            raise ValueError(f"point ({x}, {y}) lies outside the imaging grid")
        ix = min(int(np.floor(fx + 0.5)), cfg.grid_nx - 1)
        iy = min(int(np.floor(fy + 0.5)), cfg.grid_ny - 1)
        out[ix, iy] = 1.0
    return out


FOUR_POINTS = ((-0.12, -0.12), (-0.12, 0.1), (0.1, -0.12), (0.1, 0.1))
