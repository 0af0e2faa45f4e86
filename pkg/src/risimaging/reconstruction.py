"""ADMM super-resolution with a patch-grouped weighted nuclear norm prior.

Solves ``min_v 1/2 ||p - H v||^2 + lam ||v||_{w,*}`` for a real,
non-negative albedo ``v`` by splitting ``[H; I] v = [z1; z2]``. The z2
step is a WNNM denoiser: similar patches are grouped, each group is
shrunk by weighted singular-value thresholding, and the estimates are
averaged back onto the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

logger = logging.getLogger(__name__)


class ReconstructionError(RuntimeError):
    """Raised when the solver produces non-finite values."""


@dataclass(frozen=True)
class AdmmParams:
    """Solver settings.

    ``mu=None`` picks the safe step ``mu = rho * sigma_max(K)^2`` where
    ``K = [H; I]`` after ``H`` has been scaled to unit spectral norm.
    ``lam`` multiplies the WNNM weights. ``tol`` enables an early stop
    once the primal residual drops below ``tol * ||p||`` and the update of
    ``v`` below ``tol * ||v||``.
    """

    rho: float = 1.0
    mu: float | None = None
    lam: float = 1.0
    outer_iters: int = 300
    inner_iters: int = 3
    delta: float = 0.1
    tol: float | None = 1e-6

    def __post_init__(self):
        if not self.rho > 0 or not self.lam > 0:
            raise ValueError("rho and lam must be positive")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.outer_iters < 1 or self.inner_iters < 0:
            raise ValueError("outer_iters must be >= 1 and inner_iters >= 0")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")


@dataclass(frozen=True)
class PatchParams:
    """Patch grouping and weighting for the WNNM step.

    ``noise_sigma=None`` estimates the noise level of each input with
    :func:`estimate_noise_sigma`.
    """

    patch_size: int = 6
    patch_stride: int = 2
    group_size: int = 12
    search_window: int = 12
    noise_sigma: float | None = None
    weight_constant: float = 2 * np.sqrt(2)
    weight_epsilon: float = 1e-16

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_stride < 1 or self.group_size < 1:
            raise ValueError("patch_size, patch_stride and group_size must be >= 1")
        if self.search_window < 0:
            raise ValueError("search_window must be >= 0")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.weight_constant > 0 or not self.weight_epsilon > 0:
            raise ValueError("weight_constant and weight_epsilon must be positive")


@dataclass
class AdmmState:
    """Iterates of the solver. ``u1``/``u2`` are the scaled duals."""

    v: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    iteration: int = 0
    residuals: list[float] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, size: int) -> "AdmmState":
        return cls(
            v=np.zeros(size),
            z1=np.zeros(size, dtype=complex),
            z2=np.zeros(size),
            u1=np.zeros(size, dtype=complex),
            u2=np.zeros(size),
        )


def weighted_svt(matrix: np.ndarray, weights) -> np.ndarray:
    """Weighted singular value soft-thresholding ``P max(S - w, 0) Q^T``.

    ``weights[..., i]`` shrinks the i-th largest singular value. Weights
    must be non-negative and non-decreasing, which makes this the exact
    proximal map of the weighted nuclear norm. Leading axes are treated as
    a stack of matrices.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("weighted_svt: input contains non-finite values")
    weights = np.asarray(weights, dtype=float)
    rank = min(matrix.shape[-2:])
    if weights.shape[-1] != rank:
        raise ValueError(f"expected {rank} weights, got {weights.shape[-1]}")
    if np.any(weights < 0) or np.any(np.diff(weights, axis=-1) < 0):
        raise ValueError("weights must be non-negative and non-decreasing")
    U, s, Vt = np.linalg.svd(matrix, full_matrices=False)
    shrunk = np.maximum(s - weights, 0.0)
    return (U * shrunk[..., None, :]) @ Vt


def svt(matrix: np.ndarray, tau: float) -> np.ndarray:
    """Plain singular value soft-thresholding at level ``tau``."""
    U, s, Vt = np.linalg.svd(np.asarray(matrix, dtype=float), full_matrices=False)
    return U @ np.diag(np.maximum(s - tau, 0.0)) @ Vt


def estimate_weights(patch_group: np.ndarray, noise_sigma: float,
                     params: PatchParams | None = None) -> np.ndarray:
    """WNNM weights ``c sqrt(n) / (sigma_hat_i + eps)``.

    ``sigma_hat_i = sqrt(max(s_i^2 - n sigma^2, 0))`` estimates the clean
    singular values of the ``n``-column group; the weights come out
    non-decreasing because the singular values are sorted descending.
    """
    params = params or PatchParams()
    group = np.asarray(patch_group, dtype=float)
    n = group.shape[-1]
    s = np.linalg.svd(group, compute_uv=False)
    clean = np.sqrt(np.maximum(s**2 - n * noise_sigma**2, 0.0))
    return params.weight_constant * np.sqrt(n) / (clean + params.weight_epsilon)


def estimate_noise_sigma(image: np.ndarray) -> float:
    """Robust noise level: 1.4826 x MAD of the residual after a 3x3 mean filter."""
    image = np.asarray(image, dtype=float)
    resid = image - ndimage.uniform_filter(image, size=3, mode="nearest")
    return float(1.4826 * np.median(np.abs(resid - np.median(resid))))


def _patch_positions(length: int, patch: int, stride: int) -> list[int]:
    pos = list(range(0, length - patch + 1, stride))
    if pos[-1] != length - patch:
        pos.append(length - patch)
    return pos


def anchor_positions(shape, params: PatchParams) -> list[tuple[int, int]]:
    """Top-left corners of the reference patches (stride lattice plus the
    last row/column so the whole grid is covered)."""
    if params.patch_size > min(shape):
        raise ValueError(f"patch_size {params.patch_size} exceeds grid {shape}")
    rows = _patch_positions(shape[0], params.patch_size, params.patch_stride)
    cols = _patch_positions(shape[1], params.patch_size, params.patch_stride)
    return [(r, c) for r in rows for c in cols]


def find_similar_patches(image: np.ndarray, anchor: tuple[int, int],
                         params: PatchParams | None = None, patches=None):
    """Group the patches most similar to the one at ``anchor``.

    Candidates are all patch positions within ``search_window // 2`` cells
    of the anchor along each axis. They are ranked by Euclidean distance to
    the anchor patch (ties by raster order); the anchor always comes first.

    Returns
    -------
    group : ndarray, shape (patch_size**2, n)
        Vectorised patches as columns.
    positions : list of (row, col)
        Top-left corners matching the columns of ``group``.
    """
    params = params or PatchParams()
    ps = params.patch_size
    if patches is None:
        patches = sliding_window_view(np.asarray(image, dtype=float), (ps, ps))
    nr, nc = patches.shape[:2]
    r0, c0 = anchor
    if not (0 <= r0 < nr and 0 <= c0 < nc):
        raise IndexError(f"anchor {anchor} outside the patch lattice {nr} x {nc}")
    half = params.search_window // 2
    rows = np.arange(max(0, r0 - half), min(nr, r0 + half + 1))
    cols = np.arange(max(0, c0 - half), min(nc, c0 + half + 1))
    cand = patches[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].reshape(-1, ps * ps)
    ref = patches[r0, c0].reshape(-1)
    dist = np.sum((cand - ref) ** 2, axis=1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    anchor_idx = int(np.flatnonzero((rr == r0) & (cc == c0))[0])
    dist[anchor_idx] = -1.0
    # lexsort: last key is primary; raster order breaks ties
    order = np.lexsort((rr * nc + cc, dist))[: params.group_size]
    group = cand[order].T.copy()
    positions = [(int(rr[i]), int(cc[i])) for i in order]
    return group, positions


def _aggregate(est: np.ndarray, positions, shape, ps: int):
    """Sum patch estimates (A, ps*ps, n) back onto the grid with coverage counts."""
    corners = np.asarray(positions)  # (A, n, 2)
    dr, dc = np.divmod(np.arange(ps * ps), ps)
    rows = corners[:, None, :, 0] + dr[None, :, None]
    cols = corners[:, None, :, 1] + dc[None, :, None]
    flat = (rows * shape[1] + cols).ravel()
    size = shape[0] * shape[1]
    acc = np.bincount(flat, weights=est.ravel(), minlength=size).reshape(shape)
    cnt = np.bincount(flat, minlength=size).astype(float).reshape(shape)
    return acc, cnt


def wnnm_denoise(F: np.ndarray, params: PatchParams | None = None, inner_iters: int = 3,
                 delta: float = 0.1, lam: float = 1.0, rho: float = 1.0) -> np.ndarray:
    """Patch-group WNNM denoising with iterative regularisation.

    Each pass feeds back a fraction ``delta`` of what the previous pass
    removed, ``F_j = Z_{j-1} + delta (F - F_{j-1})``. Every reference patch
    is grouped with its nearest neighbours, the group mean is split off,
    and the centred group is shrunk by weighted SVT with thresholds
    ``lam * sigma^2 * w / rho``. Overlapping estimates are averaged by
    coverage count. ``inner_iters=0`` returns ``F`` unchanged.
    """
    params = params or PatchParams()
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("wnnm_denoise: input contains non-finite values")
    sigma = estimate_noise_sigma(F) if params.noise_sigma is None else params.noise_sigma
    ps = params.patch_size
    anchors = anchor_positions(F.shape, params)
    Z = F.copy()
    Fj = F.copy()
    for _ in range(inner_iters):
        Fj = Z + delta * (F - Fj)
        patches = sliding_window_view(Fj, (ps, ps))
        found = [find_similar_patches(Fj, a, params, patches=patches) for a in anchors]
        acc = np.zeros(F.shape)
        cnt = np.zeros(F.shape)
        # groups near the border may hold fewer candidates; batch by size
        for n in sorted({g.shape[1] for g, _ in found}):
            batch = [(g, pos) for g, pos in found if g.shape[1] == n]
            groups = np.stack([g for g, _ in batch])
            means = groups.mean(axis=-1, keepdims=True)
            centred = groups - means
            weights = estimate_weights(centred, sigma, params) * (lam * sigma**2 / rho)
            est = weighted_svt(centred, weights) + means
            a, c = _aggregate(est, [pos for _, pos in batch], F.shape, ps)
            acc += a
            cnt += c
        Z = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), Fj)
    return Z


def z1_update(p: np.ndarray, f: np.ndarray, rho: float) -> np.ndarray:
    """Minimiser of ``1/2 ||p - z||^2 + rho/2 ||f - z||^2``."""
    return (p + rho * f) / (1.0 + rho)


def stacked_residual(H: np.ndarray, v: np.ndarray, z1, z2) -> tuple[np.ndarray, np.ndarray]:
    return H @ v - z1, v - z2


def v_gradient(H: np.ndarray, v: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Gradient over real ``v`` of ``1/2 ||H v - c1||^2 + 1/2 ||v - c2||^2``."""
    return np.real(H.conj().T @ (H @ v - c1)) + (v - c2)


def spectral_norm(H: np.ndarray) -> float:
    return float(np.linalg.norm(H, 2))


def admm_reconstruct(p, H: np.ndarray, admm: AdmmParams | None = None,
                     patch: PatchParams | None = None, shape: tuple[int, int] | None = None,
                     state: AdmmState | None = None, normalize: bool = True):
    """Reconstruct a non-negative albedo map from beamforming output ``p``.

    ``H`` and ``p`` are divided by the spectral norm of ``H`` first (this
    leaves ``p = H v`` intact and puts the data and prior terms on a common
    scale). Each iteration runs the z1 closed form, the WNNM z2 step on
    ``v + u2``, the dual update, and one projected gradient step on ``v``.

    Returns
    -------
    v : ndarray, shape ``shape``
        Reconstruction, clamped at zero and (if ``normalize``) scaled so
        that its maximum is one.
    state : AdmmState
        Final iterates with the per-iteration primal residual history.
    """
    admm = admm or AdmmParams()
    patch = patch or PatchParams()
    p = np.asarray(p, dtype=complex).reshape(-1)
    H = np.asarray(H)
    K = p.size
    if H.shape != (K, K):
        raise ValueError(f"H has shape {H.shape}, expected ({K}, {K}) for p of length {K}")
    if shape is None:
        side = int(round(np.sqrt(K)))
        if side * side != K:
            raise ValueError("shape is required for non-square grids")
        shape = (side, side)
    if shape[0] * shape[1] != K:
        raise ValueError(f"shape {shape} does not match {K} voxels")

    scale = spectral_norm(H)
    if not scale > 0:
        raise ValueError("H is zero")
    Hn = H / scale
    pn = p / scale
    sigma_k2 = 1.0 + 1.0  # sigma_max([Hn; I])^2
    mu = admm.rho * sigma_k2 if admm.mu is None else admm.mu
    step = admm.rho / mu
    p_norm = np.linalg.norm(pn)

    st = state or AdmmState.zeros(K)
    for it in range(admm.outer_iters):
        Hv = Hn @ st.v
        st.z1 = z1_update(pn, Hv + st.u1, admm.rho)
        F = (st.v + st.u2).reshape(shape)
        st.z2 = wnnm_denoise(F, patch, admm.inner_iters, admm.delta, admm.lam, admm.rho).reshape(-1)
        r1, r2 = Hv - st.z1, st.v - st.z2
        st.u1 = st.u1 + r1
        st.u2 = st.u2 + r2
        grad = v_gradient(Hn, st.v, st.z1 - st.u1, st.z2 - st.u2)
        v_prev = st.v
        st.v = np.maximum(st.v - step * grad, 0.0)
        st.iteration += 1
        resid = float(np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2))
        data = 0.5 * float(np.linalg.norm(pn - Hn @ st.v) ** 2)
        st.residuals.append(resid)
        st.objectives.append(data)
        if not (np.all(np.isfinite(st.v)) and np.isfinite(resid)):
            raise ReconstructionError(f"non-finite iterate at iteration {st.iteration}")
        logger.debug("iter %d primal residual %.3e data %.3e", st.iteration, resid, data)
        # a zero primal residual alone can occur before the iterates settle
        if (admm.tol is not None and resid < admm.tol * p_norm
                and np.linalg.norm(st.v - v_prev) <= admm.tol * np.linalg.norm(st.v)):
            break

    v = st.v.reshape(shape).copy()
    if normalize and v.max() > 0:
        v = v / v.max()
    return v, st
