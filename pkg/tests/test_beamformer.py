import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risimaging.beamformer import (
    MimoArrayConfig,
    beamform_image,
    build_transfer_matrix,
    focus_phases,
    load_transfer_matrix,
    local_maxima,
    mimo_baseline_image,
    mimo_csi,
    peak_to_sidelobe_ratio,
    save_transfer_matrix,
)
from risimaging.forward import AttenuationModel, ForwardModel, PhaseConfig, synthesize_csi
from risimaging.metrics import normalize_max, ssim
from risimaging.scene import (
    FOUR_POINTS,
    SceneConfig,
    make_letter_scene,
    make_point_scene,
    ris_element_positions,
)


def small_scene(**kw):
    base = dict(ris_rows=3, ris_cols=2, grid_nx=3, grid_ny=3, grid_origin=(-0.04, -0.04),
                grid_step=0.04, subcarrier_count=5)
    base.update(kw)
    return SceneConfig(**base)


def scalar_transfer_matrix(cfg, bits=None):
    """Entry-by-entry transfer matrix with scalar arithmetic."""
    elements = ris_element_positions(cfg)
    voxels = cfg.voxel_positions()
    kc = 2 * math.pi * cfg.center_frequency / 299792458.0
    K = len(voxels)
    H = np.zeros((K, K), dtype=complex)
    for kp, fp in enumerate(voxels):
        theta = [kc * (math.dist(cfg.tx_position, fp) - math.dist(cfg.tx_position, e) - math.dist(e, fp))
                 for e in elements]
        theta = PhaseConfig(theta, bits=bits).phases
        beta_p = math.dist(cfg.tx_position, fp) + math.dist(cfg.rx_position, fp)
        for k, pos in enumerate(voxels):
            d_rk = math.dist(cfg.rx_position, pos)
            beta = math.dist(cfg.tx_position, pos) + d_rk
            total = 0j
            for f in cfg.subcarrier_frequencies():
                ks = 2 * math.pi * f / 299792458.0
                term = cmath.exp(1j * ks * beta)
                for el, e in enumerate(elements):
                    phi = math.dist(cfg.tx_position, e) + math.dist(e, pos) + d_rk
                    term += cmath.exp(1j * (ks * phi + theta[el]))
                total += cmath.exp(-1j * ks * beta_p) * term
            H[kp, k] = total
    return H


def test_focus_phases_symmetric_geometry_are_equal():
    # Tx on the array axis and a voxel straight above: every element path is the same length
    cfg = SceneConfig(tx_position=(0, 0, 0.5), ris_rows=2, ris_cols=2,
                      grid_origin=(0, 0), grid_nx=1, grid_ny=1)
    theta = focus_phases(cfg, 0).phases
    np.testing.assert_allclose(theta, theta[0], atol=1e-12)


def test_single_element_focus_aligns_paths():
    cfg = SceneConfig(ris_rows=1, ris_cols=1, grid_origin=(0.06, -0.1), grid_nx=1, grid_ny=1,
                      subcarrier_count=1, bandwidth=0.0)
    for mode in ("unit", "free-space-product"):
        att = AttenuationModel(mode)
        h = synthesize_csi(cfg, np.ones((1, 1)), focus_phases(cfg, 0), att).h
        model = ForwardModel(cfg, att)
        assert abs(h[0]) == pytest.approx(model.alpha_direct[0] + model.alpha_ris[0, 0], rel=1e-12)


def test_quantised_focus_uses_binary_levels():
    theta = focus_phases(SceneConfig(), 100, bits=1).phases
    assert set(np.round(theta, 12)) <= {0.0, round(math.pi, 12)}


def test_focus_index_checked():
    with pytest.raises(IndexError):
        focus_phases(SceneConfig(), -1)


def test_zero_scene_zero_image():
    cfg = small_scene()
    assert not beamform_image(cfg, np.zeros(cfg.grid_shape)).p.any()
    assert not mimo_baseline_image(cfg, np.zeros(cfg.grid_shape)).p.any()


@pytest.mark.parametrize("bits", [None, 2, 1])
def test_transfer_matrix_matches_scalar_oracle(bits):
    cfg = small_scene()
    H = build_transfer_matrix(cfg, bits=bits)
    ref = scalar_transfer_matrix(cfg, bits)
    assert np.abs(H - ref).max() / np.abs(ref).max() < 1e-10


def test_single_voxel_grid():
    cfg = small_scene(grid_nx=1, grid_ny=1)
    H = build_transfer_matrix(cfg)
    assert H.shape == (1, 1)
    np.testing.assert_allclose(beamform_image(cfg, np.ones((1, 1))).p, H[:, 0], rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([None, 1, 2, 3]),
       st.sampled_from(["unit", "free-space-product"]))
def test_measurement_equals_operator(seed, bits, mode):
    cfg = small_scene(grid_nx=4, grid_ny=5, ris_rows=4, ris_cols=3)
    att = AttenuationModel(mode)
    v = np.random.default_rng(seed).random(cfg.grid_shape)
    p = beamform_image(cfg, v, att, bits).p
    Hv = build_transfer_matrix(cfg, att, bits) @ v.ravel()
    assert np.abs(p - Hv).max() / np.abs(Hv).max() < 1e-10


def test_column_is_single_point_image():
    cfg = small_scene()
    H = build_transfer_matrix(cfg)
    v = np.zeros(cfg.grid_shape)
    v[2, 1] = 1
    np.testing.assert_allclose(beamform_image(cfg, v).p, H[:, 2 * 3 + 1], rtol=1e-10)


@pytest.mark.parametrize("cell", [(13, 13), (3, 22), (20, 5), (0, 25)])
def test_single_point_focus_is_argmax(cell):
    cfg = SceneConfig()
    v = np.zeros(cfg.grid_shape)
    v[cell] = 1
    image = beamform_image(cfg, v).intensity
    assert np.unravel_index(np.argmax(image), image.shape) == cell


def test_four_points_resolved_at_13x13():
    cfg = SceneConfig(ris_rows=13, ris_cols=13)
    image = beamform_image(cfg, make_point_scene(FOUR_POINTS, cfg)).intensity
    peaks = local_maxima(image)
    targets = [(7, 7), (7, 18), (18, 7), (18, 18)]
    assert len(peaks) == 4
    # overlapping mainlobes pull each peak by at most one cell toward the others
    for t in targets:
        assert sum(max(abs(p[0] - t[0]), abs(p[1] - t[1])) <= 1 for p in peaks) == 1


def test_quantisation_lowers_peak_to_sidelobe():
    cfg = SceneConfig(ris_rows=13, ris_cols=13)
    v = make_point_scene(FOUR_POINTS, cfg)
    targets = [tuple(t) for t in np.argwhere(v)]
    pslr = [peak_to_sidelobe_ratio(beamform_image(cfg, v, bits=b).intensity, targets, 5.5)
            for b in (None, 2, 1)]
    assert pslr[0] >= pslr[1] >= pslr[2]


def test_transfer_matrix_save_load(tmp_path):
    H = build_transfer_matrix(small_scene())
    path = tmp_path / "H.npy"
    save_transfer_matrix(path, H)
    np.testing.assert_array_equal(load_transfer_matrix(path), H)
    np.save(tmp_path / "bad.npy", np.zeros((2, 3)))
    with pytest.raises(ValueError, match="square"):
        load_transfer_matrix(tmp_path / "bad.npy")


def test_mimo_array_geometry():
    arr = MimoArrayConfig()
    np.testing.assert_allclose(arr.tx_positions()[:, 0], [-0.03, 0.0, 0.03])
    np.testing.assert_allclose(arr.rx_positions()[:, 1], [-0.03, -0.06, -0.09])
    with pytest.raises(ValueError):
        MimoArrayConfig(spacing=0.0)


def test_mimo_csi_shape_and_direct_path():
    cfg = small_scene()
    v = np.zeros(cfg.grid_shape)
    v[1, 1] = 1
    h = mimo_csi(cfg, v)
    assert h.shape == (5, 3, 3)
    np.testing.assert_allclose(np.abs(h), 1.0, rtol=1e-12)


@pytest.mark.parametrize("cell", [(13, 13), (5, 20), (22, 3)])
def test_mimo_point_argmax(cell):
    cfg = SceneConfig()
    v = np.zeros(cfg.grid_shape)
    v[cell] = 1
    image = mimo_baseline_image(cfg, v).intensity
    assert np.unravel_index(np.argmax(image), image.shape) == cell


def test_mimo_letters_are_indistinct_blobs():
    cfg = SceneConfig()
    t_true, e_true = make_letter_scene("T"), make_letter_scene("E")
    t = normalize_max(mimo_baseline_image(cfg, t_true).intensity)
    e = normalize_max(mimo_baseline_image(cfg, e_true).intensity)
    between = ssim(t, e)
    assert between > ssim(t, t_true) and between > ssim(e, e_true)


def test_local_maxima_and_plateaus():
    img = np.zeros((9, 9))
    img[2, 2] = 1.0
    img[6, 5:7] = 0.8  # plateau counts once
    img[4, 8] = 0.3  # below threshold
    peaks = sorted(local_maxima(img, 0.5))
    assert len(peaks) == 2 and peaks[0] == (2, 2) and peaks[1][0] == 6 and peaks[1][1] in (5, 6)
    assert len(local_maxima(img, 0.2)) == 3
    assert local_maxima(np.zeros((3, 3))) == []


def test_peak_to_sidelobe():
    img = np.full((10, 10), 0.1)
    img[2, 2], img[7, 7], img[2, 9] = 1.0, 0.8, 0.4
    assert peak_to_sidelobe_ratio(img, [(2, 2), (7, 7)], 1.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        peak_to_sidelobe_ratio(img, [(5, 5)], 20)
