import csv
import json

import numpy as np
import pytest

from risimaging import harness
from risimaging.harness import (
    SUITES,
    ConfigError,
    ExperimentConfig,
    TargetSpec,
    export_transfer_matrix,
    main,
    run_experiment,
    run_suite,
    suite_configs,
)
from risimaging.io import read_complex_csv, read_grid_csv
from risimaging.metrics import MetricReport
from risimaging.reconstruction import ReconstructionError
from risimaging.scene import SceneConfig

E_OPT = """\
method = "ris-opt"
quantization_bits = "continuous"
output = "letter_E_opt"

[scene]
ris_rows = 17
ris_cols = 17

[target]
kind = "letter"
letter = "E"

[admm]
outer_iters = 4
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_run_config_writes_artifacts(tmp_path):
    cfg = ExperimentConfig.load(write(tmp_path, E_OPT))
    assert cfg.admm.outer_iters == 4 and cfg.quantization_bits is None
    result = run_experiment(cfg, tmp_path / "out")
    out = tmp_path / "out"
    for name in ("truth.csv", "truth.pgm", "image.csv", "image.pgm", "report.json",
                 "metrics.csv", "residuals.csv", "manifest.json", "config.toml"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["rmse"] == result.report.rmse and "ssim" in report
    with open(out / "residuals.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "primal_residual", "objective_surrogate"] and len(rows) == 5
    np.testing.assert_array_equal(read_grid_csv(out / "image.csv"), result.image)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["wall_time_s"] >= 0 and "numpy" in manifest["versions"]
    # the echoed config reproduces the run's config
    assert ExperimentConfig.load(out / "config.toml") == cfg


def test_bf_run_has_no_residual_log(tmp_path):
    cfg = ExperimentConfig.from_dict({"method": "ris-bf", "scene": {"ris_rows": 5, "ris_cols": 5}})
    run_experiment(cfg, tmp_path)
    assert not (tmp_path / "residuals.csv").exists()


def test_missing_scene_names_scene():
    with pytest.raises(ConfigError, match=r"^scene"):
        ExperimentConfig.from_dict({"method": "ris-bf"})


@pytest.mark.parametrize("data,path", [
    ({"scene": {"ris_rows": 0}}, "scene"),
    ({"scene": {"bogus": 1}}, "scene"),
    ({"scene": {}, "method": "sar"}, "method"),
    ({"scene": {}, "quantization_bits": 0}, "quantization_bits"),
    ({"scene": {}, "admm": {"rho": -1.0}}, "admm"),
    ({"scene": {}, "patch": {"stride": 2}}, "patch.stride"),
    ({"scene": {}, "target": {"kind": "cloud"}}, "target.kind"),
    ({"scene": {}, "attenuation": "log"}, "attenuation"),
    ({"scene": {}, "seed": -3}, "seed"),
    ({"scene": {}, "colour": "red"}, "colour"),
])
def test_schema_errors_carry_field_path(data, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(data)
    assert str(info.value).startswith(path)


def test_mimo_with_ris_fields_warns_and_ignores():
    with pytest.warns(UserWarning, match="ris_rows"):
        cfg = ExperimentConfig.from_dict(
            {"method": "mimo", "quantization_bits": 1, "scene": {"ris_rows": 9}})
    assert cfg.quantization_bits is None
    assert "ris_rows" not in cfg.to_dict()["scene"]


def test_letter_must_fit_grid():
    cfg = ExperimentConfig.from_dict({"method": "ris-bf", "scene": {}, "target": {"extent": 0.3}})
    with pytest.raises(ConfigError, match="target.extent"):
        cfg.target.build(cfg.scene)


def test_point_target_from_toml(tmp_path):
    text = 'method = "ris-bf"\n[scene]\n[target]\nkind = "points"\npoints = [[0.0, 0.0]]\n'
    cfg = ExperimentConfig.load(write(tmp_path, text))
    v = cfg.target.build(cfg.scene)
    assert v.sum() == 1 and v[13, 13] == 1


def test_suite_membership():
    assert [c.target.letter for _, c in suite_configs("letters")] == ["T"] * 3 + ["E"] * 3
    rows = suite_configs("points-resolution")
    assert [(c.scene.ris_rows, c.method) for _, c in rows] == [
        (m, meth) for m in (9, 11, 13) for meth in ("ris-bf", "ris-opt")]
    rows = suite_configs("quantization-vs-elements")
    assert [(c.scene.ris_rows, c.quantization_bits, c.method) for _, c in rows] == [
        (7, 1, "ris-opt"), (9, 1, "ris-opt"), (11, 1, "ris-opt")]
    assert [c.quantization_bits for _, c in suite_configs("quantization-bf")] == [None, 2, 1]
    assert {c.scene.ris_rows for _, c in suite_configs("quantization-opt")} == {7}
    with pytest.raises(ValueError):
        suite_configs("no-such-suite")


def fake_compute(cfg):
    if cfg.target.kind == "letter" and cfg.target.letter == "E":
        raise ReconstructionError("non-finite iterate at iteration 3")
    truth = cfg.target.build(cfg.scene)
    return harness.RunResult(cfg, truth, truth, MetricReport.evaluate(truth, truth))


def test_suite_records_failures_and_continues(tmp_path, monkeypatch):
    monkeypatch.setattr(harness, "_compute", fake_compute)
    rows = run_suite("letters", tmp_path)
    assert [r["status"] for r in rows] == ["ok"] * 3 + ["failed"] * 3
    assert "iteration 3" in rows[3]["error"]
    with open(tmp_path / "results.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [r["scene"] for r in table] == ["T"] * 3 + ["E"] * 3
    assert table[0]["rmse"] == "0.0" and table[4]["rmse"] == ""
    assert (tmp_path / "montage.pgm").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    # each row points at a config that regenerates it
    for row, cfg_name in zip(table, manifest["configs"]):
        assert row["config"] == cfg_name
        cfg = ExperimentConfig.load(tmp_path / cfg_name)
        assert cfg.target.label == row["scene"] and cfg.method == row["method"]


def test_cli_empty_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["suite", ""])
    assert info.value.code == 2
    err = capsys.readouterr().err
    assert all(name in err for name in SUITES)


def test_cli_run_uses_env_output_root(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, E_OPT.replace('method = "ris-opt"', 'method = "ris-bf"'))
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "root"))
    assert main(["run", str(cfg), "--seed", "7"]) == 0
    report = json.loads((tmp_path / "root" / "letter_E_opt" / "manifest.json").read_text())
    assert report["config"]["seed"] == 7
    # --out beats the environment
    assert main(["run", str(cfg), "--out", str(tmp_path / "cli")]) == 0
    assert (tmp_path / "cli" / "letter_E_opt" / "image.pgm").exists()


def test_cli_reports_schema_error(tmp_path, capsys):
    cfg = write(tmp_path, 'method = "ris-bf"\n')
    assert main(["run", str(cfg)]) == 2
    assert "scene" in capsys.readouterr().err


def test_export_h(tmp_path):
    text = 'method = "ris-bf"\nquantization_bits = 1\n[scene]\nris_rows = 3\nris_cols = 3\ngrid_nx = 4\ngrid_ny = 4\n'
    cfg = ExperimentConfig.load(write(tmp_path, text))
    H = export_transfer_matrix(cfg, tmp_path / "H.npy")
    np.testing.assert_array_equal(np.load(tmp_path / "H.npy"), H)
    assert main(["export-h", str(tmp_path / "cfg.toml"), str(tmp_path / "H.csv")]) == 0
    np.testing.assert_array_equal(read_complex_csv(tmp_path / "H.csv"), H)


def test_noise_seed_fixes_output(tmp_path):
    base = {"method": "ris-bf", "scene": {"ris_rows": 5, "ris_cols": 5}, "snr_db": 10.0}
    a = run_experiment(ExperimentConfig.from_dict({**base, "seed": 1}), tmp_path / "a")
    b = run_experiment(ExperimentConfig.from_dict({**base, "seed": 1}), tmp_path / "b")
    c = run_experiment(ExperimentConfig.from_dict({**base, "seed": 2}), tmp_path / "c")
    assert a.image.tobytes() == b.image.tobytes()
    assert a.image.tobytes() != c.image.tobytes()


def test_target_labels():
    assert TargetSpec(letter="T").label == "T"
    assert TargetSpec(kind="points").label == "points4"
    assert ExperimentConfig(SceneConfig(), TargetSpec(), method="mimo").ris_size == "-"
