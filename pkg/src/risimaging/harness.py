"""Experiment runner: config files, single runs, figure suites and the CLI.

A run config is a TOML file::

    method = "ris-opt"            # mimo | ris-bf | ris-opt
    quantization_bits = "continuous"  # or 1, 2, ...
    attenuation = "unit"          # or "free-space-product"
    seed = 0
    snr_db = 30.0                 # optional, CSI noise
    output = "letter_E_opt"         # run directory, relative to the output root

    [scene]                       # SceneConfig fields
    ris_rows = 17
    ris_cols = 17

    [target]
    kind = "letter"               # or "points"
    letter = "E"
    # points = [[-0.12, -0.12], [0.1, 0.1]]

    [admm]                        # AdmmParams overrides
    outer_iters = 300

    [patch]                       # PatchParams overrides
    patch_size = 6
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .beamformer import beamform_image, build_transfer_matrix, mimo_baseline_image, save_transfer_matrix
from .forward import AttenuationModel
from .io import montage, write_complex_csv, write_grid_csv, write_pgm
from .metrics import MetricReport, normalize_max
from .reconstruction import AdmmParams, PatchParams, ReconstructionError, admm_reconstruct
from .scene import FOUR_POINTS, SceneConfig, make_letter_scene, make_point_scene

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

logger = logging.getLogger(__name__)

METHODS = ("mimo", "ris-bf", "ris-opt")
SUITES = ("letters", "points-resolution", "quantization-bf", "quantization-opt",
          "quantization-vs-elements")
OUTPUT_ENV = "RISIMAGING_OUT"
RESULT_FIELDS = ("scene", "method", "ris_size", "bits", "rmse", "ssim", "status", "config", "seed", "error")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


def _bits_label(bits: int | None) -> str:
    return "continuous" if bits is None else str(bits)


def _parse_bits(value) -> int | None:
    if value is None or value == "continuous":
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"quantization_bits: expected a positive integer or 'continuous', got {value!r}")
    return value


@dataclass(frozen=True)
class TargetSpec:
    kind: str = "letter"
    letter: str = "E"
    extent: float = 0.50
    points: tuple[tuple[float, float], ...] = FOUR_POINTS

    @property
    def label(self) -> str:
        return self.letter if self.kind == "letter" else f"points{len(self.points)}"

    def build(self, cfg: SceneConfig) -> np.ndarray:
        if self.kind == "points":
            return make_point_scene(self.points, cfg)
        v = make_letter_scene(self.letter, self.extent, cfg.grid_step)
        if v.shape != cfg.grid_shape:
            raise ConfigError(f"target.extent: letter raster {v.shape} does not match grid {cfg.grid_shape}")
        return v

    def to_dict(self) -> dict:
        if self.kind == "points":
            return {"kind": "points", "points": [list(p) for p in self.points]}
        return {"kind": "letter", "letter": self.letter, "extent": self.extent}


def _section(data: dict, name: str, cls, path: str):
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a table")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig
    target: TargetSpec
    method: str = "ris-opt"
    quantization_bits: int | None = None
    attenuation: str = "unit"
    admm: AdmmParams = field(default_factory=AdmmParams)
    patch: PatchParams = field(default_factory=PatchParams)
    output: str | None = None
    seed: int = 0
    snr_db: float | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        allowed = {f.name for f in fields(cls)}
        for key in data:
            if key not in allowed:
                raise ConfigError(f"{key}: unknown field")
        if "scene" not in data:
            raise ConfigError("scene: missing required section")
        if not isinstance(data["scene"], dict):
            raise ConfigError("scene: expected a table")
        method = data.get("method", "ris-opt")
        if method not in METHODS:
            raise ConfigError(f"method: expected one of {', '.join(METHODS)}, got {method!r}")
        bits = _parse_bits(data.get("quantization_bits"))
        scene_raw = dict(data["scene"])
        if method == "mimo":
            ris_keys = sorted(k for k in scene_raw if k.startswith("ris_"))
            if bits is not None:
                ris_keys.append("quantization_bits")
            if ris_keys:
                warnings.warn(f"method=mimo ignores RIS fields: {', '.join(ris_keys)}", UserWarning, stacklevel=2)
            bits = None
        try:
            scene = SceneConfig.from_dict(scene_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scene: {exc}") from exc
        target_raw = dict(data.get("target", {}))
        if "points" in target_raw:
            target_raw["points"] = tuple(tuple(float(c) for c in p) for p in target_raw["points"])
        target = _section({"target": target_raw}, "target", TargetSpec, "target")
        if target.kind not in ("letter", "points"):
            raise ConfigError(f"target.kind: expected 'letter' or 'points', got {target.kind!r}")
        attenuation = data.get("attenuation", "unit")
        try:
            AttenuationModel(attenuation)
        except ValueError as exc:
            raise ConfigError(f"attenuation: {exc}") from exc
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
        snr = data.get("snr_db")
        return cls(
            scene=scene,
            target=target,
            method=method,
            quantization_bits=bits,
            attenuation=attenuation,
            admm=_section(data, "admm", AdmmParams, "admm"),
            patch=_section(data, "patch", PatchParams, "patch"),
            output=data.get("output"),
            seed=seed,
            snr_db=None if snr is None else float(snr),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "quantization_bits": _bits_label(self.quantization_bits),
            "attenuation": self.attenuation,
            "seed": self.seed,
            "scene": {k: v for k, v in self.scene.to_dict().items()
                      if v is not None and not (self.method == "mimo" and k.startswith("ris_"))},
            "target": self.target.to_dict(),
            "admm": {k: v for k, v in asdict(self.admm).items() if v is not None},
            "patch": {k: v for k, v in asdict(self.patch).items() if v is not None},
        }
        if self.quantization_bits is not None:
            out["quantization_bits"] = self.quantization_bits
        if self.output is not None:
            out["output"] = self.output
        if self.snr_db is not None:
            out["snr_db"] = self.snr_db
        return out

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            tomli_w.dump(self.to_dict(), fh)

    @property
    def ris_size(self) -> str:
        return "-" if self.method == "mimo" else f"{self.scene.ris_rows}x{self.scene.ris_cols}"


@dataclass
class RunResult:
    config: ExperimentConfig
    image: np.ndarray
    truth: np.ndarray
    report: MetricReport
    residuals: list[float] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "scene": self.config.target.label,
            "method": self.config.method,
            "ris_size": self.config.ris_size,
            "bits": _bits_label(self.config.quantization_bits),
            "rmse": repr(self.report.rmse),
            "ssim": repr(self.report.ssim),
        }


def output_root(cli_out=None) -> Path:
    """``--out`` beats the environment override, which beats the cwd."""
    if cli_out:
        return Path(cli_out)
    return Path(os.environ.get(OUTPUT_ENV) or ".")


def _compute(cfg: ExperimentConfig) -> RunResult:
    scene = cfg.scene
    truth = cfg.target.build(scene)
    att = AttenuationModel(cfg.attenuation)
    rng = np.random.default_rng(cfg.seed)
    residuals: list[float] = []
    objectives: list[float] = []
    if cfg.method == "mimo":
        image = mimo_baseline_image(scene, truth, att=att).intensity
    else:
        bf = beamform_image(scene, truth, att, cfg.quantization_bits, cfg.snr_db, rng)
        if cfg.method == "ris-bf":
            image = bf.intensity
        else:
            H = build_transfer_matrix(scene, att, cfg.quantization_bits)
            image, state = admm_reconstruct(bf.p, H, cfg.admm, cfg.patch, scene.grid_shape)
            residuals, objectives = state.residuals, state.objectives
    image = normalize_max(image)
    report = MetricReport.evaluate(image, truth, scene if cfg.method != "mimo" else None)
    return RunResult(cfg, image, truth, report, residuals, objectives)


def _write_rows(path: Path, rows: list[dict], header=RESULT_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header), extrasaction="ignore", lineterminator="\r\n")
        writer.writeheader()
        writer.writerows(rows)


def run_experiment(cfg: ExperimentConfig, out_dir) -> RunResult:
    """Run one config and write its artifacts into ``out_dir``.

    Files: ``truth.csv/.pgm``, ``image.csv/.pgm``, ``report.json``,
    ``metrics.csv``, ``residuals.csv`` (ris-opt only), ``config.toml`` and
    ``manifest.json`` (config echo, library versions, wall time).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = _compute(cfg)
    wall = time.perf_counter() - start

    write_grid_csv(out / "truth.csv", result.truth)
    write_pgm(out / "truth.pgm", result.truth)
    write_grid_csv(out / "image.csv", result.image)
    write_pgm(out / "image.pgm", result.image)
    report = {**asdict(result.report), **result.row()}
    report["rmse"], report["ssim"] = result.report.rmse, result.report.ssim
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_rows(out / "metrics.csv", [result.row()], RESULT_FIELDS[:6])
    if cfg.method == "ris-opt":
        with open(out / "residuals.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["iteration", "primal_residual", "objective_surrogate"])
            for i, (r, o) in enumerate(zip(result.residuals, result.objectives), start=1):
                writer.writerow([i, repr(r), repr(o)])
    cfg.dump(out / "config.toml")
    manifest = {
        "config": cfg.to_dict(),
        "versions": {
            "risimaging": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": wall,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("%s: rmse %.4f ssim %.4f (%.1f s)", out, result.report.rmse, result.report.ssim, wall)
    return result


def suite_configs(name: str, seed: int = 0) -> list[tuple[str, ExperimentConfig]]:
    """The (row id, config) matrix of a figure suite."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")

    def make(row_id, method, rows, bits, target):
        return row_id, ExperimentConfig(
            scene=SceneConfig(ris_rows=rows, ris_cols=rows),
            target=target,
            method=method,
            quantization_bits=bits,
            seed=seed,
            output=row_id,
        )

    points = TargetSpec(kind="points")
    rows = []
    if name == "letters":
        for letter in ("T", "E"):
            for method in METHODS:
                rows.append(make(f"{letter}_{method}", method, 17, None, TargetSpec(letter=letter)))
    elif name == "points-resolution":
        for m in (9, 11, 13):
            for method in ("ris-bf", "ris-opt"):
                rows.append(make(f"points_{m}x{m}_{method}", method, m, None, points))
    elif name == "quantization-bf":
        for bits in (None, 2, 1):
            rows.append(make(f"points_13x13_b{_bits_label(bits)}_ris-bf", "ris-bf", 13, bits, points))
    elif name == "quantization-opt":
        for bits in (None, 2, 1):
            rows.append(make(f"E_7x7_b{_bits_label(bits)}_ris-opt", "ris-opt", 7, bits, TargetSpec(letter="E")))
    else:
        for m in (7, 9, 11):
            rows.append(make(f"E_{m}x{m}_b1_ris-opt", "ris-opt", m, 1, TargetSpec(letter="E")))
    return rows


def _suite_row(args) -> tuple[dict, np.ndarray | None]:
    row_id, cfg_path, run_dir = args
    cfg = ExperimentConfig.load(cfg_path)
    base = {
        "scene": cfg.target.label,
        "method": cfg.method,
        "ris_size": cfg.ris_size,
        "bits": _bits_label(cfg.quantization_bits),
        "rmse": "",
        "ssim": "",
        "config": f"configs/{row_id}.toml",
        "seed": cfg.seed,
        "error": "",
    }
    try:
        result = run_experiment(cfg, run_dir)
    except (ReconstructionError, ValueError, np.linalg.LinAlgError) as exc:
        logger.error("suite row %s failed: %s", row_id, exc)
        return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}, None
    return {**base, **result.row(), "status": "ok"}, result.image


def run_suite(name: str, out_dir, seed: int = 0, threads: int = 1) -> list[dict]:
    """Run every config of a suite; write ``results.csv`` and ``montage.pgm``.

    The suite directory holds ``configs/*.toml`` plus ``manifest.json``
    (the ordered config list), one run directory per row under ``runs/``,
    the results table in suite order, and a montage of all method images
    in the same order. A failing row is recorded with ``status=failed``
    and the suite continues.
    """
    if not name:
        raise ValueError(f"suite name required; choose from {', '.join(SUITES)}")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    out = Path(out_dir)
    (out / "configs").mkdir(parents=True, exist_ok=True)
    jobs = []
    for row_id, cfg in suite_configs(name, seed):
        cfg_path = out / "configs" / f"{row_id}.toml"
        cfg.dump(cfg_path)
        jobs.append((row_id, str(cfg_path), str(out / "runs" / row_id)))
    with open(out / "manifest.json", "w") as fh:
        json.dump({"suite": name, "seed": seed, "configs": [f"configs/{j[0]}.toml" for j in jobs]},
                  fh, indent=2)
        fh.write("\n")

    if threads == 1:
        outcomes = [_suite_row(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_suite_row, jobs))

    rows = [row for row, _ in outcomes]
    _write_rows(out / "results.csv", rows)
    images = [img for _, img in outcomes if img is not None]
    if images:
        write_pgm(out / "montage.pgm", montage(images))
    return rows


def export_transfer_matrix(cfg: ExperimentConfig, path) -> np.ndarray:
    """Build H for a config and save it (``.csv`` as re/im pairs, else ``.npy``)."""
    H = build_transfer_matrix(cfg.scene, AttenuationModel(cfg.attenuation), cfg.quantization_bits)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".csv":
        write_complex_csv(path, H)
    else:
        save_transfer_matrix(path, H)
    return H


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risimaging", description="RIS-aided RF imaging experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config")
    run.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or .)")
    run.add_argument("--seed", type=int)

    suite = sub.add_parser("suite", help="run a figure suite")
    suite.add_argument("name", choices=SUITES, metavar="name",
                       help=f"one of: {', '.join(SUITES)}")
    suite.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or .)")
    suite.add_argument("--seed", type=int, default=0)
    suite.add_argument("--threads", type=int, default=1)

    export = sub.add_parser("export-h", help="write the transfer matrix of a config")
    export.add_argument("config")
    export.add_argument("path")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            if args.seed is not None:
                cfg = ExperimentConfig(**{**cfg.__dict__, "seed": args.seed})
            run_dir = output_root(args.out) / (cfg.output or Path(args.config).stem)
            result = run_experiment(cfg, run_dir)
            print(f"{run_dir}: rmse={result.report.rmse:.4f} ssim={result.report.ssim:.4f}")
        elif args.command == "suite":
            if args.threads < 1:
                parser.error("--threads must be >= 1")
            suite_dir = output_root(args.out) / args.name
            rows = run_suite(args.name, suite_dir, seed=args.seed, threads=args.threads)
            failed = sum(r["status"] != "ok" for r in rows)
            print(f"{suite_dir / 'results.csv'}: {len(rows)} rows, {failed} failed")
            return 1 if failed else 0
        else:
            cfg = ExperimentConfig.load(args.config)
            H = export_transfer_matrix(cfg, args.path)
            print(f"{args.path}: {H.shape[0]}x{H.shape[1]}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ReconstructionError as exc:
        print(f"reconstruction failed: {exc}", file=sys.stderr)
        return 3
    return 0
