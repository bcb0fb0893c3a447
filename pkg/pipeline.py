#!/usr/bin/env python3

import copy
import csv
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from codec import LOSSLESS, decode, encode, normalized_size, parse_codec_mode
from image_core import Image, RgbImage, load_image, load_rgb_image, psnr, save_image, split_planes, synthetic_scene
from pixel_model import FpnConfig, apply_fpn, calibrated_spec
from plot_helpers import line_plot_svg
from reconstruct import SplConfig, spl_reconstruct
from sampler import (ORIENTATIONS, image_to_sampled, onchip_compression, sample, sampled_to_image,
                     save_sampled, spec_from_kind, truncate_sampled)

REPORT_HEADER = ['quality', 'bitdepth', 'normalized_size', 'psnr_db', 'onchip_compression_pct']
BASELINE_QUALITY = 75
INPUT_FORMATS = ('pgm8', 'pgm16', 'ppm')
PLANE_NAMES = ('red', 'green', 'blue')


class PipelineConfig:
    def __init__(self):
        self.input_paths: List[str] = []
        self.input_format: str = 'pgm8'
        self.synthetic_images: int = 5
        self.synthetic_size: int = 64
        self.kind: str = 'non_binary'
        self.orientation: str = 'rows'
        self.truncated_bits: int = 0
        self.codec_mode: Union[int, str] = LOSSLESS
        self.depth_scaled_tables: bool = False
        self.spl: SplConfig = SplConfig()
        self.fpn: FpnConfig = FpnConfig()
        self.calibrate_fpn: bool = False
        self.output_dir: str = 'output'
        self.save_artifacts: bool = False

    def __repr__(self):
        return f"PipelineConfig({self.kind}, {self.truncated_bits} truncated, codec {self.codec_mode}, {self.spl})"

    def validate(self):
        if self.kind not in ('binary', 'non_binary'):
            raise ValueError(f"Pipeline sampling kind must be binary or non_binary, got {self.kind}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"Unrecognised orientation {self.orientation}")
        if self.input_format not in INPUT_FORMATS:
            raise ValueError(f"Unrecognised input format {self.input_format}. Expected one of {INPUT_FORMATS}")
        native = self.spec().native_bit_depth()
        if not 0 <= self.truncated_bits < native:
            raise ValueError(f"truncated bits must be in [0, {native}) for {self.kind} sampling, "
                             f"got {self.truncated_bits}")
        self.codec_mode = parse_codec_mode(self.codec_mode)
        if not self.input_paths and self.synthetic_images < 1:
            raise ValueError("No input images and no synthetic images requested")

    def spec(self):
        return spec_from_kind(self.kind, self.orientation)

    @property
    def bit_depth(self) -> int:
        return self.spec().native_bit_depth() - self.truncated_bits

    @bit_depth.setter
    def bit_depth(self, value: int):
        self.truncated_bits = self.spec().native_bit_depth() - value


# name in the config file -> (attribute path, type)
CONFIG_ENTRIES = {
    'input paths': ('input_paths', 'string'),
    'input format': ('input_format', 'string'),
    'synthetic images': ('synthetic_images', 'integer'),
    'synthetic size': ('synthetic_size', 'integer'),
    'sampling kind': ('kind', 'string'),
    'orientation': ('orientation', 'string'),
    'truncated bits': ('truncated_bits', 'integer'),
    'codec mode': ('codec_mode', 'string'),
    'depth scaled tables': ('depth_scaled_tables', 'boolean'),
    'spl lambda': ('spl.lam', 'number'),
    'spl max iters': ('spl.max_iters', 'integer'),
    'spl epsilon': ('spl.epsilon', 'number'),
    'spl basis': ('spl.basis', 'string'),
    'spl levels': ('spl.levels', 'integer'),
    'fpn column offset sigma': ('fpn.column_offset_sigma', 'number'),
    'fpn pixel gain sigma': ('fpn.pixel_gain_sigma', 'number'),
    'fpn seed': ('fpn.seed', 'integer'),
    'fpn calibrate': ('calibrate_fpn', 'boolean'),
    'output dir': ('output_dir', 'string'),
    'save artifacts': ('save_artifacts', 'boolean'),
}


def parse_config_value(value: str, value_type: str, filename: str = '') -> Any:
    value_type = value_type.strip().lower()
    value = value.strip()
    if value_type == "string":
        return value
    elif value_type == "number":
        return float(value)
    elif value_type == "integer":
        return int(value)
    elif value_type == "boolean":
        if value.lower() not in ("true", "false"):
            raise ValueError(f"Boolean value must be true or false, got '{value}' in config file {filename}.")
        return value.lower() == "true"
    raise ValueError(f"Unrecognised variable type {value_type} in config file {filename}.")


def apply_config_entry(cfg: PipelineConfig, name: str, value: Any):
    if name not in CONFIG_ENTRIES:
        raise ValueError(f"Unrecognised config entry '{name}'")
    path, _ = CONFIG_ENTRIES[name]
    if name == 'input paths':
        value = [p.strip() for p in str(value).split(';') if p.strip()]
    elif name == 'spl levels':
        value = None if value == 0 else value
    target = cfg
    *parents, attribute = path.split('.')
    for parent in parents:
        target = getattr(target, parent)
    setattr(target, attribute, value)


def load_config_from_csv(filename: str) -> PipelineConfig:
    cfg = PipelineConfig()
    with open(filename, newline='') as csvfile:
        reader = csv.reader(csvfile)
        next(reader)  # skip the title row
        for row in reader:
            if not row:
                continue
            name = row[0].strip().lower()
            if name not in CONFIG_ENTRIES:
                raise ValueError(f"Unrecognised config entry '{name}' in config file {filename}.")
            declared_type = row[2].strip().lower()
            expected_type = CONFIG_ENTRIES[name][1]
            if declared_type != expected_type and not (name == 'codec mode' and declared_type == 'integer'):
                raise ValueError(f"Config entry '{name}' must be of type {expected_type}, got {declared_type}")
            apply_config_entry(cfg, name, parse_config_value(row[1], declared_type, filename))
    # rebuild the nested configs so their own checks run
    cfg.spl = SplConfig(cfg.spl.lam, cfg.spl.max_iters, cfg.spl.epsilon, cfg.spl.basis, cfg.spl.levels)
    cfg.fpn = FpnConfig(cfg.fpn.column_offset_sigma, cfg.fpn.pixel_gain_sigma, cfg.fpn.seed)
    cfg.validate()
    return cfg


class ReportRow:
    def __init__(self, image: str, plane: str, quality: Union[int, str], bitdepth: int, normalized_size: float,
                 psnr_db: float, spl_iterations: int = 0, spl_converged: bool = True):
        self.image = image
        self.plane = plane
        self.quality = quality
        self.bitdepth = bitdepth
        self.normalized_size = normalized_size
        self.psnr_db = psnr_db
        self.onchip_compression_pct = onchip_compression(bitdepth)
        self.spl_iterations = spl_iterations
        self.spl_converged = spl_converged

    def __repr__(self):
        return f"ReportRow({self.image}/{self.plane}, q={self.quality}, {self.bitdepth} bit, " \
               f"size {self.normalized_size:.2f}%, {format_psnr(self.psnr_db)} dB)"

    def csv_fields(self) -> List[str]:
        return [str(self.quality), str(self.bitdepth), f"{self.normalized_size:.2f}", format_psnr(self.psnr_db),
                f"{self.onchip_compression_pct:.2f}"]


class RunReport:
    """
    One row per image plane for one (kind, quality, bitdepth) configuration.
    """

    def __init__(self, kind: str, quality: Union[int, str], bitdepth: int):
        self.kind = kind
        self.quality = quality
        self.bitdepth = bitdepth
        self.rows: List[ReportRow] = []

    def __repr__(self):
        return f"RunReport({self.kind}, q={self.quality}, {self.bitdepth} bit, {len(self.rows)} rows)"

    @property
    def mean_normalized_size(self) -> float:
        if not self.rows:
            raise ValueError("Empty report has no mean")
        return float(np.mean([r.normalized_size for r in self.rows]))

    @property
    def mean_psnr_db(self) -> float:
        if not self.rows:
            raise ValueError("Empty report has no mean")
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def onchip_compression_pct(self) -> float:
        return onchip_compression(self.bitdepth)

    def aggregate_row(self) -> ReportRow:
        return ReportRow('mean', 'all', self.quality, self.bitdepth, self.mean_normalized_size, self.mean_psnr_db,
                         max(r.spl_iterations for r in self.rows), all(r.spl_converged for r in self.rows))


def format_psnr(value: float) -> str:
    return 'inf' if math.isinf(value) else f"{value:.2f}"


def load_inputs(cfg: PipelineConfig) -> List[Tuple[str, Union[Image, RgbImage]]]:
    if not cfg.input_paths:
        return [(f"synthetic_{seed}", synthetic_scene(cfg.synthetic_size, cfg.synthetic_size, seed))
                for seed in range(cfg.synthetic_images)]
    images = []
    for path in cfg.input_paths:
        name = os.path.splitext(os.path.basename(path))[0]
        if cfg.input_format == 'ppm':
            images.append((name, load_rgb_image(path)))
        else:
            images.append((name, load_image(path, cfg.input_format)))
    return images


def run_plane(img: Image, name: str, plane: str, cfg: PipelineConfig,
              baseline_cache: Optional[Dict[Tuple[str, str], int]] = None,
              artifact_dir: Optional[str] = None, print_debug_messages: bool = False) -> ReportRow:
    """
    Samples, truncates, codes and reconstructs one 8-bit plane and scores it
    against the raw plane coded at the baseline quality.
    """
    key = (name, plane)
    if baseline_cache is not None and key in baseline_cache:
        baseline_size = baseline_cache[key]
    else:
        baseline_size = encode(img, BASELINE_QUALITY).size_bytes
        if baseline_cache is not None:
            baseline_cache[key] = baseline_size

    spec = cfg.spec()
    noisy, gains = apply_fpn(img, cfg.fpn)
    sampled = truncate_sampled(sample(noisy, spec), cfg.truncated_bits)
    coded = encode(sampled_to_image(sampled), cfg.codec_mode, cfg.depth_scaled_tables)
    received = image_to_sampled(decode(coded), spec, sampled.truncated_bits)

    recon_spec = calibrated_spec(gains, spec) if cfg.calibrate_fpn and cfg.fpn.enabled else spec
    recon, trace = spl_reconstruct(received, recon_spec, cfg.spl, print_debug_messages)

    if artifact_dir is not None:
        stem = os.path.join(artifact_dir, f"{name}_{plane}")
        save_sampled(received, stem + "_sampled.raw")
        save_image(recon, stem + "_recon.pgm", 'pgm8')

    row = ReportRow(name, plane, cfg.codec_mode, sampled.bit_depth, normalized_size(coded, baseline_size),
                    psnr(img, recon), trace.iterations, trace.converged)
    if print_debug_messages:
        print(f"    {row}")
    return row


def run_pipeline(cfg: PipelineConfig, images: Optional[Sequence[Tuple[str, Union[Image, RgbImage]]]] = None,
                 baseline_cache: Optional[Dict[Tuple[str, str], int]] = None, artifact_dir: Optional[str] = None,
                 print_debug_messages: bool = False) -> RunReport:
    cfg.validate()
    if images is None:
        images = load_inputs(cfg)
    report = RunReport(cfg.kind, cfg.codec_mode, cfg.bit_depth)
    for name, img in images:
        planes = zip(PLANE_NAMES, split_planes(img)) if isinstance(img, RgbImage) else [('gray', img)]
        for plane, plane_img in planes:
            try:
                report.rows.append(run_plane(plane_img, name, plane, cfg, baseline_cache, artifact_dir,
                                             print_debug_messages))
            except ValueError as e:
                raise ValueError(f"{name} ({plane}): {e}") from e
    return report


def with_cell(cfg: PipelineConfig, kind: str, quality: Union[int, str], bitdepth: int) -> PipelineConfig:
    cell_cfg = copy.deepcopy(cfg)
    cell_cfg.kind = kind
    cell_cfg.codec_mode = parse_codec_mode(quality)
    cell_cfg.bit_depth = bitdepth
    return cell_cfg


def _as_report_list(reports: Union[RunReport, Sequence[RunReport]]) -> List[RunReport]:
    reports = [reports] if isinstance(reports, RunReport) else list(reports)
    if not reports or all(not r.rows for r in reports):
        raise ValueError("Cannot emit an empty report")
    return reports


def emit_report(reports: Union[RunReport, Sequence[RunReport]], filename: str, format: str = 'csv',
                metric: str = 'psnr_db'):
    """
    csv: one report gives one row per image plane, several reports give one
    mean row each. svg: the metric against quality, one line per kind and
    bit depth. Lossless rows have no quality and are left out of plots.
    """
    reports = _as_report_list(reports)
    if format == 'csv':
        rows = reports[0].rows if len(reports) == 1 else [r.aggregate_row() for r in reports if r.rows]
        with open(filename, 'w', newline='') as csvfile:
            writer = csv.writer(csvfile, lineterminator='\n')
            writer.writerow(REPORT_HEADER)
            for row in rows:
                writer.writerow(row.csv_fields())
    elif format == 'svg':
        if metric not in ('psnr_db', 'normalized_size'):
            raise ValueError(f"Cannot plot {metric}, expected psnr_db or normalized_size")
        series = {}
        for report in reports:
            if report.quality == LOSSLESS or not report.rows:
                continue
            label = f"{report.kind} {report.bitdepth}-bit"
            value = report.mean_psnr_db if metric == 'psnr_db' else report.mean_normalized_size
            series.setdefault(label, []).append((report.quality, value))
        if not series:
            raise ValueError("No lossy reports to plot against quality")
        series = {label: tuple(zip(*sorted(points))) for label, points in sorted(series.items())}
        y_label = 'PSNR (dB)' if metric == 'psnr_db' else 'Normalized size (%)'
        line_plot_svg(series, filename, f"{y_label} vs JPEG quality", 'JPEG quality', y_label)
    else:
        raise ValueError(f"Unrecognised report format {format}. Expected csv or svg")
