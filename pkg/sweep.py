#!/usr/bin/env python3

import csv
import itertools
import os
from typing import Dict, List, Optional, Sequence, Tuple, Union

from codec import LOSSLESS, parse_codec_mode
from pipeline import PipelineConfig, RunReport, emit_report, load_inputs, run_pipeline, with_cell


class SweepCell:
    def __init__(self, kind: str, quality: Union[int, str], bitdepth: int):
        """
        kind: Sampling kind of this cell, binary or non_binary
        quality: JPEG quality factor, or lossless
        bitdepth: Measurement bit depth after truncation
        report: The pipeline report for the cell once it has run
        """
        self.kind: str = kind
        self.quality: Union[int, str] = quality
        self.bitdepth: int = bitdepth
        self._report: Optional[RunReport] = None
        self._success: Optional[bool] = None
        self._error_msg: str = ""

    def __repr__(self):
        return f"SweepCell({self.kind}, q={self.quality}, {self.bitdepth} bit)"

    @property
    def key(self) -> Tuple[str, int, int]:
        # lossless sorts after every quality
        quality = 101 if self.quality == LOSSLESS else self.quality
        return self.kind, quality, -self.bitdepth

    @property
    def report(self) -> Optional[RunReport]:
        return self._report

    @report.setter
    def report(self, value: Optional[RunReport]):
        self._report = value

    @property
    def success(self) -> Optional[bool]:
        return self._success

    @success.setter
    def success(self, value: Optional[bool]):
        self._success = value

    @property
    def error_msg(self) -> str:
        return self._error_msg

    @error_msg.setter
    def error_msg(self, value: str):
        self._error_msg = value


def grid_cells(kinds: Sequence[str], qualities: Sequence[Union[int, str]], bitdepths: Sequence[int]) -> List[SweepCell]:
    return [SweepCell(kind, parse_codec_mode(quality), bitdepth)
            for kind, quality, bitdepth in itertools.product(kinds, qualities, bitdepths)]


class SweepRunner:
    def __init__(self, cells: List[SweepCell]):
        if not cells:
            raise ValueError("A sweep needs at least one cell")
        self._cells = sorted(cells, key=lambda c: c.key)

    @property
    def cells(self) -> List[SweepCell]:
        return self._cells

    def run(self, base_cfg: PipelineConfig, images=None, print_debug_messages: bool = False) -> List[SweepCell]:
        """
        Runs the pipeline for every cell over the same images. A failing cell
        records its error and the sweep moves on.
        """
        if images is None:
            images = load_inputs(base_cfg)
        baseline_cache: Dict[Tuple[str, str], int] = {}
        for cell in self._cells:
            if print_debug_messages:
                print(f"  {cell}")
            try:
                cell_cfg = with_cell(base_cfg, cell.kind, cell.quality, cell.bitdepth)
                cell.report = run_pipeline(cell_cfg, images, baseline_cache,
                                           print_debug_messages=print_debug_messages)
                cell.success = True
            except ValueError as e:
                cell.success = False
                cell.error_msg = f"{e}"
        return self._cells


def sweep_runner_from_csv(filename: str) -> SweepRunner:
    cells = []
    with open(filename, newline='') as csvfile:
        reader = csv.reader(csvfile)
        next(reader)  # skip the header row
        for row in reader:
            if not row:
                continue
            kind = row[0].strip().lower()
            if kind not in ('binary', 'non_binary'):
                raise ValueError(f"Unrecognised sampling kind {kind} in sweep file {filename}")
            cells.append(SweepCell(kind, parse_codec_mode(row[1].strip()), int(row[2])))
    return SweepRunner(cells)


def successful_reports(cells: Sequence[SweepCell], kind: Optional[str] = None) -> List[RunReport]:
    return [c.report for c in cells if c.success and c.report.rows and (kind is None or c.kind == kind)]


def report_sweep(output_dir: str, cells: Sequence[SweepCell]) -> List[str]:
    """
    Writes one aggregate CSV per sampling kind, the two comparison plots and
    a list of the failed cells. Returns the files written.
    """
    written = []
    for kind in sorted({c.kind for c in cells}):
        reports = successful_reports(cells, kind)
        if not reports:
            continue
        filename = os.path.join(output_dir, f"sweep_{kind}.csv")
        emit_report(reports, filename, 'csv')
        written.append(filename)

    lossy = [r for r in successful_reports(cells) if r.quality != LOSSLESS]
    if lossy:
        for metric in ('normalized_size', 'psnr_db'):
            filename = os.path.join(output_dir, f"{metric}_vs_quality.svg")
            emit_report(lossy, filename, 'svg', metric)
            written.append(filename)

    failed = [c for c in cells if not c.success]
    if failed:
        filename = os.path.join(output_dir, "failed_cells.csv")
        with open(filename, 'w', newline='') as csvfile:
            writer = csv.writer(csvfile, lineterminator='\n')
            writer.writerow(['kind', 'quality', 'bitdepth', 'error'])
            for c in failed:
                writer.writerow([c.kind, c.quality, c.bitdepth, c.error_msg])
        written.append(filename)
    return written


def audit_size_monotonicity(cells: Sequence[SweepCell]) -> List[str]:
    """
    Trend checks over the mean rows of a sweep: at a fixed bit depth the size
    strictly increases and the PSNR does not fall with quality, and at a
    fixed quality the size decreases and the PSNR does not rise as bits are
    truncated. Returns a description of every violation.
    """
    reports = successful_reports(cells)
    violations = []

    by_depth: Dict[Tuple[str, int], List[RunReport]] = {}
    by_quality: Dict[Tuple[str, Union[int, str]], List[RunReport]] = {}
    for r in reports:
        if r.quality != LOSSLESS:
            by_depth.setdefault((r.kind, r.bitdepth), []).append(r)
        by_quality.setdefault((r.kind, r.quality), []).append(r)

    for (kind, bitdepth), group in sorted(by_depth.items()):
        group.sort(key=lambda r: r.quality)
        for lower, higher in zip(group, group[1:]):
            if not higher.mean_normalized_size > lower.mean_normalized_size:
                violations.append(f"{kind} {bitdepth}-bit: size at q{higher.quality} "
                                  f"({higher.mean_normalized_size:.2f}) not above q{lower.quality} "
                                  f"({lower.mean_normalized_size:.2f})")
            if higher.mean_psnr_db < lower.mean_psnr_db:
                violations.append(f"{kind} {bitdepth}-bit: PSNR at q{higher.quality} "
                                  f"({higher.mean_psnr_db:.2f}) below q{lower.quality} ({lower.mean_psnr_db:.2f})")

    for (kind, quality), group in sorted(by_quality.items(), key=lambda item: str(item[0])):
        group.sort(key=lambda r: -r.bitdepth)
        for deeper, shallower in zip(group, group[1:]):
            if not shallower.mean_normalized_size < deeper.mean_normalized_size:
                violations.append(f"{kind} q{quality}: size at {shallower.bitdepth} bits "
                                  f"({shallower.mean_normalized_size:.2f}) not below {deeper.bitdepth} bits "
                                  f"({deeper.mean_normalized_size:.2f})")
            if shallower.mean_psnr_db > deeper.mean_psnr_db:
                violations.append(f"{kind} q{quality}: PSNR at {shallower.bitdepth} bits "
                                  f"({shallower.mean_psnr_db:.2f}) above {deeper.bitdepth} bits "
                                  f"({deeper.mean_psnr_db:.2f})")
    return violations


def audit_kind_convergence(cells: Sequence[SweepCell]) -> List[Tuple[Union[int, str], int, float, float]]:
    """
    For every (quality, bitdepth) run with both sampling kinds, the absolute
    gaps between the non-binary and binary mean size and PSNR, ordered by
    quality then by decreasing bit depth.
    """
    means = {(r.kind, r.quality, r.bitdepth): r for r in successful_reports(cells)}
    gaps = []
    for (kind, quality, bitdepth), non_binary in means.items():
        if kind != 'non_binary' or ('binary', quality, bitdepth) not in means:
            continue
        binary = means[('binary', quality, bitdepth)]
        gaps.append((quality, bitdepth,
                     abs(non_binary.mean_normalized_size - binary.mean_normalized_size),
                     abs(non_binary.mean_psnr_db - binary.mean_psnr_db)))
    gaps.sort(key=lambda g: (101 if g[0] == LOSSLESS else g[0], -g[1]))
    return gaps


def write_convergence_csv(gaps: Sequence[Tuple[Union[int, str], int, float, float]], filename: str):
    with open(filename, 'w', newline='') as csvfile:
        writer = csv.writer(csvfile, lineterminator='\n')
        writer.writerow(['quality', 'bitdepth', 'size_gap', 'psnr_gap_db'])
        for quality, bitdepth, size_gap, psnr_gap in gaps:
            writer.writerow([quality, bitdepth, f"{size_gap:.2f}", f"{psnr_gap:.2f}"])
