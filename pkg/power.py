#!/usr/bin/env python3

import csv
from typing import Dict, Iterable, List

from sampler import READOUT_BIT_DEPTH
from utils import percent

POWER_CATEGORIES = ('io', 'adc', 'pixel', 'other', 'jpeg')


class PowerEntry:
    def __init__(self, category: str, baseline_mw: float, scales: bool):
        if baseline_mw < 0:
            raise ValueError(f"Baseline power of {category} cannot be negative")
        self.category: str = category
        self.baseline_mw: float = baseline_mw
        self.scales: bool = scales

    def __repr__(self):
        rule = 'scales with compression' if self.scales else 'fixed'
        return f'PowerEntry({self.category}: {self.baseline_mw} mW, {rule})'


class PowerModel:
    """
    Baseline power of a sensor design by category. Categories marked as
    scaling shrink in proportion to the data removed on chip.
    """

    def __init__(self, name: str, entries: Dict[str, PowerEntry]):
        self.name = name
        self.entries = entries

    def __repr__(self):
        return f"PowerModel({self.name}, {self.baseline_total():.2f} mW)"

    def baseline_total(self) -> float:
        return sum(entry.baseline_mw for entry in self.entries.values())


class PowerBreakdown:
    def __init__(self, model_name: str, compression_ratio: float, breakdown_mw: Dict[str, float],
                 baseline_total_mw: float):
        self.model_name = model_name
        self.compression_ratio = compression_ratio
        self.breakdown_mw = breakdown_mw
        self.baseline_total_mw = baseline_total_mw

    def __repr__(self):
        return f"PowerBreakdown({self.model_name}, cr={self.compression_ratio:.4f}, " \
               f"{self.total_mw:.2f} mW, {self.savings_pct:.2f}% saved)"

    @property
    def total_mw(self) -> float:
        return sum(self.breakdown_mw.values())

    @property
    def savings_pct(self) -> float:
        return percent(self.baseline_total_mw - self.total_mw, self.baseline_total_mw)


def design1_power_model() -> PowerModel:
    return PowerModel('design 1', {
        'io': PowerEntry('io', 27.0, True),
        'adc': PowerEntry('adc', 60.0, True),
        'pixel': PowerEntry('pixel', 1.8, False),
        'other': PowerEntry('other', 4.2, False),
        'jpeg': PowerEntry('jpeg', 13.18, True),
    })


def design2_power_model() -> PowerModel:
    return PowerModel('design 2', {
        'io': PowerEntry('io', 70.0, True),
        'adc': PowerEntry('adc', 209.0, True),
        'pixel': PowerEntry('pixel', 23.0, False),
        'other': PowerEntry('other', 20.0, False),
        'jpeg': PowerEntry('jpeg', 386.3, True),
    })


def load_power_model_from_csv(filename: str, name: str = None) -> PowerModel:
    entries = {}
    with open(filename, newline='') as csvfile:
        reader = csv.reader(csvfile)
        next(reader)  # skip the title row
        for row in reader:
            if not row:
                continue
            category = row[0].strip().lower()
            if category not in POWER_CATEGORIES:
                raise ValueError(f"Unrecognised power category {category} in {filename}")
            if category in entries:
                raise ValueError(f"Power category {category} listed twice in {filename}")
            baseline_mw = float(row[1].strip())
            scales = row[2].strip().lower() == 'true'
            entries[category] = PowerEntry(category, baseline_mw, scales)
    if not entries:
        raise ValueError(f"No power entries in {filename}")
    return PowerModel(name if name is not None else filename, entries)


def compression_ratio(bit_depth: int) -> float:
    """
    Fraction of a full-width readout word removed on chip.
    """
    if not 1 <= bit_depth <= READOUT_BIT_DEPTH:
        raise ValueError(f"Bit depth must be in [1, {READOUT_BIT_DEPTH}], got {bit_depth}")
    return (READOUT_BIT_DEPTH - bit_depth) / READOUT_BIT_DEPTH


def estimate_power(model: PowerModel, cr: float) -> PowerBreakdown:
    """
    Scaled categories are multiplied by (1 - cr), the rest stay at baseline.
    The JPEG scaling approximates its switching activity only.
    """
    if not 0 <= cr < 1:
        raise ValueError(f"Compression ratio must be in [0, 1), got {cr}")
    breakdown = {}
    for category, entry in model.entries.items():
        breakdown[category] = entry.baseline_mw * (1.0 - cr) if entry.scales else entry.baseline_mw
    return PowerBreakdown(model.name, cr, breakdown, model.baseline_total())


def power_range_report(model: PowerModel, bit_depths: Iterable[int]) -> List[PowerBreakdown]:
    return [estimate_power(model, compression_ratio(d)) for d in bit_depths]


def write_power_csv(breakdowns: List[PowerBreakdown], filename: str):
    with open(filename, 'w', newline='') as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(['design', 'compression_ratio'] + list(POWER_CATEGORIES) + ['total_mw', 'savings_pct'])
        for b in breakdowns:
            writer.writerow([b.model_name, f"{b.compression_ratio:.4f}"]
                            + [f"{b.breakdown_mw.get(c, 0.0):.3f}" for c in POWER_CATEGORIES]
                            + [f"{b.total_mw:.3f}", f"{b.savings_pct:.2f}"])
