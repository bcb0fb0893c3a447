#!/usr/bin/env python3

import csv
import warnings
from typing import Dict, Tuple

import numpy as np

from image_core import Image
from sampler import SamplingSpec, to_working
from utils import farad_to_femtofarad, micron_to_metre, square_micron_to_square_metre

SIMULATED_CURRENT_RANGE_FA = (0.0, 1000.0)
GRID_CURRENTS_FA = np.arange(100.0, 1001.0, 100.0)
CALIBRATION_PRECISION_BITS = 8
GAIN_MAP_SUFFIX = '.gain.npy'


class PhotodiodeParams:
    """
    Junction parameters of the pixel photodiode.
    c_j0: zero-bias bottom capacitance density [mF/m^2]
    c_j0sw: zero-bias sidewall capacitance per length [F/m]
    v_j, v_jsw: built-in potentials [V]
    m, m_jsw: grading coefficients
    v_d: reverse bias magnitude [V]
    a_d: junction area [um^2]
    p_d: junction perimeter [um]
    """

    def __init__(self, c_j0: float, c_j0sw: float, v_j: float, v_jsw: float, m: float, m_jsw: float,
                 v_d: float, a_d: float, p_d: float):
        if c_j0 < 0 or c_j0sw < 0:
            raise ValueError("Junction capacitance densities cannot be negative")
        if v_j <= 0 or v_jsw <= 0:
            raise ValueError("Built-in potentials must be positive")
        if not (0 < m < 1) or not (0 < m_jsw < 1):
            raise ValueError(f"Grading coefficients must be in (0, 1), got m={m}, m_jsw={m_jsw}")
        if v_d < 0:
            raise ValueError("Bias is given as a reverse bias magnitude and cannot be negative")
        if a_d < 0 or p_d < 0:
            raise ValueError("Junction area and perimeter cannot be negative")
        self.c_j0 = c_j0
        self.c_j0sw = c_j0sw
        self.v_j = v_j
        self.v_jsw = v_jsw
        self.m = m
        self.m_jsw = m_jsw
        self.v_d = v_d
        self.a_d = a_d
        self.p_d = p_d

    def __repr__(self):
        return f"PhotodiodeParams(A={self.a_d} um^2, P={self.p_d} um, Vd={self.v_d} V)"

    def with_bias(self, v_d: float) -> 'PhotodiodeParams':
        return PhotodiodeParams(self.c_j0, self.c_j0sw, self.v_j, self.v_jsw, self.m, self.m_jsw,
                                v_d, self.a_d, self.p_d)


DEFAULT_PHOTODIODE = PhotodiodeParams(c_j0=1.067, c_j0sw=1.6e-10, v_j=0.8, v_jsw=0.65, m=0.41, m_jsw=0.35,
                                      v_d=1.8, a_d=45.76, p_d=27.5)

PHOTODIODE_FIELDS = ('c_j0', 'c_j0sw', 'v_j', 'v_jsw', 'm', 'm_jsw', 'v_d', 'a_d', 'p_d')


def load_photodiode_params_from_csv(filename: str) -> PhotodiodeParams:
    with open(filename, newline='') as csvfile:
        reader = csv.reader(csvfile)
        next(reader)  # skip the title row
        values = {}
        for row in reader:
            if not row:
                continue
            name = row[0].strip()
            if name not in PHOTODIODE_FIELDS:
                raise ValueError(f"Unrecognised photodiode parameter {name}")
            values[name] = float(row[1].strip())
    missing = [name for name in PHOTODIODE_FIELDS if name not in values]
    if missing:
        raise ValueError(f"Photodiode parameters missing from {filename}: {missing}")
    return PhotodiodeParams(**values)


def junction_capacitance(params: PhotodiodeParams) -> float:
    """
    Depletion capacitance of the photodiode [fF], bottom plus sidewall.
    The bias is a reverse bias magnitude so the denominators are (1 + V_d/v_j)^m.
    """
    bottom = params.c_j0 * 1e-3 * square_micron_to_square_metre(params.a_d) \
        / (1.0 + params.v_d / params.v_j) ** params.m
    sidewall = params.c_j0sw * micron_to_metre(params.p_d) \
        / (1.0 + params.v_d / params.v_jsw) ** params.m_jsw
    return farad_to_femtofarad(bottom + sidewall)


def merged_fill_factor(fill_factor: float) -> float:
    """
    Fill factor of a pixel built from two merged photodiodes sharing one readout,
    2f / (1 + f).
    """
    if not 0 < fill_factor <= 1:
        raise ValueError(f"Fill factor must be in (0, 1], got {fill_factor}")
    return 2 * fill_factor / (1 + fill_factor)


class PixelResponseModel:
    """
    Output voltage of the weighted-addition pixel as a quadratic surface in the
    two photocurrents [fA]:
    c0 + c1 p1 + c2 p2 + c3 p1^2 + c4 p1 p2 + c5 p2^2
    """

    def __init__(self, coeffs: Tuple[float, ...]):
        if len(coeffs) != 6:
            raise ValueError(f"A pixel response model has six coefficients, got {len(coeffs)}")
        if coeffs[0] <= 0:
            raise ValueError("The reset level c0 must be positive")
        if coeffs[1] >= 0 or coeffs[2] >= 0:
            raise ValueError("The output must drop with photocurrent, linear coefficients must be negative")
        self.coeffs = tuple(float(c) for c in coeffs)

    def __repr__(self):
        return "PixelResponseModel(" + ", ".join(f"{c:.4g}" for c in self.coeffs) + ")"

    def evaluate(self, p1, p2):
        c0, c1, c2, c3, c4, c5 = self.coeffs
        return c0 + c1 * p1 + c2 * p2 + c3 * p1 ** 2 + c4 * p1 * p2 + c5 * p2 ** 2

    @property
    def weight(self) -> float:
        return abs(self.coeffs[1]) / abs(self.coeffs[2])


STANDARD_PIXEL_MODEL = PixelResponseModel((1.037, -4.065e-5, -3.324e-5, -2.564e-9, -3.88e-9, -1.678e-9))


def pixel_response(p1, p2, model: PixelResponseModel = STANDARD_PIXEL_MODEL):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if np.any(p1 < 0) or np.any(p2 < 0):
        raise ValueError("Photocurrents cannot be negative")
    low, high = SIMULATED_CURRENT_RANGE_FA
    if np.any(p1 > high) or np.any(p2 > high) or np.any(p1 < low) or np.any(p2 < low):
        warnings.warn(f"Photocurrent outside the fitted {low:.0f}-{high:.0f} fA range, extrapolating",
                      RuntimeWarning)
    voltage = model.evaluate(p1, p2)
    return float(voltage) if voltage.ndim == 0 else voltage


def simulate_weight_grid(model: PixelResponseModel = STANDARD_PIXEL_MODEL, currents=GRID_CURRENTS_FA) -> np.ndarray:
    """
    Returns rows of (p1, p2, drop) over the Cartesian grid of currents, where
    drop is the voltage fall from the dark output at p1 = p2 = 0.
    """
    p1, p2 = np.meshgrid(currents, currents, indexing='ij')
    p1 = p1.ravel()
    p2 = p2.ravel()
    drop = pixel_response(0.0, 0.0, model) - pixel_response(p1, p2, model)
    return np.column_stack([p1, p2, drop])


def fit_weight(samples: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Least squares fit of the six coefficient quadratic surface to rows of
    (p1, p2, value). Returns the coefficients and the relative weight of the
    first photodiode, |c1| / |c2|.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ValueError(f"Expected rows of (p1, p2, value), got shape {samples.shape}")
    if samples.shape[0] < 6:
        raise ValueError(f"Need at least 6 samples to fit a quadratic surface, got {samples.shape[0]}")

    # fit in units of 1000 fA so the columns are comparable in size
    scale = 1000.0
    s1 = samples[:, 0] / scale
    s2 = samples[:, 1] / scale
    design = np.column_stack([np.ones_like(s1), s1, s2, s1 ** 2, s1 * s2, s2 ** 2])
    coeffs, _, rank, _ = np.linalg.lstsq(design, samples[:, 2], rcond=None)
    if rank < design.shape[1]:
        raise ValueError(f"Samples are rank deficient ({rank} < 6), cannot fit the quadratic surface")
    coeffs = coeffs / np.array([1.0, scale, scale, scale ** 2, scale ** 2, scale ** 2])
    if coeffs[2] == 0:
        raise ValueError("Fitted p2 coefficient is zero, weight is undefined")
    return coeffs, abs(coeffs[1]) / abs(coeffs[2])


def weighted_addition_curves(model: PixelResponseModel = STANDARD_PIXEL_MODEL, fixed_current: float = 100.0,
                             currents=GRID_CURRENTS_FA) -> Dict[str, np.ndarray]:
    """
    Voltage drop with one photodiode held at fixed_current while the other is swept.
    """
    currents = np.asarray(currents, dtype=np.float64)
    dark = pixel_response(0.0, 0.0, model)
    fixed = np.full_like(currents, fixed_current)
    return {
        'currents_fa': currents,
        'p1 swept': dark - pixel_response(currents, fixed, model),
        'p2 swept': dark - pixel_response(fixed, currents, model),
    }


class FpnConfig:
    """
    Fixed pattern noise: per-pixel relative gain spread and per-column offset
    spread [DN], drawn once from a seeded generator.
    """

    def __init__(self, column_offset_sigma: float = 0.0, pixel_gain_sigma: float = 0.0, seed: int = 0):
        if column_offset_sigma < 0 or pixel_gain_sigma < 0:
            raise ValueError("FPN sigmas cannot be negative")
        self.column_offset_sigma = column_offset_sigma
        self.pixel_gain_sigma = pixel_gain_sigma
        self.seed = seed

    def __repr__(self):
        return f"FpnConfig(offset sigma {self.column_offset_sigma}, gain sigma {self.pixel_gain_sigma}, seed {self.seed})"

    @property
    def enabled(self) -> bool:
        return self.column_offset_sigma > 0 or self.pixel_gain_sigma > 0


def draw_fpn(height: int, width: int, cfg: FpnConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns the (height, width) gain map and the per-column offsets.
    """
    rng = np.random.default_rng(cfg.seed)
    gains = 1.0 + cfg.pixel_gain_sigma * rng.standard_normal((height, width))
    offsets = cfg.column_offset_sigma * rng.standard_normal(width)
    return gains, offsets


def apply_fpn(img: Image, cfg: FpnConfig) -> Tuple[Image, np.ndarray]:
    gains, offsets = draw_fpn(img.height, img.width, cfg)
    if not cfg.enabled:
        return img, gains
    noisy = np.rint(gains * img.samples + offsets[None, :])
    noisy = np.clip(noisy, 0, img.max_value).astype(np.int64)
    return Image.from_array(noisy, img.bit_depth), gains


def calibrated_spec(gain_map: np.ndarray, base_spec: SamplingSpec,
                    precision_bits: int = CALIBRATION_PRECISION_BITS) -> SamplingSpec:
    """
    Folds a measured per-pixel gain map into the sampling block so the
    reconstruction sees the weights the sensor actually applied.
    """
    gain_map = np.asarray(gain_map, dtype=np.float64)
    if gain_map.ndim != 2:
        raise ValueError(f"Gain map must be 2-D, got shape {gain_map.shape}")
    if np.any(gain_map <= 0):
        raise ValueError("Gain map contains zero or negative gains, the pixel cannot be calibrated")
    working = to_working(gain_map, base_spec.orientation)
    n_rows, width = working.shape
    if n_rows % base_spec.b != 0:
        raise ValueError(f"Gain map dimension {n_rows} is not divisible by the block width {base_spec.b}")

    grouped = working.reshape(n_rows // base_spec.b, 1, base_spec.b, width)
    weights = base_spec.block[None, :, :, None] * grouped
    weight_map = np.rint(weights * 2 ** precision_bits).astype(np.int64)
    return SamplingSpec('custom', base_spec.block, base_spec.orientation, weight_map, precision_bits)


def save_gain_map(gain_map: np.ndarray, path: str) -> str:
    """
    Stores the gain map next to the measurement file at path. Returns the
    file written.
    """
    filename = path + GAIN_MAP_SUFFIX
    np.save(filename, np.asarray(gain_map, dtype=np.float64))
    return filename


def load_gain_map(path: str) -> np.ndarray:
    filename = path + GAIN_MAP_SUFFIX
    try:
        gain_map = np.load(filename)
    except FileNotFoundError:
        raise ValueError(f"{path}: no gain map {filename}, sample with fixed pattern noise enabled to calibrate")
    if gain_map.ndim != 2:
        raise ValueError(f"{filename}: gain map must be 2-D, got shape {gain_map.shape}")
    return gain_map


def cds(reset_frame: Image, signal_frame: Image) -> Image:
    """
    Correlated double sampling: the signal is the fall from the reset level.
    """
    if reset_frame.shape != signal_frame.shape:
        raise ValueError(f"Dimension mismatch: {reset_frame.shape} vs {signal_frame.shape}")
    depth = max(reset_frame.bit_depth, signal_frame.bit_depth)
    difference = np.clip(reset_frame.samples - signal_frame.samples, 0, None)
    return Image.from_array(difference, depth)
