#!/usr/bin/env python3

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pywt
from dtcwt.numpy import Pyramid, Transform2d

DEFAULT_DWT_WAVELET = 'bior4.4'  # CDF 9/7
ORTHOGONAL_DWT_WAVELET = 'db2'
DWT_MODE = 'periodization'
DWT_ORIENTATIONS = ('horizontal', 'vertical', 'diagonal')

DDWT_BIORT = 'near_sym_a'
DDWT_QSHIFT = 'qshift_a'
DDWT_ORIENTATIONS_DEG = (15, 45, 75, 105, 135, 165)
DDWT_TREES = ('real', 'imag')

BASES = ('dwt', 'ddwt')
MAD_TO_SIGMA = 0.6745


class SubbandSet:
    """
    Wavelet coefficients of one image.
    approximation: the coarsest lowpass band, never thresholded.
    details: one dict per level, finest level first, mapping
        (orientation, tree) to a real coefficient grid. DWT bands use
        tree 'real' only; DDWT bands come in real and imaginary trees.
    """

    def __init__(self, basis: str, levels: int, approximation: np.ndarray,
                 details: List[Dict[Tuple[Union[str, int], str], np.ndarray]],
                 shape: Tuple[int, int], wavelet: Optional[str] = None):
        if basis not in BASES:
            raise ValueError(f"Unrecognised basis {basis}. Expected one of {BASES}")
        if len(details) != levels:
            raise ValueError(f"Expected {levels} detail levels, got {len(details)}")
        self.basis = basis
        self.levels = levels
        self.approximation = approximation
        self.details = details
        self.shape = shape
        self.wavelet = wavelet

    def __repr__(self):
        return f"SubbandSet({self.basis}, {self.levels} levels, {self.coefficient_count()} coefficients)"

    @property
    def redundancy(self) -> int:
        return 1 if self.basis == 'dwt' else 4

    def coefficient_count(self) -> int:
        count = self.approximation.size
        for level in self.details:
            count += sum(band.size for band in level.values())
        return count

    def bands(self, level: int) -> Dict[Tuple[Union[str, int], str], np.ndarray]:
        """
        Detail bands of one level. Level 0 is the finest, levels - 1 the coarsest.
        """
        return self.details[level]

    def map_details(self, func: Callable[[int, np.ndarray], np.ndarray]) -> 'SubbandSet':
        """
        Returns a copy with func(level, band) applied to every detail band.
        """
        details = [{key: func(level, band) for key, band in bands.items()}
                   for level, bands in enumerate(self.details)]
        return SubbandSet(self.basis, self.levels, self.approximation.copy(), details, self.shape, self.wavelet)


def default_levels(shape: Tuple[int, int]) -> int:
    return max(1, int(math.log2(min(shape))) - 4)


def _check_divisible(x: np.ndarray, levels: int):
    if x.ndim != 2:
        raise ValueError(f"Expected a 2-D grid, got shape {x.shape}")
    if levels < 1:
        raise ValueError(f"Decomposition needs at least one level, got {levels}")
    step = 2 ** levels
    if x.shape[0] % step or x.shape[1] % step:
        raise ValueError(f"Grid of shape {x.shape} is not divisible by 2^{levels} = {step}")


def dwt_forward(x, levels: Optional[int] = None, wavelet: str = DEFAULT_DWT_WAVELET) -> SubbandSet:
    x = np.asarray(x, dtype=np.float64)
    if levels is None:
        levels = default_levels(x.shape)
    _check_divisible(x, levels)
    coeffs = pywt.wavedec2(x, wavelet, mode=DWT_MODE, level=levels)
    details = []
    # pywt orders coarsest first
    for bands in reversed(coeffs[1:]):
        details.append({(orientation, 'real'): band for orientation, band in zip(DWT_ORIENTATIONS, bands)})
    return SubbandSet('dwt', levels, coeffs[0], details, x.shape, wavelet)


def dwt_inverse(coeffs: SubbandSet) -> np.ndarray:
    if coeffs.basis != 'dwt':
        raise ValueError(f"Expected DWT coefficients, got {coeffs.basis}")
    pywt_coeffs = [coeffs.approximation]
    for bands in reversed(coeffs.details):
        pywt_coeffs.append(tuple(bands[(orientation, 'real')] for orientation in DWT_ORIENTATIONS))
    return pywt.waverec2(pywt_coeffs, coeffs.wavelet, mode=DWT_MODE)


def ddwt_forward(x, levels: Optional[int] = None) -> SubbandSet:
    """
    Dual-tree transform of a real grid. The real and imaginary parts of each
    of the six oriented subbands are kept as separate real bands, which
    gives exactly four coefficients per pixel.
    """
    x = np.asarray(x, dtype=np.float64)
    if levels is None:
        levels = default_levels(x.shape)
    _check_divisible(x, levels)
    pyramid = Transform2d(biort=DDWT_BIORT, qshift=DDWT_QSHIFT).forward(x, nlevels=levels)
    details = []
    for highpass in pyramid.highpasses:
        bands = {}
        for index in range(len(DDWT_ORIENTATIONS_DEG)):
            bands[(index, 'real')] = np.real(highpass[:, :, index]).copy()
            bands[(index, 'imag')] = np.imag(highpass[:, :, index]).copy()
        details.append(bands)
    return SubbandSet('ddwt', levels, np.asarray(pyramid.lowpass, dtype=np.float64), details, x.shape)


def ddwt_inverse(coeffs: SubbandSet) -> np.ndarray:
    if coeffs.basis != 'ddwt':
        raise ValueError(f"Expected DDWT coefficients, got {coeffs.basis}")
    highpasses = []
    for bands in coeffs.details:
        oriented = [bands[(index, 'real')] + 1j * bands[(index, 'imag')]
                    for index in range(len(DDWT_ORIENTATIONS_DEG))]
        highpasses.append(np.stack(oriented, axis=-1))
    pyramid = Pyramid(coeffs.approximation, tuple(highpasses))
    x = Transform2d(biort=DDWT_BIORT, qshift=DDWT_QSHIFT).inverse(pyramid)
    return np.asarray(x, dtype=np.float64)[:coeffs.shape[0], :coeffs.shape[1]]


def forward(x, basis: str, levels: Optional[int] = None) -> SubbandSet:
    if basis == 'dwt':
        return dwt_forward(x, levels)
    elif basis == 'ddwt':
        return ddwt_forward(x, levels)
    raise ValueError(f"Unrecognised basis {basis}. Expected one of {BASES}")


def inverse(coeffs: SubbandSet) -> np.ndarray:
    if coeffs.basis == 'dwt':
        return dwt_inverse(coeffs)
    return ddwt_inverse(coeffs)


def hard_threshold(coeffs: SubbandSet, tau: Union[float, Sequence[float]]) -> SubbandSet:
    """
    Zeroes detail coefficients with magnitude below tau. tau is a scalar or
    one threshold per level, finest first.
    """
    if np.isscalar(tau):
        taus = [float(tau)] * coeffs.levels
    else:
        taus = [float(t) for t in tau]
        if len(taus) != coeffs.levels:
            raise ValueError(f"Expected {coeffs.levels} per-level thresholds, got {len(taus)}")
    if any(t < 0 for t in taus):
        raise ValueError("Thresholds cannot be negative")
    return coeffs.map_details(lambda level, band: np.where(np.abs(band) < taus[level], 0.0, band))


def estimate_sigma(coeffs: SubbandSet) -> float:
    """
    Robust noise scale from the finest detail level, median(|c|) / 0.6745.
    """
    if coeffs.levels == 0 or not coeffs.details[0]:
        raise ValueError("No finest-level detail bands to estimate the noise from")
    finest = np.concatenate([band.ravel() for band in coeffs.details[0].values()])
    if finest.size == 0:
        raise ValueError("Finest-level detail bands are empty")
    return float(np.median(np.abs(finest)) / MAD_TO_SIGMA)


def orientation_energies(coeffs: SubbandSet, level: int = 0) -> np.ndarray:
    """
    Fraction of the detail energy at a level held by each orientation.
    """
    bands = coeffs.details[level]
    orientations = DWT_ORIENTATIONS if coeffs.basis == 'dwt' else range(len(DDWT_ORIENTATIONS_DEG))
    trees = ('real',) if coeffs.basis == 'dwt' else DDWT_TREES
    energies = np.array([sum(np.sum(bands[(o, t)] ** 2) for t in trees) for o in orientations])
    total = energies.sum()
    if total == 0:
        return energies
    return energies / total
