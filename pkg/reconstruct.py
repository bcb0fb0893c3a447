#!/usr/bin/env python3

import csv
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

import transforms
from image_core import Image
from sampler import SampledImage, SamplingSpec, apply_weights, from_working, to_working

OUTPUT_BIT_DEPTH = 8


class SplConfig:
    """
    lam: threshold multiplier, tau = lam * estimated noise scale.
    max_iters: iteration cap.
    epsilon: stop once successive D values differ by less than this.
    basis: dwt or ddwt.
    levels: decomposition depth, None picks it from the image size.
    """

    def __init__(self, lam: float = 6.0, max_iters: int = 200, epsilon: float = 1e-4, basis: str = 'ddwt',
                 levels: Optional[int] = None):
        if lam <= 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        if max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {max_iters}")
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        if basis not in transforms.BASES:
            raise ValueError(f"Unrecognised basis {basis}. Expected one of {transforms.BASES}")
        if levels is not None and levels < 1:
            raise ValueError(f"levels must be at least 1, got {levels}")
        self.lam = lam
        self.max_iters = max_iters
        self.epsilon = epsilon
        self.basis = basis
        self.levels = levels

    def __repr__(self):
        return f"SplConfig(lambda={self.lam}, max_iters={self.max_iters}, epsilon={self.epsilon}, " \
               f"basis={self.basis}, levels={self.levels})"


class SplState:
    def __init__(self, x_current: np.ndarray):
        self.x_current = x_current
        self.d_current = 0.0
        self.d_previous = 0.0
        self.iteration = 0

    def __repr__(self):
        return f"SplState(iteration {self.iteration}, D={self.d_current:.3e})"

    def advance(self, x_next: np.ndarray):
        self.d_previous = self.d_current
        self.d_current = float(np.linalg.norm(x_next - self.x_current) / math.sqrt(x_next.size))
        self.x_current = x_next
        self.iteration += 1


class SplTrace:
    """
    Per-iteration record of a reconstruction: (iteration, D, measurement residual).
    """

    def __init__(self):
        self.rows: List[Tuple[int, float, float]] = []
        self.converged = False

    def __repr__(self):
        state = 'converged' if self.converged else 'not converged'
        return f"SplTrace({self.iterations} iterations, {state})"

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def append(self, iteration: int, d: float, residual: float):
        self.rows.append((iteration, d, residual))


class Backend:
    """
    The unit-norm back-end sampling operator.
    weights: (groups, m, b, width) with groups and width of 1 when one block
        is shared by the whole image. Each row has unit Euclidean norm.
    norms: (groups, m, width) front-end row norms the raw measurements are divided by.
    """

    def __init__(self, weights: np.ndarray, norms: np.ndarray, orientation: str):
        self.weights = weights
        self.norms = norms
        self.orientation = orientation

    def __repr__(self):
        return f"Backend({self.m}x{self.b}, {self.orientation})"

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @property
    def b(self) -> int:
        return self.weights.shape[2]

    @property
    def block(self) -> np.ndarray:
        """
        The m x b back-end block, for operators shared by the whole image.
        """
        if self.weights.shape[0] != 1 or self.weights.shape[3] != 1:
            raise ValueError("Back-end weights vary per pixel, there is no single block")
        return self.weights[0, :, :, 0]

    def _check_rows(self, n_rows: int, width: int):
        if n_rows % self.b != 0:
            raise ValueError(f"Dimension {n_rows} is not divisible by the block width {self.b}")
        groups, width_map = self.weights.shape[0], self.weights.shape[3]
        if (groups != 1 and groups * self.b != n_rows) or (width_map != 1 and width_map != width):
            raise ValueError(f"Back-end weights of shape {self.weights.shape} do not cover {n_rows}x{width}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        working = to_working(x, self.orientation)
        self._check_rows(*working.shape)
        return from_working(apply_weights(working, self.weights, self.b), self.orientation)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        working = to_working(y, self.orientation)
        n_rows, width = working.shape
        if n_rows % self.m != 0:
            raise ValueError(f"Measurement dimension {n_rows} is not divisible by {self.m}")
        self._check_rows(n_rows // self.m * self.b, width)
        yg = working.reshape(n_rows // self.m, self.m, width)
        x = np.sum(self.weights * yg[:, :, None, :], axis=1)
        return from_working(x.reshape(-1, width), self.orientation)

    def scale_measurements(self, y: np.ndarray) -> np.ndarray:
        working = to_working(np.asarray(y, dtype=np.float64), self.orientation)
        n_rows, width = working.shape
        scaled = working.reshape(n_rows // self.m, self.m, width) / self.norms
        return from_working(scaled.reshape(n_rows, width), self.orientation)


def backend_of(spec: SamplingSpec) -> Backend:
    """
    Divides every front-end row by its Euclidean norm.
    """
    weights = spec.real_weights()
    norms = np.sqrt(np.sum(weights ** 2, axis=2))
    if np.any(norms == 0):
        raise ValueError("Sampling block has an all-zero row, cannot normalise")
    return Backend(weights / norms[:, :, None, :], norms, spec.orientation)


def recentre_measurements(sampled: SampledImage) -> np.ndarray:
    """
    Maps truncated measurements back to the middle of the interval of values
    that truncate to them.
    """
    samples = sampled.samples.astype(np.float64)
    k = sampled.truncated_bits
    if k == 0:
        return samples
    return samples * 2 ** k + 2 ** (k - 1)


def initialize(y: np.ndarray, backend: Backend) -> np.ndarray:
    return backend.adjoint(np.asarray(y, dtype=np.float64))


def landweber_step(x: np.ndarray, y: np.ndarray, backend: Backend) -> np.ndarray:
    return x + backend.adjoint(y - backend.forward(x))


def measurement_residual(x: np.ndarray, y: np.ndarray, backend: Backend) -> float:
    y_norm = np.linalg.norm(y)
    if y_norm == 0:
        return float(np.linalg.norm(backend.forward(x)))
    return float(np.linalg.norm(y - backend.forward(x)) / y_norm)


def wiener3x3(x: np.ndarray) -> np.ndarray:
    """
    Adaptive Wiener filter over a 3x3 neighbourhood with symmetric borders.
    The noise power is the mean of the local variances.
    """
    x = np.asarray(x, dtype=np.float64)
    offset = x.mean()
    centred = x - offset
    local_mean = uniform_filter(centred, size=3, mode='reflect')
    local_var = np.maximum(uniform_filter(centred ** 2, size=3, mode='reflect') - local_mean ** 2, 0.0)
    noise = local_var.mean()
    denominator = np.maximum(local_var, noise)
    gain = np.divide(np.maximum(local_var - noise, 0.0), denominator,
                     out=np.zeros_like(denominator), where=denominator > 0)
    return local_mean + gain * (centred - local_mean) + offset


def usable_levels(shape: Tuple[int, int], requested: Optional[int] = None) -> int:
    """
    The requested depth (or the size based default) capped so that both
    dimensions stay divisible by 2^levels.
    """
    levels = requested if requested is not None else transforms.default_levels(shape)
    while levels > 0 and (shape[0] % 2 ** levels or shape[1] % 2 ** levels):
        levels -= 1
    if levels == 0:
        raise ValueError(f"Image of shape {shape} is not divisible by 2, cannot decompose")
    return levels


def spl_reconstruct(sampled: SampledImage, spec: Optional[SamplingSpec] = None, cfg: Optional[SplConfig] = None,
                    print_debug_messages: bool = False) -> Tuple[Image, SplTrace]:
    """
    Smoothed projected Landweber reconstruction of the 8-bit source image.
    Each iteration Wiener-smooths the estimate, projects it onto the
    measurements, hard-thresholds it in the wavelet basis and projects again.
    A run that hits max_iters returns its last iterate with the trace marked
    as not converged.
    """
    spec = spec if spec is not None else sampled.spec
    cfg = cfg if cfg is not None else SplConfig()
    if (spec.m, spec.b, spec.orientation) != (sampled.spec.m, sampled.spec.b, sampled.spec.orientation):
        raise ValueError(f"Measurements taken with {sampled.spec} cannot be reconstructed with {spec}")

    backend = backend_of(spec)
    y = backend.scale_measurements(recentre_measurements(sampled))
    levels = usable_levels(sampled.source_shape, cfg.levels)

    state = SplState(initialize(y, backend))
    trace = SplTrace()
    while state.iteration < cfg.max_iters:
        x_hat = landweber_step(wiener3x3(state.x_current), y, backend)
        coeffs = transforms.forward(x_hat, cfg.basis, levels)
        tau = cfg.lam * transforms.estimate_sigma(coeffs)
        x_bar = transforms.inverse(transforms.hard_threshold(coeffs, tau))
        state.advance(landweber_step(x_bar, y, backend))
        trace.append(state.iteration, state.d_current, measurement_residual(state.x_current, y, backend))

        if print_debug_messages:
            print(f"SPL iteration {state.iteration}: D = {state.d_current:.6f}, tau = {tau:.4f}")

        if state.iteration >= 2 and abs(state.d_current - state.d_previous) < cfg.epsilon:
            trace.converged = True
            break

    if not trace.converged and print_debug_messages:
        print(f"SPL did not converge in {cfg.max_iters} iterations, returning the last iterate")

    x = np.clip(np.rint(state.x_current), 0, 2 ** OUTPUT_BIT_DEPTH - 1).astype(np.int64)
    return Image.from_array(x, OUTPUT_BIT_DEPTH), trace


def least_norm_estimate(sampled: SampledImage, spec: Optional[SamplingSpec] = None) -> Image:
    """
    The starting point of the reconstruction, Phi^T y, rounded to 8 bits.
    """
    backend = backend_of(spec if spec is not None else sampled.spec)
    x = initialize(backend.scale_measurements(recentre_measurements(sampled)), backend)
    return Image.from_array(np.clip(np.rint(x), 0, 2 ** OUTPUT_BIT_DEPTH - 1).astype(np.int64), OUTPUT_BIT_DEPTH)


def write_trace_csv(trace: SplTrace, filename: str):
    with open(filename, 'w', newline='') as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(['iteration', 'd', 'residual'])
        for iteration, d, residual in trace.rows:
            writer.writerow([iteration, f"{d:.8f}", f"{residual:.8e}"])
