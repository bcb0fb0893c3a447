#!/usr/bin/env python3

import os
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from image_core import Image, ImageFormatError, load_image, read_sidecar, save_image
from utils import bits_required

BINARY_BLOCK = np.array([[1, 1, 0, 0],
                         [0, 0, 1, 1]], dtype=np.int64)
NON_BINARY_BLOCK = np.array([[9, 7, 0, 0],
                             [0, 0, 9, 7]], dtype=np.int64)

SAMPLING_KINDS = ('binary', 'non_binary', 'custom')
ORIENTATIONS = ('rows', 'columns')
SENSOR_BIT_DEPTH = 8
READOUT_BIT_DEPTH = 16  # uncompressed readout word the on-chip compression is relative to
WEIGHTS_SUFFIX = '.weights.npy'


class SamplingSpec:
    """
    The front-end sampling block applied by the sensor to every group of b
    consecutive rows (or columns), and the unit-norm back-end derived from it.

    kind: binary, non_binary or custom.
    block: m x b non-negative integer matrix.
    orientation: rows combines adjacent rows, columns combines adjacent columns.
    weight_map: custom kind only, optional. Integer per-pixel weights of shape
        (groups, m, b, width) in the working orientation, at a fixed point
        precision of precision_bits, i.e. real weight = map / 2^precision_bits.
    """

    def __init__(self, kind: str, block, orientation: str = 'rows',
                 weight_map: Optional[np.ndarray] = None, precision_bits: int = 0):
        if kind not in SAMPLING_KINDS:
            raise ValueError(f"Unrecognised sampling kind {kind}. Expected one of {SAMPLING_KINDS}")
        if orientation not in ORIENTATIONS:
            raise ValueError(f"Unrecognised orientation {orientation}. Expected one of {ORIENTATIONS}")

        block = np.asarray(block)
        if block.ndim != 2:
            raise ValueError(f"Sampling block must be a matrix, got shape {block.shape}")
        if not np.issubdtype(block.dtype, np.integer):
            raise ValueError("Sampling block must hold integer weights")
        if np.any(block < 0):
            raise ValueError("Sampling block weights must be non-negative")
        m, b = block.shape
        if m > b or b % m != 0:
            raise ValueError(f"Sampling block of shape {block.shape} does not reduce b rows to m rows")
        if np.any(np.sum(block ** 2, axis=1) == 0):
            raise ValueError("Sampling block has an all-zero row")
        if kind == 'binary' and not np.array_equal(block, BINARY_BLOCK):
            raise ValueError("A binary spec must use the [[1,1,0,0],[0,0,1,1]] block")
        if kind == 'non_binary' and not np.array_equal(block, NON_BINARY_BLOCK):
            raise ValueError("A non_binary spec must use the [[9,7,0,0],[0,0,9,7]] block")

        if kind == 'custom' and weight_map is not None:
            weight_map = np.asarray(weight_map)
            if weight_map.ndim != 4 or weight_map.shape[1:3] != (m, b):
                raise ValueError(f"Weight map must have shape (groups, {m}, {b}, width), got {weight_map.shape}")
            if not np.issubdtype(weight_map.dtype, np.integer) or np.any(weight_map < 0):
                raise ValueError("Weight map must hold non-negative integers")
            if np.any(np.sum(weight_map, axis=2) == 0):
                raise ValueError("Weight map has an all-zero row")
            if precision_bits < 0:
                raise ValueError(f"precision_bits cannot be negative, got {precision_bits}")
            weight_map = weight_map.astype(np.int64)
            weight_map.flags.writeable = False
        elif weight_map is not None:
            raise ValueError(f"Only custom specs carry a weight map, not {kind}")

        block = block.astype(np.int64)
        block.flags.writeable = False
        self._kind = kind
        self._block = block
        self._orientation = orientation
        self._weight_map = weight_map
        self._precision_bits = int(precision_bits) if weight_map is not None else 0

    def __repr__(self):
        return f"SamplingSpec({self._kind}, {self.m}x{self.b}, {self._orientation})"

    def __eq__(self, other):
        if not isinstance(other, SamplingSpec):
            return NotImplemented
        same_map = (self._weight_map is None and other._weight_map is None) or (
            self._weight_map is not None and other._weight_map is not None
            and np.array_equal(self._weight_map, other._weight_map))
        return (self._kind == other._kind and np.array_equal(self._block, other._block)
                and self._orientation == other._orientation and same_map
                and self._precision_bits == other._precision_bits)

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def block(self) -> np.ndarray:
        return self._block

    @property
    def m(self) -> int:
        return self._block.shape[0]

    @property
    def b(self) -> int:
        return self._block.shape[1]

    @property
    def orientation(self) -> str:
        return self._orientation

    @property
    def weight_map(self) -> Optional[np.ndarray]:
        return self._weight_map

    @property
    def precision_bits(self) -> int:
        return self._precision_bits

    @property
    def normalization(self) -> np.ndarray:
        """
        Per-row Euclidean norm of the front-end block, sqrt(sum of squares).
        """
        return np.sqrt(np.sum(self._block.astype(np.float64) ** 2, axis=1))

    @property
    def backend_block(self) -> np.ndarray:
        return self._block / self.normalization[:, None]

    def real_weights(self) -> np.ndarray:
        """
        Front-end weights as reals, shaped (groups, m, b, width) so they
        broadcast against a grouped image. Standard kinds use one block for
        every group and column.
        """
        if self._weight_map is None:
            return self._block.astype(np.float64)[None, :, :, None]
        return self._weight_map / float(2 ** self._precision_bits)

    def max_sum(self, source_bit_depth: int = SENSOR_BIT_DEPTH) -> int:
        peak = 2 ** source_bit_depth - 1
        if self._weight_map is None:
            return int(np.max(np.sum(self._block, axis=1))) * peak
        row_sums = np.sum(self._weight_map, axis=2)
        return int(np.max(np.rint(row_sums * peak / 2 ** self._precision_bits)))

    def native_bit_depth(self, source_bit_depth: int = SENSOR_BIT_DEPTH) -> int:
        return bits_required(self.max_sum(source_bit_depth))


def binary_spec(orientation: str = 'rows') -> SamplingSpec:
    return SamplingSpec('binary', BINARY_BLOCK, orientation)


def non_binary_spec(orientation: str = 'rows') -> SamplingSpec:
    return SamplingSpec('non_binary', NON_BINARY_BLOCK, orientation)


def spec_from_kind(kind: str, orientation: str = 'rows') -> SamplingSpec:
    if kind == 'binary':
        return binary_spec(orientation)
    elif kind == 'non_binary':
        return non_binary_spec(orientation)
    raise ValueError(f"Cannot build a {kind} spec without a weight map")


class SampledImage:
    """
    The measurement produced by the sampler, in the image orientation.
    """

    def __init__(self, samples, bit_depth: int, truncated_bits: int, spec: SamplingSpec):
        samples = np.asarray(samples, dtype=np.int64)
        if samples.ndim != 2:
            raise ValueError(f"Sampled data must be 2-D, got shape {samples.shape}")
        if truncated_bits < 0:
            raise ValueError(f"truncated_bits cannot be negative, got {truncated_bits}")
        if bit_depth < 1:
            raise ValueError(f"Bit depth must be positive, got {bit_depth}")
        if np.any(samples < 0) or np.any(samples >= 2 ** bit_depth):
            raise ValueError(f"Sampled values do not fit in {bit_depth} bits")
        samples.flags.writeable = False
        self._samples = samples
        self._bit_depth = int(bit_depth)
        self._truncated_bits = int(truncated_bits)
        self._spec = spec

    def __repr__(self):
        return (f"SampledImage({self.width}x{self.height}, {self._bit_depth} bit, "
                f"{self._truncated_bits} truncated, {self._spec.kind})")

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def width(self) -> int:
        return self._samples.shape[1]

    @property
    def height(self) -> int:
        return self._samples.shape[0]

    @property
    def bit_depth(self) -> int:
        return self._bit_depth

    @property
    def truncated_bits(self) -> int:
        return self._truncated_bits

    @property
    def spec(self) -> SamplingSpec:
        return self._spec

    @property
    def source_shape(self) -> Tuple[int, int]:
        factor = self._spec.b // self._spec.m
        if self._spec.orientation == 'rows':
            return self.height * factor, self.width
        return self.height, self.width * factor


def to_working(grid: np.ndarray, orientation: str) -> np.ndarray:
    """
    Puts the sampled axis first. Sampling always combines rows of the
    working grid.
    """
    return grid if orientation == 'rows' else grid.T


def from_working(grid: np.ndarray, orientation: str) -> np.ndarray:
    return grid if orientation == 'rows' else grid.T


def apply_weights(x: np.ndarray, weights: np.ndarray, b: int) -> np.ndarray:
    """
    Applies block weights of shape (groups, m, b, width) to the working grid
    x of shape (groups*b, width). Returns (groups*m, width).
    """
    n_rows, width = x.shape
    xg = x.reshape(n_rows // b, b, width)
    y = np.sum(weights * xg[:, None, :, :], axis=2)
    return y.reshape(-1, width)


def sample(img: Image, spec: SamplingSpec) -> SampledImage:
    if img.bit_depth != SENSOR_BIT_DEPTH:
        raise ValueError(f"The sampler takes {SENSOR_BIT_DEPTH}-bit pixels, got {img.bit_depth} bits")
    x = to_working(img.samples, spec.orientation)
    n_rows, width = x.shape
    if n_rows % spec.b != 0:
        raise ValueError(f"Sampled dimension {n_rows} is not divisible by the block width {spec.b}")

    if spec.weight_map is not None:
        weight_map = spec.weight_map
        if weight_map.shape[0] * spec.b != n_rows or weight_map.shape[3] != width:
            raise ValueError(f"Weight map of shape {weight_map.shape} does not cover a {img.width}x{img.height} image")
        fixed_point = apply_weights(x, weight_map, spec.b)
        shift = spec.precision_bits
        if shift > 0:
            fixed_point = np.right_shift(fixed_point + (1 << (shift - 1)), shift)
        y = fixed_point
    else:
        y = apply_weights(x, spec.block[None, :, :, None], spec.b)

    return SampledImage(from_working(y, spec.orientation), spec.native_bit_depth(), 0, spec)


def truncate_sampled(sampled: SampledImage, k: int) -> SampledImage:
    if not 0 <= k < sampled.bit_depth:
        raise ValueError(f"Cannot truncate {k} bits from a {sampled.bit_depth} bit measurement")
    return SampledImage(np.right_shift(sampled.samples, k), sampled.bit_depth - k,
                        sampled.truncated_bits + k, sampled.spec)


def sampled_to_image(sampled: SampledImage) -> Image:
    return Image.from_array(sampled.samples, sampled.bit_depth)


def image_to_sampled(img: Image, spec: SamplingSpec, truncated_bits: int = 0) -> SampledImage:
    expected = spec.native_bit_depth() - truncated_bits
    if img.bit_depth != expected:
        raise ValueError(f"A {spec.kind} measurement with {truncated_bits} truncated bits is "
                         f"{expected} bits deep, got {img.bit_depth}")
    return SampledImage(img.samples, img.bit_depth, truncated_bits, spec)


def save_sampled(sampled: SampledImage, path: str):
    spec = sampled.spec
    metadata = {
        'kind': spec.kind,
        'orientation': spec.orientation,
        'truncated_bits': sampled.truncated_bits,
    }
    if spec.kind == 'custom':
        metadata['block'] = ';'.join(','.join(str(v) for v in row) for row in spec.block)
        metadata['precision_bits'] = spec.precision_bits
    if spec.weight_map is not None:
        np.save(path + WEIGHTS_SUFFIX, spec.weight_map)
    save_image(sampled_to_image(sampled), path, 'raw', extra_metadata=metadata)


def load_sampled(path: str) -> SampledImage:
    fields = read_sidecar(path)
    for key in ('kind', 'orientation', 'truncated_bits'):
        if key not in fields:
            raise ImageFormatError(f"{path}: sidecar is missing '{key}', not a sampled image")
    kind = fields['kind']
    orientation = fields['orientation']
    if kind == 'custom':
        if 'block' not in fields:
            raise ImageFormatError(f"{path}: custom measurement without its sampling block")
        block = np.array([[int(v) for v in row.split(',')] for row in fields['block'].split(';')])
        weight_map = np.load(path + WEIGHTS_SUFFIX) if os.path.exists(path + WEIGHTS_SUFFIX) else None
        spec = SamplingSpec('custom', block, orientation, weight_map, int(fields.get('precision_bits', 0)))
    else:
        spec = spec_from_kind(kind, orientation)
    return image_to_sampled(load_image(path, 'raw'), spec, int(fields['truncated_bits']))


# Structural diagnostics
def expand_block_diagonal(block, n_rows: int) -> np.ndarray:
    block = np.asarray(block)
    m, b = block.shape
    if n_rows <= 0 or n_rows % b != 0:
        raise ValueError(f"Row count {n_rows} is not a positive multiple of the block width {b}")
    return scipy.linalg.block_diag(*([block] * (n_rows // b)))


def onchip_compression(bit_depth: int) -> float:
    if not 1 <= bit_depth <= READOUT_BIT_DEPTH:
        raise ValueError(f"Bit depth must be in [1, {READOUT_BIT_DEPTH}], got {bit_depth}")
    return (READOUT_BIT_DEPTH - bit_depth) / READOUT_BIT_DEPTH * 100.0


def factorize_lowpass(block) -> Tuple[np.ndarray, np.ndarray]:
    """
    Writes the block as a point downsampler R applied after a circulant
    low-pass filter Lp whose first row is the first block row.
    """
    block = np.asarray(block)
    m, b = block.shape
    if b % m != 0:
        raise ValueError(f"Block of shape {block.shape} cannot be written as a downsampled filter")
    step = b // m
    # scipy's circulant shifts columns, the filter matrix shifts rows
    lowpass = scipy.linalg.circulant(block[0]).T
    decimation = np.zeros((m, b), dtype=block.dtype)
    decimation[np.arange(m), np.arange(m) * step] = 1
    if not np.array_equal(decimation @ lowpass, block):
        raise ValueError("Block rows are not shifted copies of one filter, cannot factorise")
    return decimation, lowpass


def haar_basis(n: int) -> np.ndarray:
    """
    Orthonormal Haar basis of length n (a power of two). Basis vectors are columns.
    """
    if n < 1 or n & (n - 1):
        raise ValueError(f"Haar basis length must be a power of two, got {n}")
    rows = np.ones((1, 1))
    while rows.shape[0] < n:
        k = rows.shape[0]
        rows = np.vstack([np.kron(rows, [1.0, 1.0]), np.kron(np.eye(k), [1.0, -1.0])]) / np.sqrt(2.0)
    return rows.T


def coherence(phi, psi) -> float:
    """
    sqrt(N) times the largest inner product between a row of phi and a
    basis vector (column) of psi.
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = psi.shape[0]
    if psi.shape != (n, n):
        raise ValueError(f"Basis must be square, got shape {psi.shape}")
    if phi.ndim != 2 or phi.shape[1] != n or phi.shape[0] > n:
        raise ValueError(f"Sampling matrix of shape {phi.shape} does not match a basis of size {n}")
    if not np.allclose(psi.T @ psi, np.eye(n), rtol=0.0, atol=1e-8):
        raise ValueError("Basis is not orthonormal")
    return float(np.sqrt(n) * np.max(np.abs(phi @ psi)))
