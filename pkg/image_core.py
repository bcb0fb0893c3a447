#!/usr/bin/env python3

import math
from typing import Dict, Optional, Tuple

import numpy as np

from utils import bits_required

INFINITE_PSNR = math.inf  # returned when the two images are identical
PSNR_PEAK = 255.0
IMAGE_FORMATS = ('pgm8', 'pgm16', 'raw')
SIDECAR_SUFFIX = '.hdr'


class ImageFormatError(ValueError):
    pass


class SampleRangeError(ValueError):
    pass


class TruncatedFileError(ValueError):
    pass


class Image:
    """
    A single plane of unsigned integer samples.
    width, height: dimensions in pixels.
    bit_depth: bits per sample, 1 to 16.
    samples: (height, width) integer array, row major. Every sample is < 2^bit_depth.
    """

    def __init__(self, width: int, height: int, bit_depth: int, samples):
        if width <= 0 or height <= 0:
            raise ValueError(f"Image dimensions must be positive, got {width}x{height}")
        if not 1 <= bit_depth <= 16:
            raise ValueError(f"Bit depth must be in [1, 16], got {bit_depth}")
        samples = np.asarray(samples)
        if samples.size != width * height:
            raise ValueError(f"Expected {width * height} samples for a {width}x{height} image, got {samples.size}")
        if not np.issubdtype(samples.dtype, np.integer):
            if not np.all(np.isfinite(samples)) or np.any(samples != np.floor(samples)):
                raise ValueError("Image samples must be integers")
        samples = samples.reshape(height, width).astype(np.int64)
        if np.any(samples < 0):
            raise SampleRangeError("sample out of range: negative sample")
        if np.any(samples >= 2 ** bit_depth):
            raise SampleRangeError(f"sample out of range: {int(samples.max())} does not fit in {bit_depth} bits")
        samples.flags.writeable = False
        self._width = int(width)
        self._height = int(height)
        self._bit_depth = int(bit_depth)
        self._samples = samples

    @classmethod
    def from_array(cls, samples, bit_depth: int) -> 'Image':
        samples = np.asarray(samples)
        if samples.ndim != 2:
            raise ValueError(f"Expected a 2-D array, got shape {samples.shape}")
        height, width = samples.shape
        return cls(width, height, bit_depth, samples)

    def __repr__(self):
        return f"Image({self._width}x{self._height}, {self._bit_depth} bit)"

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (self._width == other._width and self._height == other._height
                and self._bit_depth == other._bit_depth and np.array_equal(self._samples, other._samples))

    @property
    def width(self) -> int:
        return self._width

    @property
    def height(self) -> int:
        return self._height

    @property
    def shape(self) -> Tuple[int, int]:
        return self._height, self._width

    @property
    def bit_depth(self) -> int:
        return self._bit_depth

    @property
    def max_value(self) -> int:
        return 2 ** self._bit_depth - 1

    @property
    def samples(self) -> np.ndarray:
        return self._samples


class RgbImage:
    """
    Three colour planes of identical dimensions and bit depth. Each plane
    is processed as an independent image.
    """

    def __init__(self, red: Image, green: Image, blue: Image):
        for plane in (green, blue):
            if plane.shape != red.shape or plane.bit_depth != red.bit_depth:
                raise ValueError("RGB planes must share dimensions and bit depth")
        self._planes = (red, green, blue)

    def __repr__(self):
        return f"RgbImage({self.width}x{self.height}, {self.bit_depth} bit)"

    def __eq__(self, other):
        if not isinstance(other, RgbImage):
            return NotImplemented
        return all(a == b for a, b in zip(self._planes, other._planes))

    @property
    def red(self) -> Image:
        return self._planes[0]

    @property
    def green(self) -> Image:
        return self._planes[1]

    @property
    def blue(self) -> Image:
        return self._planes[2]

    @property
    def width(self) -> int:
        return self._planes[0].width

    @property
    def height(self) -> int:
        return self._planes[0].height

    @property
    def bit_depth(self) -> int:
        return self._planes[0].bit_depth


def split_planes(rgb: RgbImage) -> Tuple[Image, Image, Image]:
    return rgb.red, rgb.green, rgb.blue


def merge_planes(red: Image, green: Image, blue: Image) -> RgbImage:
    return RgbImage(red, green, blue)


# Raster I/O
def _parse_pnm_header(data: bytes, magic: bytes, path: str) -> Tuple[int, int, int, int]:
    """
    Returns (width, height, maxval, raster offset) of a binary PNM file.
    """
    if not data.startswith(magic):
        raise ImageFormatError(f"{path}: malformed header, expected magic {magic.decode()}")
    fields = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b'#'):
            if data[pos:pos + 1] == b'#':
                end = data.find(b'\n', pos)
                if end == -1:
                    raise ImageFormatError(f"{path}: malformed header, unterminated comment")
                pos = end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: malformed header, expected an integer field")
        fields.append(int(data[start:pos]))

    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: malformed header, missing whitespace before raster")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: malformed header, non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: malformed header, maxval {maxval} outside 1..65535")
    return width, height, maxval, pos + 1


def _read_pnm_raster(data: bytes, offset: int, count: int, maxval: int, path: str) -> np.ndarray:
    bytes_per_sample = 1 if maxval < 256 else 2
    expected = count * bytes_per_sample
    raster = data[offset:]
    if len(raster) < expected:
        raise TruncatedFileError(f"{path}: truncated file, expected {expected} raster bytes, found {len(raster)}")
    dtype = np.uint8 if bytes_per_sample == 1 else np.dtype('>u2')
    samples = np.frombuffer(raster[:expected], dtype=dtype).astype(np.int64)
    if np.any(samples > maxval):
        raise SampleRangeError(f"{path}: sample out of range, {int(samples.max())} exceeds maxval {maxval}")
    return samples


def _pnm_raster_bytes(samples: np.ndarray, maxval: int) -> bytes:
    if maxval < 256:
        return samples.astype(np.uint8).tobytes()
    return samples.astype('>u2').tobytes()


def read_sidecar(path: str) -> Dict[str, str]:
    fields = {}
    try:
        with open(path + SIDECAR_SUFFIX, 'r') as file:
            for line in file:
                line = line.strip()
                if not line or line.startswith('#'):
                    continue
                if '=' not in line:
                    raise ImageFormatError(f"{path}{SIDECAR_SUFFIX}: malformed header line '{line}'")
                key, value = line.split('=', 1)
                fields[key.strip()] = value.strip()
    except FileNotFoundError:
        raise ImageFormatError(f"{path}: raw image has no sidecar {path}{SIDECAR_SUFFIX}")
    return fields


def write_sidecar(path: str, fields: Dict[str, object]):
    with open(path + SIDECAR_SUFFIX, 'w') as file:
        for key, value in fields.items():
            file.write(f"{key}={value}\n")


def load_image(path: str, format: str = 'pgm8') -> Image:
    if format not in IMAGE_FORMATS:
        raise ValueError(f"Unrecognised image format {format}. Expected one of {IMAGE_FORMATS}")

    if format == 'raw':
        return _load_raw(path)

    with open(path, 'rb') as file:
        data = file.read()
    width, height, maxval, offset = _parse_pnm_header(data, b'P5', path)
    if format == 'pgm8' and maxval > 255:
        raise ImageFormatError(f"{path}: declared pgm8 but maxval is {maxval}")
    # pgm16 takes any maxval up to 65535, the depth is always read from maxval
    samples = _read_pnm_raster(data, offset, width * height, maxval, path)
    return Image(width, height, bits_required(maxval), samples)


def _load_raw(path: str) -> Image:
    fields = read_sidecar(path)
    try:
        width = int(fields['width'])
        height = int(fields['height'])
        bit_depth = int(fields['bit_depth'])
    except (KeyError, ValueError) as e:
        raise ImageFormatError(f"{path}: malformed header, sidecar needs integer width, height and bit_depth ({e})")
    if width <= 0 or height <= 0 or not 1 <= bit_depth <= 16:
        raise ImageFormatError(f"{path}: malformed header, {width}x{height} at {bit_depth} bits")

    with open(path, 'rb') as file:
        data = file.read()
    expected = 2 * width * height
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: truncated file, expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise ImageFormatError(f"{path}: {len(data) - expected} unexpected trailing bytes")
    samples = np.frombuffer(data, dtype='<u2').astype(np.int64)
    if np.any(samples >= 2 ** bit_depth):
        raise SampleRangeError(f"{path}: sample out of range, {int(samples.max())} does not fit in {bit_depth} bits")
    return Image(width, height, bit_depth, samples)


def save_image(img: Image, path: str, format: str = 'pgm8', extra_metadata: Optional[Dict[str, object]] = None):
    if format not in IMAGE_FORMATS:
        raise ValueError(f"Unrecognised image format {format}. Expected one of {IMAGE_FORMATS}")

    if format == 'raw':
        fields = {'width': img.width, 'height': img.height, 'bit_depth': img.bit_depth}
        if extra_metadata:
            fields.update(extra_metadata)
        with open(path, 'wb') as file:
            file.write(img.samples.astype('<u2').tobytes())
        write_sidecar(path, fields)
        return

    if format == 'pgm8' and img.bit_depth > 8:
        raise ValueError(f"Cannot store a {img.bit_depth} bit image as pgm8")
    maxval = img.max_value
    with open(path, 'wb') as file:
        file.write(f"P5\n{img.width} {img.height}\n{maxval}\n".encode('ascii'))
        file.write(_pnm_raster_bytes(img.samples, maxval))


def load_rgb_image(path: str) -> RgbImage:
    with open(path, 'rb') as file:
        data = file.read()
    width, height, maxval, offset = _parse_pnm_header(data, b'P6', path)
    samples = _read_pnm_raster(data, offset, 3 * width * height, maxval, path).reshape(height, width, 3)
    bit_depth = bits_required(maxval)
    planes = [Image(width, height, bit_depth, samples[:, :, c]) for c in range(3)]
    return RgbImage(*planes)


def save_rgb_image(rgb: RgbImage, path: str):
    maxval = 2 ** rgb.bit_depth - 1
    interleaved = np.stack([p.samples for p in split_planes(rgb)], axis=-1)
    with open(path, 'wb') as file:
        file.write(f"P6\n{rgb.width} {rgb.height}\n{maxval}\n".encode('ascii'))
        file.write(_pnm_raster_bytes(interleaved, maxval))


# Metrics and bit depth
def mse(reference: Image, candidate: Image) -> float:
    if reference.shape != candidate.shape:
        raise ValueError(f"Dimension mismatch: {reference.shape} vs {candidate.shape}")
    diff = reference.samples.astype(np.float64) - candidate.samples.astype(np.float64)
    return float(np.mean(diff ** 2))


def psnr(reference: Image, candidate: Image) -> float:
    """
    Peak signal to noise ratio in dB. Always evaluated on 8-bit images with a
    peak of 255. Identical images return INFINITE_PSNR.
    """
    if reference.shape != candidate.shape:
        raise ValueError(f"Dimension mismatch: {reference.shape} vs {candidate.shape}")
    if reference.bit_depth != 8 or candidate.bit_depth != 8:
        raise ValueError("PSNR is evaluated on 8-bit images only")
    error = mse(reference, candidate)
    if error == 0.0:
        return INFINITE_PSNR
    return 10.0 * math.log10(PSNR_PEAK ** 2 / error)


def truncate_lsbs(img: Image, k: int) -> Image:
    if not 0 <= k < img.bit_depth:
        raise ValueError(f"Cannot truncate {k} bits from a {img.bit_depth} bit image")
    if k == 0:
        return img
    return Image(img.width, img.height, img.bit_depth - k, np.right_shift(img.samples, k))


def synthetic_scene(width: int = 64, height: int = 64, seed: int = 0) -> Image:
    """
    A deterministic 8-bit test scene: smooth illumination, a few discs and
    bars with hard edges, and mild sensor-like texture.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u = xx / width
    v = yy / height
    scene = 80.0 + 70.0 * u + 25.0 * np.sin(2.0 * np.pi * v * rng.uniform(0.5, 2.0) + rng.uniform(0, np.pi))

    for _ in range(5):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        radius = rng.uniform(0.08, 0.25) * min(width, height)
        level = rng.uniform(20, 235)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < radius ** 2
        scene[mask] = 0.3 * scene[mask] + 0.7 * level

    x0, x1 = sorted(rng.integers(0, width, size=2))
    y0, y1 = sorted(rng.integers(0, height, size=2))
    scene[y0:y1 + 1, x0:x1 + 1] = rng.uniform(20, 235)

    scene += rng.normal(0.0, 2.0, size=scene.shape)
    return Image.from_array(np.clip(np.rint(scene), 0, 255).astype(np.int64), 8)
