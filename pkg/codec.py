#!/usr/bin/env python3

import heapq
import struct
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.fft import dctn, idctn

from image_core import Image

MAGIC = b'CSJ1'
BLOCK = 8
MAX_BIT_DEPTH = 16
MAX_CODE_LENGTH = 16
WINDOW_BITS = 24
LOSSLESS = 'lossless'

EOB = 0
ZRL = 15 << 5  # sixteen zeros
SIZE_BITS = 5  # AC symbol = (run << 5) | size

MODE_LOSSY = 0
MODE_LOSSLESS = 1
FLAG_DEPTH_SCALED = 1

# width, height, padded width, padded height, bit depth, mode, quality, flags
_HEADER = struct.Struct('<IIIIBBBB')
_SECTION = struct.Struct('<II')  # payload bytes, payload bits

STANDARD_LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)


def _zigzag_order() -> np.ndarray:
    cells = [(i, j) for i in range(BLOCK) for j in range(BLOCK)]
    cells.sort(key=lambda c: (c[0] + c[1], c[0] if (c[0] + c[1]) % 2 else -c[0]))
    return np.array([i * BLOCK + j for i, j in cells])


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


class CorruptStreamError(ValueError):
    pass


def quant_table(quality: int, bit_depth: int = 8) -> np.ndarray:
    """
    The standard luminance table at the given quality, scaled by
    2^(bit_depth - 8). Entries are at least 1.
    """
    if not 1 <= quality <= 100:
        raise ValueError(f"Quality must be in [1, 100], got {quality}")
    if not 1 <= bit_depth <= MAX_BIT_DEPTH:
        raise ValueError(f"Bit depth must be in [1, {MAX_BIT_DEPTH}], got {bit_depth}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    table = np.maximum((STANDARD_LUMINANCE_TABLE * scale + 50) // 100, 1)
    if bit_depth >= 8:
        table = table * 2 ** (bit_depth - 8)
    else:
        table = table // 2 ** (8 - bit_depth)
    return np.maximum(table, 1)


def bit_length(values: np.ndarray) -> np.ndarray:
    """
    Magnitude category of each value, the bit length of |v|.
    """
    values = np.abs(np.asarray(values, dtype=np.int64))
    lengths = np.zeros_like(values)
    while np.any(values >> lengths):
        lengths += (values >> lengths) > 0
    return lengths


def extra_bits(values: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """
    Negative values are sent as v + 2^size - 1 so their leading bit is 0.
    """
    values = np.asarray(values, dtype=np.int64)
    return np.where(values >= 0, values, values + (np.int64(1) << sizes) - 1)


def value_from_bits(bits: int, size: int) -> int:
    if size == 0:
        return 0
    if bits < 1 << (size - 1):
        return bits - (1 << size) + 1
    return bits


class HuffmanTable:
    """
    Canonical Huffman code over integer symbols, limited to 16-bit codes.
    """

    def __init__(self, lengths: Dict[int, int]):
        if not lengths:
            raise ValueError("A Huffman table needs at least one symbol")
        if max(lengths.values()) > MAX_CODE_LENGTH:
            raise ValueError(f"Code lengths exceed {MAX_CODE_LENGTH} bits")
        self.lengths = dict(lengths)
        self.codes = {}
        code = 0
        previous_length = 0
        for symbol in self.ordered_symbols():
            length = self.lengths[symbol]
            code <<= length - previous_length
            self.codes[symbol] = code
            code += 1
            previous_length = length
        if code > 1 << previous_length:
            raise ValueError("Code lengths do not form a prefix code")
        self._lookup_symbol = None
        self._lookup_length = None

    def __repr__(self):
        return f"HuffmanTable({len(self.lengths)} symbols, longest {max(self.lengths.values())} bits)"

    def __eq__(self, other):
        if not isinstance(other, HuffmanTable):
            return NotImplemented
        return self.lengths == other.lengths

    def ordered_symbols(self) -> List[int]:
        return sorted(self.lengths, key=lambda s: (self.lengths[s], s))

    @classmethod
    def from_frequencies(cls, frequencies: Dict[int, int]) -> 'HuffmanTable':
        if not frequencies:
            raise ValueError("Cannot build a Huffman table from no symbols")
        if len(frequencies) == 1:
            return cls({next(iter(frequencies)): 1})
        frequencies = dict(frequencies)
        while True:
            lengths = _huffman_lengths(frequencies)
            if max(lengths.values()) <= MAX_CODE_LENGTH:
                return cls(lengths)
            # flatten the distribution until the tree is shallow enough
            frequencies = {s: max(1, f // 2) for s, f in frequencies.items()}

    def encode(self, symbols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns the code and code length of each symbol.
        """
        symbols = np.asarray(symbols, dtype=np.int64)
        size = int(symbols.max()) + 1 if symbols.size else 1
        code_of = np.zeros(size, dtype=np.int64)
        length_of = np.zeros(size, dtype=np.int64)
        for symbol, code in self.codes.items():
            if symbol < size:
                code_of[symbol] = code
                length_of[symbol] = self.lengths[symbol]
        return code_of[symbols], length_of[symbols]

    def lookup(self) -> Tuple[list, list]:
        """
        Symbol and code length for every 16-bit prefix of the stream.
        """
        if self._lookup_symbol is None:
            symbols = np.zeros(1 << MAX_CODE_LENGTH, dtype=np.int64)
            lengths = np.zeros(1 << MAX_CODE_LENGTH, dtype=np.int64)
            for symbol, code in self.codes.items():
                spare = MAX_CODE_LENGTH - self.lengths[symbol]
                symbols[code << spare:(code + 1) << spare] = symbol
                lengths[code << spare:(code + 1) << spare] = self.lengths[symbol]
            self._lookup_symbol = symbols.tolist()
            self._lookup_length = lengths.tolist()
        return self._lookup_symbol, self._lookup_length

    def to_bytes(self) -> bytes:
        counts = [0] * MAX_CODE_LENGTH
        for length in self.lengths.values():
            counts[length - 1] += 1
        ordered = self.ordered_symbols()
        return struct.pack(f'<{MAX_CODE_LENGTH}H{len(ordered)}H', *counts, *ordered)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int) -> Tuple['HuffmanTable', int]:
        counts_size = 2 * MAX_CODE_LENGTH
        if offset + counts_size > len(data):
            raise CorruptStreamError("Stream ends inside a Huffman table")
        counts = struct.unpack_from(f'<{MAX_CODE_LENGTH}H', data, offset)
        offset += counts_size
        n_symbols = sum(counts)
        if n_symbols == 0 or offset + 2 * n_symbols > len(data):
            raise CorruptStreamError("Malformed Huffman table")
        symbols = struct.unpack_from(f'<{n_symbols}H', data, offset)
        offset += 2 * n_symbols
        lengths = {}
        position = 0
        for length, count in enumerate(counts, start=1):
            for symbol in symbols[position:position + count]:
                lengths[symbol] = length
            position += count
        try:
            return cls(lengths), offset
        except ValueError as e:
            raise CorruptStreamError(f"Malformed Huffman table: {e}")


def _huffman_lengths(frequencies: Dict[int, int]) -> Dict[int, int]:
    heap = [(f, order, [symbol]) for order, (symbol, f) in enumerate(sorted(frequencies.items()))]
    heapq.heapify(heap)
    lengths = {symbol: 0 for symbol in frequencies}
    order = len(heap)
    while len(heap) > 1:
        f1, _, group1 = heapq.heappop(heap)
        f2, _, group2 = heapq.heappop(heap)
        for symbol in group1 + group2:
            lengths[symbol] += 1
        heapq.heappush(heap, (f1 + f2, order, group1 + group2))
        order += 1
    return lengths


def pack_bits(values: np.ndarray, lengths: np.ndarray) -> Tuple[bytes, int]:
    """
    Concatenates the low `length` bits of each value, most significant first.
    Returns the bytes (zero padded) and the number of meaningful bits.
    """
    values = np.asarray(values, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    keep = lengths > 0
    values = values[keep]
    lengths = lengths[keep]
    total = int(lengths.sum())
    if total == 0:
        return b'', 0
    owners = np.repeat(np.arange(values.size), lengths)
    starts = np.cumsum(lengths) - lengths
    shifts = lengths[owners] - 1 - (np.arange(total) - starts[owners])
    bits = (values[owners] >> shifts) & 1
    return np.packbits(bits.astype(np.uint8)).tobytes(), total


class BitReader:
    def __init__(self, payload: bytes, bit_count: int):
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
        if bit_count > bits.size:
            raise CorruptStreamError(f"Payload holds {bits.size} bits, header claims {bit_count}")
        bits = np.concatenate([bits[:bit_count], np.zeros(WINDOW_BITS, dtype=np.uint8)]).astype(np.int64)
        window = np.zeros(bit_count + 1, dtype=np.int64)
        for k in range(WINDOW_BITS):
            window += bits[k:k + bit_count + 1] << (WINDOW_BITS - 1 - k)
        self._window = window.tolist()
        self._position = 0
        self._end = bit_count

    @property
    def remaining(self) -> int:
        return self._end - self._position

    def decode_symbol(self, table: HuffmanTable) -> int:
        if self._position >= self._end:
            raise CorruptStreamError("Stream ended before all symbols were decoded")
        symbols, lengths = table.lookup()
        prefix = self._window[self._position] >> (WINDOW_BITS - MAX_CODE_LENGTH)
        length = lengths[prefix]
        if length == 0:
            raise CorruptStreamError(f"Invalid Huffman code at bit {self._position}")
        self._position += length
        if self._position > self._end:
            raise CorruptStreamError("Stream ended inside a Huffman code")
        return symbols[prefix]

    def read(self, size: int) -> int:
        if size == 0:
            return 0
        if self._position + size > self._end:
            raise CorruptStreamError("Stream ended inside extra bits")
        value = (self._window[self._position] >> (WINDOW_BITS - size)) & ((1 << size) - 1)
        self._position += size
        return value


class CodedImage:
    """
    An entropy coded image and everything needed to decode it.
    mode: an integer quality for the DCT path, or 'lossless'.
    """

    def __init__(self, width: int, height: int, padded_width: int, padded_height: int, bit_depth: int,
                 mode: Union[int, str], depth_scaled: bool, tables: List[HuffmanTable], payload: bytes,
                 payload_bits: int):
        self.width = width
        self.height = height
        self.padded_width = padded_width
        self.padded_height = padded_height
        self.bit_depth = bit_depth
        self.mode = mode
        self.depth_scaled = depth_scaled
        self.tables = tables
        self.payload = payload
        self.payload_bits = payload_bits

    def __repr__(self):
        return f"CodedImage({self.width}x{self.height}, {self.bit_depth} bit, {self.mode}, {self.size_bytes} bytes)"

    @property
    def lossless(self) -> bool:
        return self.mode == LOSSLESS

    @property
    def quality(self) -> Optional[int]:
        return None if self.lossless else self.mode

    @property
    def size_bytes(self) -> int:
        return len(serialize(self))


def serialize(coded: CodedImage) -> bytes:
    flags = FLAG_DEPTH_SCALED if coded.depth_scaled else 0
    mode = MODE_LOSSLESS if coded.lossless else MODE_LOSSY
    quality = 0 if coded.lossless else coded.mode
    data = bytearray(MAGIC)
    data += _HEADER.pack(coded.width, coded.height, coded.padded_width, coded.padded_height,
                         coded.bit_depth, mode, quality, flags)
    data += struct.pack('<B', len(coded.tables))
    for table in coded.tables:
        data += table.to_bytes()
    data += _SECTION.pack(len(coded.payload), coded.payload_bits)
    data += coded.payload
    return bytes(data)


def deserialize(data: bytes) -> CodedImage:
    if not data.startswith(MAGIC):
        raise CorruptStreamError("Not a coded image, bad magic")
    offset = len(MAGIC)
    if offset + _HEADER.size + 1 > len(data):
        raise CorruptStreamError("Stream ends inside the header")
    width, height, padded_width, padded_height, bit_depth, mode, quality, flags = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    if width == 0 or height == 0 or not 1 <= bit_depth <= MAX_BIT_DEPTH or mode not in (MODE_LOSSY, MODE_LOSSLESS):
        raise CorruptStreamError("Header mismatch: invalid dimensions, depth or mode")
    if padded_width < width or padded_height < height:
        raise CorruptStreamError("Header mismatch: padded size smaller than the image")
    if mode == MODE_LOSSY and (not 1 <= quality <= 100 or padded_width % BLOCK or padded_height % BLOCK):
        raise CorruptStreamError("Header mismatch: invalid quality or block padding")
    (n_tables,) = struct.unpack_from('<B', data, offset)
    offset += 1
    expected_tables = 1 if mode == MODE_LOSSLESS else 2
    if n_tables != expected_tables:
        raise CorruptStreamError(f"Header mismatch: expected {expected_tables} Huffman tables, found {n_tables}")
    tables = []
    for _ in range(n_tables):
        table, offset = HuffmanTable.from_bytes(data, offset)
        tables.append(table)
    if offset + _SECTION.size > len(data):
        raise CorruptStreamError("Stream ends before the payload")
    payload_size, payload_bits = _SECTION.unpack_from(data, offset)
    offset += _SECTION.size
    if offset + payload_size != len(data) or payload_bits > 8 * payload_size:
        raise CorruptStreamError("Payload length does not match the header")
    return CodedImage(width, height, padded_width, padded_height, bit_depth,
                      LOSSLESS if mode == MODE_LOSSLESS else quality, bool(flags & FLAG_DEPTH_SCALED),
                      tables, data[offset:], payload_bits)


def parse_codec_mode(value: Union[int, str]) -> Union[int, str]:
    if isinstance(value, str):
        value = value.strip().lower()
        if value == LOSSLESS:
            return LOSSLESS
        try:
            value = int(value)
        except ValueError:
            raise ValueError(f"Codec mode must be 'lossless' or a quality in [1, 100], got {value}")
    if not 1 <= value <= 100:
        raise ValueError(f"Quality must be in [1, 100], got {value}")
    return int(value)


def _table_for(quality: int, bit_depth: int, depth_scaled: bool) -> np.ndarray:
    return quant_table(quality, bit_depth if depth_scaled else 8)


def encode(img: Image, mode: Union[int, str] = LOSSLESS, depth_scaled_tables: bool = False) -> CodedImage:
    """
    Lossy modes quantise with the 8-bit tables unless depth_scaled_tables
    scales them by 2^(bit_depth - 8) for deeper measurements.
    """
    mode = parse_codec_mode(mode)
    if img.bit_depth > MAX_BIT_DEPTH:
        raise ValueError(f"Unsupported bit depth {img.bit_depth}")
    if mode == LOSSLESS:
        return _encode_lossless(img)
    return _encode_lossy(img, mode, depth_scaled_tables)


def decode(coded: CodedImage) -> Image:
    if coded.lossless:
        return _decode_lossless(coded)
    return _decode_lossy(coded)


def normalized_size(candidate: Union[CodedImage, int], baseline: Union[CodedImage, int]) -> float:
    candidate_size = candidate.size_bytes if isinstance(candidate, CodedImage) else int(candidate)
    baseline_size = baseline.size_bytes if isinstance(baseline, CodedImage) else int(baseline)
    if baseline_size <= 0:
        raise ValueError("Baseline size is zero, cannot normalise")
    return 100.0 * candidate_size / baseline_size


# Lossless path
def _lossless_prediction(x: np.ndarray, bit_depth: int) -> np.ndarray:
    prediction = np.empty_like(x)
    prediction[:, 1:] = x[:, :-1]
    prediction[1:, 0] = x[:-1, 0]
    prediction[0, 0] = 1 << (bit_depth - 1)
    return prediction


def _encode_lossless(img: Image) -> CodedImage:
    x = img.samples
    residuals = (x - _lossless_prediction(x, img.bit_depth)).ravel()
    sizes = bit_length(residuals)
    symbols, counts = np.unique(sizes, return_counts=True)
    table = HuffmanTable.from_frequencies(dict(zip(symbols.tolist(), counts.tolist())))
    codes, code_lengths = table.encode(sizes)
    values = np.column_stack([codes, extra_bits(residuals, sizes)]).ravel()
    lengths = np.column_stack([code_lengths, sizes]).ravel()
    payload, bits = pack_bits(values, lengths)
    return CodedImage(img.width, img.height, img.width, img.height, img.bit_depth, LOSSLESS, False,
                      [table], payload, bits)


def _decode_lossless(coded: CodedImage) -> Image:
    reader = BitReader(coded.payload, coded.payload_bits)
    table = coded.tables[0]
    count = coded.width * coded.height
    residuals = np.empty(count, dtype=np.int64)
    for i in range(count):
        size = reader.decode_symbol(table)
        residuals[i] = value_from_bits(reader.read(size), size)
    residuals = residuals.reshape(coded.height, coded.width)

    first_column = (1 << (coded.bit_depth - 1)) + np.cumsum(residuals[:, 0])
    x = np.cumsum(np.column_stack([first_column, residuals[:, 1:]]), axis=1)
    if np.any(x < 0) or np.any(x >= 1 << coded.bit_depth):
        raise CorruptStreamError("Decoded samples fall outside the declared bit depth")
    return Image.from_array(x, coded.bit_depth)


# DCT path
def _pad_to_blocks(x: np.ndarray) -> np.ndarray:
    pad_rows = -x.shape[0] % BLOCK
    pad_cols = -x.shape[1] % BLOCK
    return np.pad(x, ((0, pad_rows), (0, pad_cols)), mode='edge')


def _to_blocks(x: np.ndarray) -> np.ndarray:
    rows, cols = x.shape
    return x.reshape(rows // BLOCK, BLOCK, cols // BLOCK, BLOCK).swapaxes(1, 2).reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return blocks.reshape(rows // BLOCK, cols // BLOCK, BLOCK, BLOCK).swapaxes(1, 2).reshape(rows, cols)


def _block_symbols(zigzag: np.ndarray) -> Tuple[list, list, list, list]:
    """
    Splits each zigzagged block into a DC difference and run/size AC symbols.
    Returns (stream of table ids, symbols, values, sizes) in emission order.
    """
    tables, symbols, values, sizes = [], [], [], []
    dc = zigzag[:, 0]
    dc_diff = np.diff(dc, prepend=0)
    dc_sizes = bit_length(dc_diff).tolist()
    dc_diff = dc_diff.tolist()
    for index, block in enumerate(zigzag):
        tables.append(0)
        symbols.append(dc_sizes[index])
        values.append(dc_diff[index])
        sizes.append(dc_sizes[index])

        ac = block[1:]
        nonzero = np.flatnonzero(ac)
        ac_sizes = bit_length(ac[nonzero]).tolist()
        previous = -1
        for position, size in zip(nonzero.tolist(), ac_sizes):
            run = position - previous - 1
            while run > 15:
                tables.append(1)
                symbols.append(ZRL)
                values.append(0)
                sizes.append(0)
                run -= 16
            tables.append(1)
            symbols.append((run << SIZE_BITS) | size)
            values.append(int(ac[position]))
            sizes.append(size)
            previous = position
        if previous != ac.size - 1:
            tables.append(1)
            symbols.append(EOB)
            values.append(0)
            sizes.append(0)
    return tables, symbols, values, sizes


def _encode_lossy(img: Image, quality: int, depth_scaled: bool) -> CodedImage:
    x = _pad_to_blocks(img.samples)
    shifted = x.astype(np.float64) - (1 << (img.bit_depth - 1))
    coefficients = dctn(_to_blocks(shifted), type=2, axes=(1, 2), norm='ortho')
    table = _table_for(quality, img.bit_depth, depth_scaled)
    quantised = np.floor(coefficients / table + 0.5).astype(np.int64)
    zigzag = quantised.reshape(-1, BLOCK * BLOCK)[:, ZIGZAG]

    table_ids, symbols, values, sizes = _block_symbols(zigzag)
    table_ids = np.array(table_ids)
    symbols = np.array(symbols, dtype=np.int64)
    values = np.array(values, dtype=np.int64)
    sizes = np.array(sizes, dtype=np.int64)
    if np.any(sizes >= 1 << SIZE_BITS):
        raise ValueError("Coefficient magnitude too large for the AC symbol alphabet")

    huffman = []
    codes = np.zeros_like(symbols)
    code_lengths = np.zeros_like(symbols)
    for table_id in (0, 1):
        selected = table_ids == table_id
        present, counts = np.unique(symbols[selected], return_counts=True)
        huffman.append(HuffmanTable.from_frequencies(dict(zip(present.tolist(), counts.tolist()))))
        codes[selected], code_lengths[selected] = huffman[table_id].encode(symbols[selected])

    stream_values = np.column_stack([codes, extra_bits(values, sizes)]).ravel()
    stream_lengths = np.column_stack([code_lengths, sizes]).ravel()
    payload, bits = pack_bits(stream_values, stream_lengths)
    return CodedImage(img.width, img.height, x.shape[1], x.shape[0], img.bit_depth, quality, depth_scaled,
                      huffman, payload, bits)


def _decode_lossy(coded: CodedImage) -> Image:
    reader = BitReader(coded.payload, coded.payload_bits)
    dc_table, ac_table = coded.tables
    n_blocks = (coded.padded_height // BLOCK) * (coded.padded_width // BLOCK)
    zigzag = np.zeros((n_blocks, BLOCK * BLOCK), dtype=np.int64)
    dc = 0
    for index in range(n_blocks):
        size = reader.decode_symbol(dc_table)
        dc += value_from_bits(reader.read(size), size)
        zigzag[index, 0] = dc
        k = 1
        while k < BLOCK * BLOCK:
            symbol = reader.decode_symbol(ac_table)
            if symbol == EOB:
                break
            if symbol == ZRL:
                k += 16
                continue
            k += symbol >> SIZE_BITS
            size = symbol & ((1 << SIZE_BITS) - 1)
            if k >= BLOCK * BLOCK:
                raise CorruptStreamError("AC run runs past the end of the block")
            zigzag[index, k] = value_from_bits(reader.read(size), size)
            k += 1

    table = _table_for(coded.mode, coded.bit_depth, coded.depth_scaled)
    coefficients = zigzag[:, UNZIGZAG].reshape(-1, BLOCK, BLOCK) * table
    blocks = idctn(coefficients.astype(np.float64), type=2, axes=(1, 2), norm='ortho')
    x = _from_blocks(blocks, coded.padded_height, coded.padded_width) + (1 << (coded.bit_depth - 1))
    x = np.clip(np.rint(x), 0, (1 << coded.bit_depth) - 1).astype(np.int64)
    return Image.from_array(x[:coded.height, :coded.width], coded.bit_depth)
