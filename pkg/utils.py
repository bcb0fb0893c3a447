#!/usr/bin/env python3

def farad_to_femtofarad(value):
    return value * 1e15


def square_micron_to_square_metre(area):
    if area < 0:
        raise ValueError("Area cannot be negative")
    return area * 1e-12


def micron_to_metre(length):
    if length < 0:
        raise ValueError("Length cannot be negative")
    return length * 1e-6


def bits_required(max_value: int) -> int:
    """
    Number of bits needed to store every integer in [0, max_value].
    """
    if max_value < 0:
        raise ValueError("Cannot represent negative values with unsigned samples")
    return max(1, int(max_value).bit_length())


def percent(part: float, whole: float) -> float:
    if whole == 0:
        raise ValueError("Cannot express a percentage of zero")
    return part / whole * 100.0
