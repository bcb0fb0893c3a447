#!/usr/bin/env python3

from typing import Optional

from sampler import READOUT_BIT_DEPTH, SENSOR_BIT_DEPTH, SamplingSpec, binary_spec
from system import AcquisitionSystem, DataFlow, Stage
from utils import percent


def create_acquisition_system(system_name: str = 'cs acquisition',
                              width: int = 512,
                              height: int = 512,
                              spec: Optional[SamplingSpec] = None,
                              bit_depth: Optional[int] = None,
                              coded_bytes: Optional[int] = None) -> AcquisitionSystem:
    """
    The sensor chain of one frame: pixel array, on-chip compressed sampler
    and ADC, then the JPEG encoder, the channel, the decoder and the SPL
    reconstruction off chip. coded_bytes is the encoder output size when
    known; otherwise the digital measurements pass through uncompressed.
    """
    spec = spec if spec is not None else binary_spec()
    native_depth = spec.native_bit_depth()
    bit_depth = bit_depth if bit_depth is not None else native_depth
    if not 1 <= bit_depth <= native_depth:
        raise ValueError(f"A {spec.kind} measurement is at most {native_depth} bits, got {bit_depth}")

    system = AcquisitionSystem(system_name)
    pixel_array = Stage('pixel array', 'pixel', on_chip=True)
    system.add_stage(pixel_array)
    sampler = Stage('cs sampler', 'pixel', on_chip=True)
    system.add_stage(sampler)
    adc = Stage('adc', 'adc', on_chip=True)
    system.add_stage(adc)
    encoder = Stage('jpeg encoder', 'jpeg')
    system.add_stage(encoder)
    channel = Stage('channel', 'io')
    system.add_stage(channel)
    decoder = Stage('jpeg decoder')
    system.add_stage(decoder)
    reconstruction = Stage('spl reconstruction')
    system.add_stage(reconstruction)

    pixels = width * height
    measurements = pixels * spec.m // spec.b
    digital_bits = measurements * bit_depth
    coded_bits = coded_bytes * 8 if coded_bytes is not None else digital_bits

    # System variables, read back by the reports
    system.system_vars['sampling kind'] = spec.kind
    system.system_vars['native bit depth'] = native_depth
    system.system_vars['bit depth'] = bit_depth
    system.system_vars['truncated bits'] = native_depth - bit_depth
    system.system_vars['measurements per frame'] = measurements

    system.add_input(pixel_array.name, DataFlow('scene', pixels * SENSOR_BIT_DEPTH))
    system.add_flow(pixel_array.name, sampler.name, DataFlow('pixels', pixels * SENSOR_BIT_DEPTH))
    # the weighted sums leave the sampler as analog values read at full readout width
    system.add_flow(sampler.name, adc.name, DataFlow('analog measurements', measurements * READOUT_BIT_DEPTH))
    system.add_flow(adc.name, encoder.name, DataFlow('digital measurements', digital_bits))
    system.add_flow(encoder.name, channel.name, DataFlow('coded stream', coded_bits))
    system.add_flow(channel.name, decoder.name, DataFlow('received stream', coded_bits))
    system.add_flow(decoder.name, reconstruction.name, DataFlow('decoded measurements', digital_bits))
    system.add_output(reconstruction.name, DataFlow('reconstructed image', pixels * SENSOR_BIT_DEPTH))

    return system


def onchip_reduction(system: AcquisitionSystem) -> float:
    """
    Percentage of the full-width readout removed by the ADC bit depth.
    """
    readout = system.get_flow('cs sampler', 'adc', 'analog measurements').bits
    digital = system.get_flow('adc', 'jpeg encoder', 'digital measurements').bits
    return percent(readout - digital, readout)
