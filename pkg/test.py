#!/usr/bin/env python3

import math
import os
import warnings
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase, main, skipUnless

import numpy as np

import codec
import create_systems
import cs_main
import image_core
import pipeline
import pixel_model
import power
import reconstruct
import sampler
import sweep
import system
import transforms
import utils

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config')
RAMP_4X4 = np.arange(1, 17).reshape(4, 4)


def rectangle_phantom(size: int = 16) -> image_core.Image:
    x = np.full((size, size), 40, dtype=np.int64)
    x[3:11, 4:12] = 200
    return image_core.Image.from_array(x, 8)


def fast_config(**overrides) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig()
    cfg.synthetic_images = 2
    cfg.synthetic_size = 32
    cfg.spl = reconstruct.SplConfig(max_iters=40)
    for name, value in overrides.items():
        setattr(cfg, name, value)
    return cfg


class UtilsTest(TestCase):
    def test_bits_required(self):
        self.assertEqual(utils.bits_required(255), 8)
        self.assertEqual(utils.bits_required(510), 9)
        self.assertEqual(utils.bits_required(4080), 12)
        self.assertEqual(utils.bits_required(0), 1)
        with self.assertRaises(ValueError):
            utils.bits_required(-1)

    def test_unit_conversions(self):
        self.assertAlmostEqual(utils.farad_to_femtofarad(3.288e-14), 32.88)
        self.assertAlmostEqual(utils.square_micron_to_square_metre(45.76), 45.76e-12)
        self.assertAlmostEqual(utils.micron_to_metre(27.5), 27.5e-6)
        with self.assertRaises(ValueError):
            utils.percent(1.0, 0.0)


class ImageCoreTest(TestCase):
    def setUp(self):
        self.temp_dir = TemporaryDirectory()
        self.temp_dir_path = Path(self.temp_dir.name)

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_load_pgm8(self):
        path = str(self.temp_dir_path / "tiny.pgm")
        with open(path, 'wb') as file:
            file.write(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = image_core.load_image(path, 'pgm8')
        self.assertEqual(img, image_core.Image(2, 2, 8, [0, 255, 128, 64]))

    def test_load_pgm16_big_endian(self):
        path = str(self.temp_dir_path / "deep.pgm")
        with open(path, 'wb') as file:
            file.write(b"P5\n# a comment\n2 1\n65535\n" + bytes([0x01, 0x02, 0xff, 0xff]))
        img = image_core.load_image(path, 'pgm16')
        self.assertEqual(img.bit_depth, 16)
        self.assertEqual(img.samples.tolist(), [[258, 65535]])
        with self.assertRaises(image_core.ImageFormatError):
            image_core.load_image(path, 'pgm8')

    def test_raw_sample_out_of_range(self):
        path = str(self.temp_dir_path / "bad.raw")
        with open(path, 'wb') as file:
            file.write(np.array([4096], dtype='<u2').tobytes())
        image_core.write_sidecar(path, {'width': 1, 'height': 1, 'bit_depth': 12})
        with self.assertRaises(image_core.SampleRangeError) as ctx:
            image_core.load_image(path, 'raw')
        self.assertIn("sample out of range", str(ctx.exception))

    def test_malformed_and_truncated_files(self):
        path = str(self.temp_dir_path / "broken.pgm")
        with open(path, 'wb') as file:
            file.write(b"P2\n2 2\n255\n")
        with self.assertRaises(image_core.ImageFormatError):
            image_core.load_image(path)
        with open(path, 'wb') as file:
            file.write(b"P5\n4 4\n255\n" + bytes(10))
        with self.assertRaises(image_core.TruncatedFileError):
            image_core.load_image(path)

    def test_save_load_round_trips(self):
        rng = np.random.default_rng(1)
        deep = image_core.Image.from_array(rng.integers(0, 4096, size=(5, 7)), 12)
        for format in ('pgm16', 'raw'):
            path = str(self.temp_dir_path / f"deep.{format}")
            image_core.save_image(deep, path, format)
            self.assertEqual(image_core.load_image(path, format), deep)

        shallow = image_core.Image.from_array(rng.integers(0, 256, size=(3, 4)), 8)
        path = str(self.temp_dir_path / "shallow.pgm")
        image_core.save_image(shallow, path, 'pgm8')
        self.assertEqual(image_core.load_image(path, 'pgm8'), shallow)

        with self.assertRaises(ValueError):
            image_core.save_image(deep, str(self.temp_dir_path / "no.pgm"), 'pgm8')

    def test_pgm16_depth_follows_maxval(self):
        shallow = image_core.Image.from_array(np.array([[0, 17], [200, 255]]), 8)
        path = str(self.temp_dir_path / "shallow16.pgm")
        image_core.save_image(shallow, path, 'pgm16')
        with open(path, 'rb') as file:
            self.assertEqual(file.read(), b"P5\n2 2\n255\n" + bytes([0, 17, 200, 255]))
        img = image_core.load_image(path, 'pgm16')
        self.assertEqual(img.bit_depth, 8)
        self.assertEqual(img, shallow)

        ten_bit = str(self.temp_dir_path / "ten.pgm")
        with open(ten_bit, 'wb') as file:
            file.write(b"P5\n2 1\n1023\n" + bytes([0x03, 0xff, 0x00, 0x10]))
        img = image_core.load_image(ten_bit, 'pgm16')
        self.assertEqual(img.bit_depth, 10)
        self.assertEqual(img.samples.tolist(), [[1023, 16]])

    def test_raw_sidecar_fields(self):
        img = image_core.Image.from_array(np.zeros((3, 5), dtype=np.int64), 8)
        path = str(self.temp_dir_path / "plain.raw")
        image_core.save_image(img, path, 'raw', extra_metadata={'note': 'dark frame'})
        fields = image_core.read_sidecar(path)
        self.assertEqual(fields['width'], '5')
        self.assertEqual(fields['height'], '3')
        self.assertEqual(fields['bit_depth'], '8')
        self.assertEqual(fields['note'], 'dark frame')

    def test_psnr(self):
        a = image_core.Image.from_array(np.zeros((512, 512), dtype=np.int64), 8)
        self.assertEqual(image_core.psnr(a, a), image_core.INFINITE_PSNR)
        b_samples = np.zeros((512, 512), dtype=np.int64)
        b_samples[100, 200] = 255
        b = image_core.Image.from_array(b_samples, 8)
        self.assertAlmostEqual(image_core.psnr(a, b), 54.19, delta=0.01)
        self.assertEqual(image_core.mse(a, b), image_core.mse(b, a))
        with self.assertRaises(ValueError):
            image_core.psnr(a, image_core.Image.from_array(np.zeros((4, 4), dtype=np.int64), 8))

    def test_truncate_lsbs(self):
        nine = image_core.Image(1, 1, 9, [510])
        self.assertEqual(image_core.truncate_lsbs(nine, 1), image_core.Image(1, 1, 8, [255]))
        twelve = image_core.Image(1, 1, 12, [4080])
        self.assertEqual(image_core.truncate_lsbs(twelve, 3), image_core.Image(1, 1, 9, [510]))
        self.assertEqual(image_core.truncate_lsbs(twelve, 0), twelve)
        with self.assertRaises(ValueError):
            image_core.truncate_lsbs(twelve, 12)

        rng = np.random.default_rng(2)
        img = image_core.Image.from_array(rng.integers(0, 4096, size=(6, 6)), 12)
        for a in range(0, 5):
            for b in range(0, 5):
                self.assertEqual(image_core.truncate_lsbs(image_core.truncate_lsbs(img, a), b),
                                 image_core.truncate_lsbs(img, a + b))

    def test_planes(self):
        gray = image_core.Image.from_array(np.full((4, 4), 90, dtype=np.int64), 8)
        rgb = image_core.merge_planes(gray, gray, gray)
        r, g, b = image_core.split_planes(rgb)
        self.assertTrue(r == g == b)
        self.assertEqual(image_core.merge_planes(*image_core.split_planes(rgb)), rgb)

        path = str(self.temp_dir_path / "colour.ppm")
        rng = np.random.default_rng(3)
        planes = [image_core.Image.from_array(rng.integers(0, 256, size=(4, 6)), 8) for _ in range(3)]
        colour = image_core.merge_planes(*planes)
        image_core.save_rgb_image(colour, path)
        self.assertEqual(image_core.load_rgb_image(path), colour)

    def test_synthetic_scene_is_deterministic(self):
        a = image_core.synthetic_scene(32, 32, seed=4)
        self.assertEqual(a, image_core.synthetic_scene(32, 32, seed=4))
        self.assertNotEqual(a, image_core.synthetic_scene(32, 32, seed=5))
        self.assertEqual(a.bit_depth, 8)


class SamplerTest(TestCase):
    def test_sample_examples(self):
        ramp = image_core.Image.from_array(RAMP_4X4, 8)
        binary = sampler.sample(ramp, sampler.binary_spec())
        self.assertEqual(binary.samples.tolist(), [[6, 8, 10, 12], [22, 24, 26, 28]])
        non_binary = sampler.sample(ramp, sampler.non_binary_spec())
        self.assertEqual(non_binary.samples.tolist(), [[44, 60, 76, 92], [172, 188, 204, 220]])

        white = image_core.Image.from_array(np.full((4, 4), 255, dtype=np.int64), 8)
        saturated = sampler.sample(white, sampler.binary_spec())
        self.assertTrue(np.all(saturated.samples == 510))
        self.assertEqual(saturated.bit_depth, 9)
        self.assertEqual(sampler.sample(white, sampler.non_binary_spec()).bit_depth, 12)
        self.assertTrue(np.all(sampler.sample(white, sampler.non_binary_spec()).samples == 4080))

    def test_columns_orientation(self):
        ramp = image_core.Image.from_array(RAMP_4X4, 8)
        by_columns = sampler.sample(ramp, sampler.binary_spec('columns'))
        self.assertEqual(by_columns.samples.shape, (4, 2))
        self.assertEqual(by_columns.samples.tolist(), [[3, 7], [11, 15], [19, 23], [27, 31]])
        self.assertEqual(by_columns.source_shape, (4, 4))

    def test_sample_preconditions(self):
        with self.assertRaises(ValueError):
            sampler.sample(image_core.Image.from_array(np.zeros((6, 4), dtype=np.int64), 8), sampler.binary_spec())
        with self.assertRaises(ValueError):
            sampler.sample(image_core.Image.from_array(np.zeros((4, 4), dtype=np.int64), 9), sampler.binary_spec())

    def test_spec_backend_blocks(self):
        self.assertTrue(np.allclose(sampler.binary_spec().backend_block, np.array([[1, 1, 0, 0], [0, 0, 1, 1]])
                                    / math.sqrt(2)))
        nb = sampler.non_binary_spec().backend_block
        self.assertAlmostEqual(nb[0, 0], 0.7894, places=4)
        self.assertAlmostEqual(nb[0, 1], 0.6139, places=4)
        self.assertTrue(np.allclose(np.linalg.norm(nb, axis=1), 1.0))
        with self.assertRaises(ValueError):
            sampler.SamplingSpec('binary', sampler.NON_BINARY_BLOCK)

    def test_block_size_equivalence(self):
        rng = np.random.default_rng(5)
        expanded = sampler.SamplingSpec('custom', sampler.expand_block_diagonal(sampler.BINARY_BLOCK, 8))
        for _ in range(100):
            img = image_core.Image.from_array(rng.integers(0, 256, size=(16, 16)), 8)
            small = sampler.sample(img, sampler.binary_spec())
            large = sampler.sample(img, expanded)
            self.assertTrue(np.array_equal(small.samples, large.samples))

    def test_dense_oracle(self):
        rng = np.random.default_rng(6)
        for spec in (sampler.binary_spec(), sampler.non_binary_spec()):
            for height in (4, 8, 16):
                x = rng.integers(0, 256, size=(height, 12))
                phi = sampler.expand_block_diagonal(spec.block, height)
                sampled = sampler.sample(image_core.Image.from_array(x, 8), spec)
                self.assertTrue(np.array_equal(sampled.samples, phi @ x))

    def test_linearity_before_truncation(self):
        rng = np.random.default_rng(7)
        a = rng.integers(0, 128, size=(8, 8))
        b = rng.integers(0, 128, size=(8, 8))
        spec = sampler.non_binary_spec()
        sum_of_samples = sampler.sample(image_core.Image.from_array(a, 8), spec).samples \
            + sampler.sample(image_core.Image.from_array(b, 8), spec).samples
        self.assertTrue(np.array_equal(sampler.sample(image_core.Image.from_array(a + b, 8), spec).samples,
                                       sum_of_samples))

    def test_expand_block_diagonal(self):
        expanded = sampler.expand_block_diagonal(sampler.BINARY_BLOCK, 8)
        self.assertEqual(expanded.tolist(), [[1, 1, 0, 0, 0, 0, 0, 0],
                                             [0, 0, 1, 1, 0, 0, 0, 0],
                                             [0, 0, 0, 0, 1, 1, 0, 0],
                                             [0, 0, 0, 0, 0, 0, 1, 1]])
        self.assertTrue(np.array_equal(sampler.expand_block_diagonal(sampler.BINARY_BLOCK, 4), sampler.BINARY_BLOCK))
        self.assertTrue(np.all(sampler.expand_block_diagonal(sampler.BINARY_BLOCK, 16).sum(axis=1) == 2))
        with self.assertRaises(ValueError):
            sampler.expand_block_diagonal(sampler.BINARY_BLOCK, 6)

    def test_onchip_compression(self):
        self.assertEqual(sampler.onchip_compression(9), 43.75)
        self.assertEqual(sampler.onchip_compression(12), 25.0)
        self.assertEqual(sampler.onchip_compression(16), 0.0)
        self.assertEqual(sampler.onchip_compression(5), 68.75)
        with self.assertRaises(ValueError):
            sampler.onchip_compression(17)

    def test_factorize_lowpass(self):
        for block in (sampler.BINARY_BLOCK, sampler.NON_BINARY_BLOCK):
            decimation, lowpass = sampler.factorize_lowpass(block)
            self.assertTrue(np.array_equal(decimation @ lowpass, block))
            self.assertTrue(np.all(decimation.sum(axis=1) == 1))
            self.assertEqual(lowpass.shape, (4, 4))
        _, lowpass = sampler.factorize_lowpass(sampler.NON_BINARY_BLOCK)
        self.assertEqual(lowpass[1].tolist(), [0, 9, 7, 0])

    def test_coherence(self):
        self.assertAlmostEqual(sampler.coherence(np.eye(4), np.eye(4)), 2.0)
        self.assertAlmostEqual(sampler.coherence(np.eye(2), sampler.haar_basis(2)), 1.0)
        backend = sampler.expand_block_diagonal(sampler.binary_spec().backend_block, 8)
        self.assertAlmostEqual(sampler.coherence(backend, sampler.haar_basis(8)), 2.0)
        with self.assertRaises(ValueError):
            sampler.coherence(np.eye(4), np.ones((4, 4)))
        with self.assertRaises(ValueError):
            sampler.coherence(np.eye(3), np.eye(4))

    def test_truncate_and_save_sampled(self):
        img = image_core.synthetic_scene(16, 16, seed=8)
        sampled = sampler.truncate_sampled(sampler.sample(img, sampler.non_binary_spec()), 3)
        self.assertEqual(sampled.bit_depth, 9)
        self.assertEqual(sampled.truncated_bits, 3)
        with TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "measurements.raw")
            sampler.save_sampled(sampled, path)
            loaded = sampler.load_sampled(path)
        self.assertTrue(np.array_equal(loaded.samples, sampled.samples))
        self.assertEqual(loaded.truncated_bits, 3)
        self.assertEqual(loaded.spec, sampler.non_binary_spec())


class PixelModelTest(TestCase):
    def test_junction_capacitance(self):
        self.assertAlmostEqual(pixel_model.junction_capacitance(pixel_model.DEFAULT_PHOTODIODE), 32.8,
                               delta=32.8 * 0.02)
        zero_bias = pixel_model.DEFAULT_PHOTODIODE.with_bias(0.0)
        self.assertAlmostEqual(pixel_model.junction_capacitance(zero_bias), 53.23, delta=53.23 * 0.001)
        p = pixel_model.DEFAULT_PHOTODIODE
        no_junction = pixel_model.PhotodiodeParams(p.c_j0, p.c_j0sw, p.v_j, p.v_jsw, p.m, p.m_jsw, p.v_d, 0.0, 0.0)
        self.assertEqual(pixel_model.junction_capacitance(no_junction), 0.0)

        values = [pixel_model.junction_capacitance(p.with_bias(v)) for v in np.linspace(0.0, 3.0, 13)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_photodiode_csv(self):
        params = pixel_model.load_photodiode_params_from_csv(os.path.join(CONFIG_DIR, 'photodiode_default.csv'))
        self.assertAlmostEqual(pixel_model.junction_capacitance(params),
                               pixel_model.junction_capacitance(pixel_model.DEFAULT_PHOTODIODE))
        with TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "pd.csv")
            with open(path, 'w') as file:
                file.write("name,value,unit\nc_j0,1.0,\nbogus,2.0,\n")
            with self.assertRaises(ValueError):
                pixel_model.load_photodiode_params_from_csv(path)

    def test_pixel_response(self):
        self.assertAlmostEqual(pixel_model.pixel_response(0, 0), 1.037)
        self.assertAlmostEqual(pixel_model.pixel_response(100, 100), 1.02953, places=5)
        dark = pixel_model.pixel_response(0, 0)
        heavy_first = dark - pixel_model.pixel_response(200, 100)
        heavy_second = dark - pixel_model.pixel_response(100, 200)
        self.assertGreater(heavy_first, heavy_second)
        with self.assertRaises(ValueError):
            pixel_model.pixel_response(-1, 0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            pixel_model.pixel_response(1500, 0)
        self.assertTrue(any(issubclass(w.category, RuntimeWarning) for w in caught))

    def test_weight_grid_and_fit(self):
        grid = pixel_model.simulate_weight_grid()
        self.assertEqual(grid.shape, (100, 3))
        pairs = {(p1, p2) for p1, p2, _ in grid}
        self.assertIn((100.0, 100.0), pairs)
        self.assertIn((1000.0, 1000.0), pairs)
        self.assertTrue(np.all(grid[:, 2] > 0))

        coeffs, weight = pixel_model.fit_weight(grid)
        self.assertAlmostEqual(weight, 1.2229, delta=1e-3)
        self.assertAlmostEqual(round(weight, 2), 1.22)
        expected = np.array(pixel_model.STANDARD_PIXEL_MODEL.coeffs)
        # the grid holds drops, so every coefficient but the constant changes sign
        self.assertTrue(np.allclose(coeffs[1:], -expected[1:], rtol=1e-6, atol=0.0))

    def test_symmetric_model_weight(self):
        grid = pixel_model.simulate_weight_grid(pixel_model.PixelResponseModel((1.0, -1e-4, -1e-4, 0.0, 0.0, 0.0)))
        _, weight = pixel_model.fit_weight(grid)
        self.assertAlmostEqual(weight, 1.0, places=9)

    def test_fit_rank_deficient(self):
        line = np.array([[p, p, 0.001 * p] for p in range(100, 1100, 100)], dtype=np.float64)
        with self.assertRaises(ValueError):
            pixel_model.fit_weight(line)

    def test_weighted_addition_curves(self):
        curves = pixel_model.weighted_addition_curves()
        self.assertTrue(np.all(np.diff(curves['p1 swept']) > 0))
        self.assertTrue(np.all(curves['p1 swept'][1:] > curves['p2 swept'][1:]))

    def test_merged_fill_factor(self):
        self.assertAlmostEqual(pixel_model.merged_fill_factor(0.7), 0.8235, places=4)
        self.assertEqual(pixel_model.merged_fill_factor(1.0), 1.0)

    def test_fpn_identity_and_determinism(self):
        img = image_core.synthetic_scene(16, 16, seed=9)
        noisy, gains = pixel_model.apply_fpn(img, pixel_model.FpnConfig())
        self.assertEqual(noisy, img)
        self.assertTrue(np.all(gains == 1.0))

        cfg = pixel_model.FpnConfig(column_offset_sigma=2.0, pixel_gain_sigma=0.02, seed=11)
        a, _ = pixel_model.apply_fpn(img, cfg)
        b, _ = pixel_model.apply_fpn(img, cfg)
        self.assertEqual(a, b)
        self.assertNotEqual(a, img)

    def test_fpn_below_one_lsb_is_truncated(self):
        rng = np.random.default_rng(12)
        cfg_sigmas = (0.05, 0.0005)
        k = 3
        for seed in range(100):
            # every binary pair sums to the middle of a 2^k interval
            sums = 8 * rng.integers(3, 61, size=(8, 16)) + 4
            x = np.empty((16, 16), dtype=np.int64)
            x[0::2] = sums // 2
            x[1::2] = sums - sums // 2
            clean = image_core.Image.from_array(x, 8)
            cfg = pixel_model.FpnConfig(*cfg_sigmas, seed=seed)
            gains, offsets = pixel_model.draw_fpn(16, 16, cfg)
            self.assertLess(np.max(np.abs(gains * x + offsets[None, :] - x)), 1.5)

            noisy, _ = pixel_model.apply_fpn(clean, cfg)
            spec = sampler.binary_spec()
            truncated_clean = sampler.truncate_sampled(sampler.sample(clean, spec), k)
            truncated_noisy = sampler.truncate_sampled(sampler.sample(noisy, spec), k)
            self.assertTrue(np.array_equal(truncated_clean.samples, truncated_noisy.samples))

    def test_calibrated_spec(self):
        unity = pixel_model.calibrated_spec(np.ones((8, 4)), sampler.binary_spec())
        self.assertEqual(unity.kind, 'custom')
        backend = reconstruct.backend_of(unity)
        nonzero = backend.weights[backend.weights > 0]
        self.assertTrue(np.allclose(nonzero, 1 / math.sqrt(2)))

        gains = np.ones((4, 4))
        gains[0::2] = 9 / 8
        gains[1::2] = 7 / 8
        skewed = reconstruct.backend_of(pixel_model.calibrated_spec(gains, sampler.binary_spec()))
        self.assertAlmostEqual(skewed.weights[0, 0, 0, 0], 0.78935, places=4)
        self.assertAlmostEqual(skewed.weights[0, 0, 1, 0], 0.61394, places=4)

        gains[0, 0] = 0.0
        with self.assertRaises(ValueError):
            pixel_model.calibrated_spec(gains, sampler.binary_spec())

    def test_calibration_improves_reconstruction(self):
        fpn = pixel_model.FpnConfig(pixel_gain_sigma=0.1, seed=13)
        images = [('scene', image_core.synthetic_scene(32, 32, seed=14))]
        plain = pipeline.run_pipeline(fast_config(kind='binary', fpn=fpn), images)
        calibrated = pipeline.run_pipeline(fast_config(kind='binary', fpn=fpn, calibrate_fpn=True), images)
        self.assertGreater(calibrated.mean_psnr_db, plain.mean_psnr_db)

    def test_cds(self):
        reset = image_core.Image.from_array(np.full((2, 2), 200, dtype=np.int64), 8)
        signal = image_core.Image.from_array(np.full((2, 2), 180, dtype=np.int64), 8)
        self.assertTrue(np.all(pixel_model.cds(reset, signal).samples == 20))
        self.assertTrue(np.all(pixel_model.cds(reset, reset).samples == 0))
        shifted_reset = image_core.Image.from_array(reset.samples + 30, 8)
        shifted_signal = image_core.Image.from_array(signal.samples + 30, 8)
        self.assertEqual(pixel_model.cds(shifted_reset, shifted_signal), pixel_model.cds(reset, signal))


class CodecTest(TestCase):
    def test_quant_table(self):
        self.assertTrue(np.array_equal(codec.quant_table(50, 8), codec.STANDARD_LUMINANCE_TABLE))
        self.assertTrue(np.all(codec.quant_table(100, 8) == 1))
        self.assertTrue(np.array_equal(codec.quant_table(50, 12), codec.STANDARD_LUMINANCE_TABLE * 16))
        self.assertTrue(np.all(codec.quant_table(100, 5) >= 1))
        with self.assertRaises(ValueError):
            codec.quant_table(0)

    def test_lossless_round_trip(self):
        rng = np.random.default_rng(15)
        for i in range(1000):
            depth = 5 + i % 8
            height, width = rng.integers(1, 20, size=2)
            img = image_core.Image.from_array(rng.integers(0, 2 ** depth, size=(height, width)), depth)
            self.assertEqual(codec.decode(codec.deserialize(codec.serialize(codec.encode(img)))), img)

    def test_lossless_round_trip_natural(self):
        img = image_core.synthetic_scene(60, 44, seed=16)
        self.assertEqual(codec.decode(codec.encode(img, codec.LOSSLESS)), img)

    def test_constant_image(self):
        grey = image_core.Image.from_array(np.full((64, 64), 128, dtype=np.int64), 8)
        for quality in (10, 75, 100):
            coded = codec.encode(grey, quality)
            self.assertEqual(codec.decode(coded), grey)
            self.assertLess(coded.size_bytes, 64 * 64 // 4)

        bright = image_core.Image.from_array(np.full((20, 13), 201, dtype=np.int64), 8)
        decoded = codec.decode(codec.encode(bright, 75)).samples
        self.assertEqual(decoded.shape, (20, 13))
        self.assertEqual(len(np.unique(decoded)), 1)
        self.assertLessEqual(abs(int(decoded[0, 0]) - 201), 8)

    def test_size_and_quality_ordering(self):
        img = image_core.synthetic_scene(64, 64, seed=17)
        q75 = codec.encode(img, 75)
        q100 = codec.encode(img, 100)
        lossless = codec.encode(img, codec.LOSSLESS)
        self.assertLess(q75.size_bytes, q100.size_bytes)
        self.assertLess(q75.size_bytes, lossless.size_bytes)
        self.assertLess(image_core.psnr(img, codec.decode(codec.encode(img, 25))),
                        image_core.psnr(img, codec.decode(codec.encode(img, 95))))

    def test_deterministic_stream(self):
        img = image_core.synthetic_scene(32, 32, seed=18)
        self.assertEqual(codec.serialize(codec.encode(img, 75)), codec.serialize(codec.encode(img, 75)))

    def test_deep_lossy_round_trip(self):
        img = sampler.sampled_to_image(sampler.sample(image_core.synthetic_scene(32, 32, seed=19),
                                                      sampler.non_binary_spec()))
        for depth_scaled in (False, True):
            coded = codec.deserialize(codec.serialize(codec.encode(img, 90, depth_scaled)))
            self.assertEqual(coded.depth_scaled, depth_scaled)
            decoded = codec.decode(coded)
            self.assertEqual(decoded.bit_depth, 12)
            self.assertEqual(decoded.shape, img.shape)

    def test_corrupt_stream(self):
        with self.assertRaises(codec.CorruptStreamError):
            codec.deserialize(bytes(64))
        with self.assertRaises(codec.CorruptStreamError):
            codec.deserialize(codec.MAGIC + bytes(40))
        data = codec.serialize(codec.encode(image_core.synthetic_scene(16, 16, seed=20), 75))
        with self.assertRaises(codec.CorruptStreamError):
            codec.deserialize(data[:-3])

    def test_normalized_size(self):
        img = image_core.synthetic_scene(32, 32, seed=21)
        baseline = codec.encode(img, 75)
        self.assertEqual(codec.normalized_size(baseline, baseline), 100.0)
        self.assertEqual(codec.normalized_size(0, baseline), 0.0)
        with self.assertRaises(ValueError):
            codec.normalized_size(baseline, 0)

    def test_huffman_length_limit(self):
        # Fibonacci frequencies force a code deeper than 16 bits without limiting
        frequencies = {}
        a, b = 1, 1
        for symbol in range(30):
            frequencies[symbol] = a
            a, b = b, a + b
        table = codec.HuffmanTable.from_frequencies(frequencies)
        self.assertLessEqual(max(table.lengths.values()), 16)
        self.assertEqual(len(table.codes), 30)

    def test_parse_codec_mode(self):
        self.assertEqual(codec.parse_codec_mode('Lossless'), codec.LOSSLESS)
        self.assertEqual(codec.parse_codec_mode('75'), 75)
        with self.assertRaises(ValueError):
            codec.parse_codec_mode('101')


class TransformsTest(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(22)
        self.x = self.rng.normal(size=(64, 64))

    def test_dwt_round_trip(self):
        coeffs = transforms.dwt_forward(self.x)
        self.assertLess(np.max(np.abs(transforms.dwt_inverse(coeffs) - self.x)), 1e-8)
        with self.assertRaises(ValueError):
            transforms.dwt_forward(np.zeros((20, 20)), levels=3)

    def test_dwt_constant_and_parseval(self):
        constant = transforms.dwt_forward(np.full((32, 32), 7.0))
        for bands in constant.details:
            for band in bands.values():
                self.assertLess(np.max(np.abs(band)), 1e-10)

        coeffs = transforms.dwt_forward(self.x, wavelet=transforms.ORTHOGONAL_DWT_WAVELET)
        energy = np.sum(coeffs.approximation ** 2) + sum(np.sum(band ** 2) for bands in coeffs.details
                                                         for band in bands.values())
        self.assertAlmostEqual(energy / np.sum(self.x ** 2), 1.0, delta=1e-6)

    def test_ddwt_round_trip_and_redundancy(self):
        coeffs = transforms.ddwt_forward(self.x)
        self.assertLess(np.max(np.abs(transforms.ddwt_inverse(coeffs) - self.x)), 1e-6)
        self.assertEqual(coeffs.coefficient_count(), 4 * self.x.size)
        self.assertEqual(coeffs.redundancy, 4)
        for bands in coeffs.details:
            self.assertEqual(len({orientation for orientation, _ in bands}), 6)

    def test_linearity(self):
        y = self.rng.normal(size=(64, 64))
        for basis in transforms.BASES:
            combined = transforms.forward(2.5 * self.x + y, basis)
            separate_x = transforms.forward(self.x, basis)
            separate_y = transforms.forward(y, basis)
            for level in range(combined.levels):
                for key, band in combined.bands(level).items():
                    expected = 2.5 * separate_x.bands(level)[key] + separate_y.bands(level)[key]
                    self.assertLess(np.max(np.abs(band - expected)), 1e-9)

    def test_ddwt_diagonal_orientation(self):
        n = 64
        yy, xx = np.mgrid[0:n, 0:n]
        line = (np.abs(yy - xx) <= 1).astype(np.float64) * 100.0
        mirrored = np.fliplr(line)
        e_line = transforms.orientation_energies(transforms.ddwt_forward(line), level=1)
        e_mirror = transforms.orientation_energies(transforms.ddwt_forward(mirrored), level=1)
        # the 45 and 135 degree subbands swap roles under a mirror
        self.assertNotEqual(np.argmax(e_line[[1, 4]]), np.argmax(e_mirror[[1, 4]]))
        self.assertGreater(max(e_line[1], e_line[4]), 2 * min(e_line[1], e_line[4]))

    def test_ddwt_shift_robustness(self):
        n = 64
        xx = np.mgrid[0:n, 0:n][1]

        def level_energy(basis, edge_column):
            edge = (xx >= edge_column).astype(np.float64) * 100.0
            coeffs = transforms.forward(edge, basis, levels=3)
            bands = coeffs.bands(coeffs.levels - 1)
            return sum(np.sum(band ** 2) for band in bands.values())

        changes = {}
        for basis in transforms.BASES:
            energies = [level_energy(basis, c) for c in (29, 30, 31, 32)]
            changes[basis] = (max(energies) - min(energies)) / max(energies)
        self.assertLess(changes['ddwt'], changes['dwt'])

    def test_hard_threshold(self):
        band = np.array([[-3.0, 1.0, 5.0]])
        coeffs = transforms.SubbandSet('dwt', 1, np.array([[0.5]]), [{('horizontal', 'real'): band}], (2, 2))
        thresholded = transforms.hard_threshold(coeffs, 2.0)
        self.assertEqual(thresholded.bands(0)[('horizontal', 'real')].tolist(), [[-3.0, 0.0, 5.0]])
        self.assertEqual(thresholded.approximation.tolist(), [[0.5]])
        self.assertEqual(transforms.hard_threshold(coeffs, 0.0).bands(0)[('horizontal', 'real')].tolist(),
                         band.tolist())

        full = transforms.ddwt_forward(self.x)
        emptied = transforms.hard_threshold(full, math.inf)
        self.assertTrue(all(np.all(b == 0) for bands in emptied.details for b in bands.values()))
        self.assertTrue(np.array_equal(emptied.approximation, full.approximation))
        with self.assertRaises(ValueError):
            transforms.hard_threshold(full, -1.0)

    def test_estimate_sigma(self):
        zeros = transforms.SubbandSet('dwt', 1, np.zeros((1, 1)), [{('diagonal', 'real'): np.zeros((4, 4))}], (2, 2))
        self.assertEqual(transforms.estimate_sigma(zeros), 0.0)
        gaussian = transforms.SubbandSet('dwt', 1, np.zeros((1, 1)),
                                         [{('diagonal', 'real'): self.rng.normal(size=(100, 100))}], (2, 2))
        self.assertAlmostEqual(transforms.estimate_sigma(gaussian), 1.0, delta=0.05)

        base = transforms.estimate_sigma(transforms.dwt_forward(self.x))
        self.assertAlmostEqual(transforms.estimate_sigma(transforms.dwt_forward(-3.0 * self.x)), 3.0 * base)

    def test_default_levels(self):
        self.assertEqual(transforms.default_levels((512, 512)), 5)
        self.assertEqual(transforms.default_levels((16, 16)), 1)


class ReconstructTest(TestCase):
    def test_backend_of(self):
        self.assertTrue(np.allclose(reconstruct.backend_of(sampler.binary_spec()).block, 1 / math.sqrt(2) *
                                    sampler.BINARY_BLOCK))
        nb = reconstruct.backend_of(sampler.non_binary_spec()).block
        self.assertAlmostEqual(nb[0, 0], 0.7894, places=4)
        self.assertAlmostEqual(nb[0, 1], 0.6139, places=4)
        single = sampler.SamplingSpec('custom', np.array([[1, 0, 0, 0], [0, 0, 1, 0]]))
        self.assertTrue(np.array_equal(reconstruct.backend_of(single).block, [[1, 0, 0, 0], [0, 0, 1, 0]]))

    def test_initialize(self):
        backend = reconstruct.backend_of(sampler.binary_spec())
        self.assertTrue(np.all(reconstruct.initialize(np.zeros((4, 8)), backend) == 0))
        y = np.array([[2.0, 4.0, 6.0], [1.0, 3.0, 5.0]])
        x0 = reconstruct.initialize(y, backend)
        self.assertEqual(x0.shape, (4, 3))
        # each measurement row spreads back over the two pixel rows it summed
        self.assertTrue(np.allclose(x0, np.vstack([y[0], y[0], y[1], y[1]]) / math.sqrt(2)))
        phi = sampler.expand_block_diagonal(backend.block, 4)
        self.assertTrue(np.allclose(x0, phi.T @ y))

        rng = np.random.default_rng(23)
        for spec in (sampler.binary_spec(), sampler.non_binary_spec('columns')):
            backend = reconstruct.backend_of(spec)
            y = rng.normal(size=(4, 8)) if spec.orientation == 'rows' else rng.normal(size=(8, 4))
            self.assertTrue(np.allclose(backend.forward(backend.adjoint(y)), y))

    def test_landweber_step(self):
        rng = np.random.default_rng(24)
        backend = reconstruct.backend_of(sampler.non_binary_spec())
        phi = sampler.expand_block_diagonal(backend.block, 16)
        for _ in range(20):
            x = rng.normal(size=(16, 12))
            y = rng.normal(size=(8, 12))
            oracle = x + phi.T @ (y - phi @ x)
            self.assertLess(np.max(np.abs(reconstruct.landweber_step(x, y, backend) - oracle)), 1e-10)

        x = rng.normal(size=(16, 12))
        consistent = backend.forward(x)
        self.assertTrue(np.allclose(reconstruct.landweber_step(x, consistent, backend), x))
        self.assertTrue(np.allclose(reconstruct.landweber_step(np.zeros((16, 12)), y, backend),
                                    reconstruct.initialize(y, backend)))

    def test_wiener3x3(self):
        constant = np.full((8, 8), 42.0)
        self.assertTrue(np.allclose(reconstruct.wiener3x3(constant), constant))

        yy, xx = np.mgrid[0:16, 0:16].astype(np.float64)
        gradient = 2.0 * xx + yy
        spiked = gradient.copy()
        spiked[8, 8] += 50.0
        filtered = reconstruct.wiener3x3(spiked)
        self.assertLess(abs(filtered[8, 8] - gradient[8, 8]), 50.0)

        rng = np.random.default_rng(25)
        x = rng.normal(size=(12, 12))
        self.assertTrue(np.allclose(reconstruct.wiener3x3(x + 17.0), reconstruct.wiener3x3(x) + 17.0))

    def test_zero_measurements(self):
        zeros = sampler.SampledImage(np.zeros((8, 16), dtype=np.int64), 9, 0, sampler.binary_spec())
        recon, trace = reconstruct.spl_reconstruct(zeros)
        self.assertTrue(np.all(recon.samples == 0))
        self.assertLessEqual(trace.iterations, 2)
        self.assertTrue(trace.converged)

    def test_beats_least_norm_estimate(self):
        phantom = rectangle_phantom()
        sampled = sampler.sample(phantom, sampler.binary_spec())
        recon, trace = reconstruct.spl_reconstruct(sampled)
        baseline = reconstruct.least_norm_estimate(sampled)
        self.assertLess(image_core.mse(phantom, recon), image_core.mse(phantom, baseline))

    def test_residual_not_above_initialization(self):
        rng = np.random.default_rng(26)
        for seed in range(3):
            img = image_core.synthetic_scene(16, 16, seed=seed)
            spec = sampler.non_binary_spec()
            sampled = sampler.sample(img, spec)
            backend = reconstruct.backend_of(spec)
            y = backend.scale_measurements(reconstruct.recentre_measurements(sampled))
            initial = reconstruct.measurement_residual(reconstruct.initialize(y, backend), y, backend)
            _, trace = reconstruct.spl_reconstruct(sampled, cfg=reconstruct.SplConfig(max_iters=int(rng.integers(3, 30))))
            self.assertLessEqual(trace.rows[-1][2], initial + 1e-9)

    def test_termination_and_determinism(self):
        img = image_core.synthetic_scene(16, 16, seed=27)
        sampled = sampler.sample(img, sampler.binary_spec())
        cfg = reconstruct.SplConfig(max_iters=3, epsilon=1e-12)
        recon_a, trace = reconstruct.spl_reconstruct(sampled, cfg=cfg)
        recon_b, _ = reconstruct.spl_reconstruct(sampled, cfg=cfg)
        self.assertEqual(trace.iterations, 3)
        self.assertFalse(trace.converged)
        self.assertEqual(recon_a, recon_b)

    def test_recentre_truncated_measurements(self):
        sampled = sampler.SampledImage([[3, 5]], 9, 3, sampler.binary_spec())
        self.assertEqual(reconstruct.recentre_measurements(sampled).tolist(), [[28.0, 44.0]])

    def test_mismatched_spec(self):
        sampled = sampler.sample(rectangle_phantom(), sampler.binary_spec())
        with self.assertRaises(ValueError):
            reconstruct.spl_reconstruct(sampled, sampler.binary_spec('columns'))

    def test_trace_csv(self):
        sampled = sampler.sample(rectangle_phantom(), sampler.binary_spec())
        _, trace = reconstruct.spl_reconstruct(sampled, cfg=reconstruct.SplConfig(max_iters=4))
        with TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "trace.csv")
            reconstruct.write_trace_csv(trace, path)
            with open(path) as file:
                lines = file.read().splitlines()
        self.assertEqual(lines[0], "iteration,d,residual")
        self.assertEqual(len(lines), trace.iterations + 1)

    @skipUnless(os.environ.get('CS_LENA_PGM'), "set CS_LENA_PGM to a 512x512 grayscale Lena pgm")
    def test_lena_end_to_end(self):
        lena = image_core.load_image(os.environ['CS_LENA_PGM'], 'pgm8')
        results = {}
        for kind in ('binary', 'non_binary'):
            sampled = sampler.sample(lena, sampler.spec_from_kind(kind))
            received = sampler.image_to_sampled(codec.decode(codec.encode(sampler.sampled_to_image(sampled))),
                                                sampled.spec)
            recon, _ = reconstruct.spl_reconstruct(received)
            results[kind] = image_core.psnr(lena, recon)
        self.assertGreaterEqual(results['non_binary'], 30.0)
        self.assertLessEqual(abs(results['binary'] - results['non_binary']), 0.3)


class SystemTest(TestCase):
    def setUp(self):
        self.temp_dir = TemporaryDirectory()
        self.temp_dir_path = Path(self.temp_dir.name)

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_system_save_source(self):
        my_system = system.AcquisitionSystem("Test System")
        stage_a = system.Stage("Stage A", on_chip=True)
        stage_b = system.Stage("Stage B")
        my_system.add_stage(stage_a)
        my_system.add_stage(stage_b)
        my_system.add_flow(stage_a.name, stage_b.name, system.DataFlow("bits ab", 8192))
        my_system.add_input(stage_a.name, system.DataFlow("scene", 16384))

        initial_num_files_in_temp_dir = len(os.listdir(str(self.temp_dir_path)))
        my_system.save_source(str(self.temp_dir_path))
        final_num_files_in_temp_dir = len(os.listdir(str(self.temp_dir_path)))
        self.assertEqual(final_num_files_in_temp_dir, initial_num_files_in_temp_dir + 1)
        self.assertIn('color=blue', my_system.source())

    def test_modify_shared_flow(self):
        # The system and the stages all share and modify the same flow object.
        my_system = system.AcquisitionSystem("Test System")
        stage_a = system.Stage("Stage A")
        stage_b = system.Stage("Stage B")
        my_system.add_stage(stage_a)
        my_system.add_stage(stage_b)
        flow_ab = system.DataFlow("flow ab", 1.0)
        my_system.add_flow(stage_a.name, stage_b.name, flow_ab)
        self.assertEqual(my_system.get_flow(stage_a.name, stage_b.name, flow_ab.name).bits, 1.0)
        my_system.stages["Stage A"].outputs["flow ab"].bits = 2.0
        self.assertEqual(my_system.get_flow(stage_a.name, stage_b.name, flow_ab.name).bits, 2.0)
        with self.assertRaises(ValueError):
            my_system.add_flow(stage_a.name, stage_b.name, system.DataFlow("flow ab", 1.0))
        with self.assertRaises(ValueError):
            flow_ab.bits = -1.0

    def test_acquisition_system(self):
        binary = create_systems.create_acquisition_system('binary chain', 512, 512, sampler.binary_spec())
        self.assertEqual(create_systems.onchip_reduction(binary), 43.75)
        self.assertEqual(binary.system_vars['bit depth'], 9)
        self.assertEqual(len(binary.stages_in_chain()), 7)
        adc = binary.stages['adc']
        self.assertAlmostEqual(adc.reduction(), 0.4375)
        self.assertIn('DataFlow(', adc.report_flow())
        self.assertTrue(adc.report_flow().startswith('Stage adc:'))

        truncated = create_systems.create_acquisition_system('non-binary chain', 64, 64, sampler.non_binary_spec(),
                                                             bit_depth=7, coded_bytes=900)
        self.assertEqual(create_systems.onchip_reduction(truncated), sampler.onchip_compression(7))
        self.assertEqual(truncated.get_flow('jpeg encoder', 'channel', 'coded stream').bits, 7200)
        with self.assertRaises(ValueError):
            create_systems.create_acquisition_system('too deep', 64, 64, sampler.binary_spec(), bit_depth=10)

    def test_annotate_power(self):
        chain = create_systems.create_acquisition_system()
        chain.annotate_power(power.estimate_power(power.design1_power_model(), 0.25).breakdown_mw)
        self.assertIn('adc: 45.00 mW', chain.source())


class PowerTest(TestCase):
    def test_design1(self):
        model = power.design1_power_model()
        quarter = power.estimate_power(model, 0.25)
        self.assertAlmostEqual(quarter.breakdown_mw['io'], 20.25)
        self.assertAlmostEqual(quarter.breakdown_mw['adc'], 45.0)
        self.assertAlmostEqual(quarter.total_mw, 81.13, delta=81.13 * 0.01)
        self.assertAlmostEqual(quarter.savings_pct, 23.59, delta=23.59 * 0.01)

        deep = power.estimate_power(model, 0.6875)
        self.assertAlmostEqual(deep.total_mw, 37.2, delta=37.2 * 0.02)
        self.assertAlmostEqual(deep.savings_pct, 64.87, delta=64.87 * 0.02)

        none = power.estimate_power(model, 0.0)
        self.assertAlmostEqual(none.total_mw, model.baseline_total())
        self.assertEqual(none.savings_pct, 0.0)

    def test_design2_savings_span(self):
        model = power.design2_power_model()
        savings = [b.savings_pct for b in power.power_range_report(model, [12, 5])]
        self.assertAlmostEqual(savings[0], 23.5, delta=0.5)
        self.assertAlmostEqual(savings[1], 65.0, delta=1.0)

    def test_linearity_and_range(self):
        model = power.design1_power_model()
        a = power.estimate_power(model, 0.2).breakdown_mw['jpeg']
        b = power.estimate_power(model, 0.4).breakdown_mw['jpeg']
        c = power.estimate_power(model, 0.6).breakdown_mw['jpeg']
        self.assertAlmostEqual(b - a, c - b)
        with self.assertRaises(ValueError):
            power.estimate_power(model, 1.0)
        with self.assertRaises(ValueError):
            power.estimate_power(model, -0.1)
        self.assertEqual(power.compression_ratio(12), 0.25)

    def test_power_csv(self):
        loaded = power.load_power_model_from_csv(os.path.join(CONFIG_DIR, 'power_design2.csv'), 'design 2')
        self.assertAlmostEqual(loaded.baseline_total(), power.design2_power_model().baseline_total())
        with TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "bad_power.csv")
            with open(path, 'w') as file:
                file.write("category,baseline_mw,scales\nlaser,1.0,true\n")
            with self.assertRaises(ValueError):
                power.load_power_model_from_csv(path)
            out = os.path.join(temp_dir, "power.csv")
            power.write_power_csv(power.power_range_report(loaded, [9, 8]), out)
            with open(out) as file:
                self.assertEqual(len(file.read().splitlines()), 3)


class PipelineTest(TestCase):
    def setUp(self):
        self.temp_dir = TemporaryDirectory()
        self.temp_dir_path = Path(self.temp_dir.name)
        self.images = [('scene', image_core.synthetic_scene(32, 32, seed=28))]

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_binary_lossless_row(self):
        report = pipeline.run_pipeline(fast_config(kind='binary'), self.images)
        self.assertEqual(len(report.rows), 1)
        row = report.rows[0]
        self.assertEqual(row.bitdepth, 9)
        self.assertEqual(row.onchip_compression_pct, 43.75)
        self.assertEqual(row.onchip_compression_pct, sampler.onchip_compression(row.bitdepth))

    def test_non_binary_lossy_truncated(self):
        lossless = pipeline.run_pipeline(fast_config(), self.images)
        lossy = pipeline.run_pipeline(fast_config(truncated_bits=3, codec_mode=75), self.images)
        self.assertEqual(lossless.rows[0].onchip_compression_pct, 25.0)
        self.assertEqual(lossy.rows[0].bitdepth, 9)
        self.assertEqual(lossy.rows[0].onchip_compression_pct, 43.75)
        self.assertLess(lossy.mean_psnr_db, lossless.mean_psnr_db)

    def test_constant_image(self):
        flat = [('flat', image_core.Image.from_array(np.full((8, 8), 77, dtype=np.int64), 8))]
        report = pipeline.run_pipeline(fast_config(kind='binary'), flat)
        self.assertEqual(len(report.rows), 1)
        path = str(self.temp_dir_path / "flat.csv")
        pipeline.emit_report(report, path)
        with open(path) as file:
            self.assertEqual(len(file.read().splitlines()), 2)
        infinite = pipeline.ReportRow('flat', 'gray', 'lossless', 9, 120.0, math.inf)
        self.assertEqual(infinite.csv_fields()[3], 'inf')

    def test_rgb_planes(self):
        planes = [image_core.synthetic_scene(32, 32, seed=s) for s in (29, 30, 31)]
        report = pipeline.run_pipeline(fast_config(), [('colour', image_core.merge_planes(*planes))])
        self.assertEqual([row.plane for row in report.rows], ['red', 'green', 'blue'])

    def test_error_context(self):
        odd = [('odd', image_core.Image.from_array(np.zeros((6, 8), dtype=np.int64), 8))]
        with self.assertRaises(ValueError) as ctx:
            pipeline.run_pipeline(fast_config(), odd)
        self.assertIn('odd', str(ctx.exception))

    def test_emit_report_csv(self):
        report = pipeline.run_pipeline(fast_config(), self.images)
        path_a = str(self.temp_dir_path / "a.csv")
        path_b = str(self.temp_dir_path / "b.csv")
        pipeline.emit_report(report, path_a)
        pipeline.emit_report(pipeline.run_pipeline(fast_config(), self.images), path_b)
        with open(path_a, 'rb') as file_a, open(path_b, 'rb') as file_b:
            content = file_a.read()
            self.assertEqual(content, file_b.read())
        self.assertTrue(content.startswith(b"quality,bitdepth,normalized_size,psnr_db,onchip_compression_pct\n"))

        with self.assertRaises(ValueError):
            pipeline.emit_report(pipeline.RunReport('binary', 75, 9), str(self.temp_dir_path / "empty.csv"))

    def test_emit_report_svg(self):
        reports = []
        for kind in ('binary', 'non_binary'):
            for quality in (50, 90):
                cfg = pipeline.with_cell(fast_config(), kind, quality, 9)
                reports.append(pipeline.run_pipeline(cfg, self.images))
        path = str(self.temp_dir_path / "psnr.svg")
        pipeline.emit_report(reports, path, 'svg', 'psnr_db')
        with open(path) as file:
            content = file.read()
        self.assertIn('binary 9-bit', content)
        self.assertIn('non_binary 9-bit', content)
        with self.assertRaises(ValueError):
            pipeline.emit_report(reports, path, 'svg', 'bitrate')

    def test_artifacts(self):
        pipeline.run_pipeline(fast_config(), self.images, artifact_dir=str(self.temp_dir_path))
        files = os.listdir(str(self.temp_dir_path))
        self.assertIn('scene_gray_recon.pgm', files)
        self.assertIn('scene_gray_sampled.raw', files)

    def test_load_config(self):
        cfg = pipeline.load_config_from_csv(os.path.join(CONFIG_DIR, 'config_default.csv'))
        self.assertEqual(cfg.kind, 'non_binary')
        self.assertEqual(cfg.codec_mode, codec.LOSSLESS)
        self.assertIsNone(cfg.spl.levels)
        self.assertEqual(cfg.spl.max_iters, 200)

        path = str(self.temp_dir_path / "cfg.csv")
        with open(path, 'w') as file:
            file.write("name,value,type\ncodec mode,75,integer\ntruncated bits,2,integer\n"
                       "input paths,a.pgm; b.pgm,string\n")
        cfg = pipeline.load_config_from_csv(path)
        self.assertEqual(cfg.codec_mode, 75)
        self.assertEqual(cfg.bit_depth, 10)
        self.assertEqual(cfg.input_paths, ['a.pgm', 'b.pgm'])

        with open(path, 'w') as file:
            file.write("name,value,type\nframe rate,30,number\n")
        with self.assertRaises(ValueError):
            pipeline.load_config_from_csv(path)

        with open(path, 'w') as file:
            file.write("name,value,type\ntruncated bits,9,integer\nsampling kind,binary,string\n")
        with self.assertRaises(ValueError):
            pipeline.load_config_from_csv(path)

    def test_load_config_boolean(self):
        path = str(self.temp_dir_path / "cfg.csv")
        with open(path, 'w') as file:
            file.write("name,value,type\nsave artifacts,True,boolean\nfpn calibrate,false,boolean\n")
        cfg = pipeline.load_config_from_csv(path)
        self.assertTrue(cfg.save_artifacts)
        self.assertFalse(cfg.calibrate_fpn)

        with open(path, 'w') as file:
            file.write("name,value,type\nsave artifacts,ture,boolean\n")
        with self.assertRaises(ValueError) as ctx:
            pipeline.load_config_from_csv(path)
        self.assertIn("ture", str(ctx.exception))


def fabricated_cell(kind, quality, bitdepth, size, psnr_db):
    cell = sweep.SweepCell(kind, quality, bitdepth)
    report = pipeline.RunReport(kind, quality, bitdepth)
    report.rows.append(pipeline.ReportRow('img', 'gray', quality, bitdepth, size, psnr_db))
    cell.report = report
    cell.success = True
    return cell


class SweepTest(TestCase):
    def setUp(self):
        self.images = [(f"scene{s}", image_core.synthetic_scene(32, 32, seed=s)) for s in (32, 33)]

    def test_single_cell_matches_run_pipeline(self):
        cells = sweep.SweepRunner([sweep.SweepCell('binary', 75, 8)]).run(fast_config(), self.images)
        direct = pipeline.run_pipeline(pipeline.with_cell(fast_config(), 'binary', 75, 8), self.images)
        self.assertTrue(cells[0].success)
        self.assertEqual([r.csv_fields() for r in cells[0].report.rows], [r.csv_fields() for r in direct.rows])

    def test_failed_cell_is_recorded(self):
        cells = sweep.SweepRunner([sweep.SweepCell('binary', 75, 10), sweep.SweepCell('binary', 75, 9)]) \
            .run(fast_config(), self.images)
        by_depth = {c.bitdepth: c for c in cells}
        self.assertFalse(by_depth[10].success)
        self.assertIn('truncated bits', by_depth[10].error_msg)
        self.assertTrue(by_depth[9].success)

    def test_trends_on_synthetic_corpus(self):
        images = [(f"scene{s}", image_core.synthetic_scene(64, 64, seed=s)) for s in (32, 33)]
        cells = sweep.grid_cells(['binary', 'non_binary'], [50, 75, 100, 'lossless'], [9, 8])
        cells = sweep.SweepRunner(cells).run(fast_config(), images)
        self.assertTrue(all(c.success for c in cells))
        # size and PSNR both rise with quality and fall with truncation
        self.assertEqual(sweep.audit_size_monotonicity(cells), [])
        lossless = {c.bitdepth: c.report.mean_psnr_db for c in cells
                    if c.quality == codec.LOSSLESS and c.kind == 'binary'}
        self.assertGreaterEqual(lossless[9], lossless[8])

        # the two sampling kinds give nearly the same PSNR once both are at the same depth
        gaps = sweep.audit_kind_convergence(cells)
        self.assertEqual([(g[0], g[1]) for g in gaps],
                         [(q, d) for q in (50, 75, 100, codec.LOSSLESS) for d in (9, 8)])
        for quality, bitdepth, _, psnr_gap in gaps:
            self.assertLessEqual(psnr_gap, 0.3, f"q{quality} {bitdepth}-bit")

        with TemporaryDirectory() as temp_dir:
            written = sweep.report_sweep(temp_dir, cells)
            names = sorted(os.path.basename(f) for f in written)
            self.assertEqual(names, ['normalized_size_vs_quality.svg', 'psnr_db_vs_quality.svg', 'sweep_binary.csv',
                                     'sweep_non_binary.csv'])
            with open(os.path.join(temp_dir, 'sweep_binary.csv')) as file:
                lines = file.read().splitlines()
            self.assertEqual(lines[0], ",".join(pipeline.REPORT_HEADER))
            self.assertEqual(len(lines), len([c for c in cells if c.kind == 'binary']) + 1)

    def test_audit_size_monotonicity(self):
        good = [fabricated_cell('binary', 50, 9, 60.0, 30.0), fabricated_cell('binary', 75, 9, 80.0, 31.0),
                fabricated_cell('binary', 75, 8, 70.0, 30.5)]
        self.assertEqual(sweep.audit_size_monotonicity(good), [])
        bad = good + [fabricated_cell('binary', 75, 7, 75.0, 30.9)]
        violations = sweep.audit_size_monotonicity(bad)
        self.assertEqual(len(violations), 2)

    def test_audit_kind_convergence(self):
        cells = [fabricated_cell('binary', 75, 9, 80.0, 31.0), fabricated_cell('non_binary', 75, 9, 82.0, 31.5),
                 fabricated_cell('non_binary', 75, 12, 150.0, 32.0)]
        gaps = sweep.audit_kind_convergence(cells)
        self.assertEqual(len(gaps), 1)
        quality, bitdepth, size_gap, psnr_gap = gaps[0]
        self.assertEqual((quality, bitdepth), (75, 9))
        self.assertAlmostEqual(size_gap, 2.0)
        self.assertAlmostEqual(psnr_gap, 0.5)

    def test_grid_from_csv(self):
        runner = sweep.sweep_runner_from_csv(os.path.join(CONFIG_DIR, 'sweep_default.csv'))
        self.assertEqual(len(runner.cells), 55)
        self.assertEqual(runner.cells[0].key, ('binary', 25, -9))
        self.assertEqual(runner.cells[-1].key, ('non_binary', 101, -6))


class CliTest(TestCase):
    def setUp(self):
        self.temp_dir = TemporaryDirectory()
        self.temp_dir_path = Path(self.temp_dir.name)

    def tearDown(self):
        self.temp_dir.cleanup()

    def test_exit_codes(self):
        self.assertEqual(cs_main.main([]), cs_main.EXIT_USAGE)
        self.assertEqual(cs_main.main(['transmogrify']), cs_main.EXIT_USAGE)
        self.assertEqual(cs_main.main(['power', '--bitdepth', 'nine']), cs_main.EXIT_USAGE)
        missing = str(self.temp_dir_path / "missing.raw")
        self.assertEqual(cs_main.main(['reconstruct', missing, str(self.temp_dir_path / "out.pgm")]),
                         cs_main.EXIT_DATA_ERROR)
        self.assertEqual(cs_main.main(['power', '-b', '20']), cs_main.EXIT_DATA_ERROR)

    def test_sample_then_reconstruct(self):
        source = str(self.temp_dir_path / "scene.pgm")
        image_core.save_image(image_core.synthetic_scene(32, 32, seed=34), source, 'pgm8')
        measurements = str(self.temp_dir_path / "scene.raw")
        output = str(self.temp_dir_path / "scene_recon.pgm")
        trace = str(self.temp_dir_path / "trace.csv")
        self.assertEqual(cs_main.main(['sample', source, measurements, '-k', 'binary', '-b', '1']),
                         cs_main.EXIT_SUCCESS)
        self.assertEqual(cs_main.main(['reconstruct', measurements, output, '--max_iters', '5', '-t', trace,
                                       '-r', source]), cs_main.EXIT_SUCCESS)
        self.assertEqual(image_core.load_image(output).shape, (32, 32))
        self.assertTrue(os.path.exists(trace))

    def test_calibrated_reconstruct(self):
        source = str(self.temp_dir_path / "scene.pgm")
        image_core.save_image(image_core.synthetic_scene(32, 32, seed=35), source, 'pgm8')
        measurements = str(self.temp_dir_path / "scene.raw")
        output = str(self.temp_dir_path / "scene_recon.pgm")
        self.assertEqual(cs_main.main(['sample', source, measurements, '-k', 'non_binary', '--fpn_gain_sigma', '0.02',
                                       '--fpn_seed', '5']), cs_main.EXIT_SUCCESS)
        gain_map = pixel_model.load_gain_map(measurements)
        expected, _ = pixel_model.draw_fpn(32, 32, pixel_model.FpnConfig(0.0, 0.02, 5))
        self.assertTrue(np.allclose(gain_map, expected))
        self.assertEqual(cs_main.main(['reconstruct', measurements, output, '--max_iters', '5', '--calibrate']),
                         cs_main.EXIT_SUCCESS)
        self.assertEqual(image_core.load_image(output).shape, (32, 32))

        clean = str(self.temp_dir_path / "clean.raw")
        self.assertEqual(cs_main.main(['sample', source, clean]), cs_main.EXIT_SUCCESS)
        self.assertFalse(os.path.exists(clean + pixel_model.GAIN_MAP_SUFFIX))
        self.assertEqual(cs_main.main(['reconstruct', clean, output, '--calibrate']), cs_main.EXIT_DATA_ERROR)

    def test_run_writes_results(self):
        self.assertEqual(cs_main.main(['run', '-d', str(self.temp_dir_path), '-k', 'binary', '-q', '75',
                                       '--max_iters', '5']), cs_main.EXIT_SUCCESS)
        (result_dir,) = os.listdir(str(self.temp_dir_path))
        self.assertTrue(result_dir.startswith('CS_'))
        files = os.listdir(str(self.temp_dir_path / result_dir))
        self.assertIn('report.csv', files)
        self.assertTrue(any(f.endswith('.gv') for f in files))

    def test_power_and_pixel_model(self):
        self.assertEqual(cs_main.main(['power', '-d', str(self.temp_dir_path)]), cs_main.EXIT_SUCCESS)
        self.assertTrue(os.path.exists(str(self.temp_dir_path / "power.csv")))
        self.assertEqual(cs_main.main(['pixel-model', '-d', str(self.temp_dir_path)]), cs_main.EXIT_SUCCESS)
        self.assertTrue(os.path.exists(str(self.temp_dir_path / "weighted_addition.svg")))


if __name__ == '__main__':
    main()
