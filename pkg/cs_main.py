#!/usr/bin/env python3

import argparse
import datetime
import os
import shutil
import sys
from typing import List, Optional

from codec import encode
from create_systems import create_acquisition_system, onchip_reduction
from image_core import RgbImage, load_image, psnr, save_image
from pipeline import PipelineConfig, emit_report, load_config_from_csv, load_inputs, run_pipeline
from pixel_model import (DEFAULT_PHOTODIODE, FpnConfig, STANDARD_PIXEL_MODEL, apply_fpn, calibrated_spec, fit_weight,
                         junction_capacitance, load_gain_map, load_photodiode_params_from_csv, merged_fill_factor,
                         pixel_response, save_gain_map, simulate_weight_grid, weighted_addition_curves)
from plot_helpers import line_plot_svg, stacked_bar_svg
from power import design1_power_model, design2_power_model, load_power_model_from_csv, power_range_report, write_power_csv
from reconstruct import SplConfig, spl_reconstruct, write_trace_csv
from sampler import load_sampled, sample, sampled_to_image, save_sampled, spec_from_kind, truncate_sampled
from sweep import audit_kind_convergence, audit_size_monotonicity, report_sweep, sweep_runner_from_csv, \
    write_convergence_csv
from system import AcquisitionSystem

EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_DATA_ERROR = 2


class UsageError(Exception):
    pass


class CsArgumentParser(argparse.ArgumentParser):
    """
    Usage errors raise instead of exiting with argparse's status 2, which is
    reserved for data errors here.
    """

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(e, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        args.handler(args)
    except (ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA_ERROR
    return EXIT_SUCCESS


def build_parser() -> argparse.ArgumentParser:
    parser = CsArgumentParser(description='simulate an image sensor that compresses on chip by sampling, '
                                          'truncating and coding block measurements, and reconstruct the images '
                                          'off chip.')
    parser.add_argument('-v', '--verbose', help='when enabled, print debug messages.', action='store_true')
    subparsers = parser.add_subparsers(dest='command', parser_class=CsArgumentParser)

    sample_parser = subparsers.add_parser('sample', help='sample one 8-bit image into block measurements.')
    sample_parser.add_argument('input', help='path to the input image.')
    sample_parser.add_argument('output', help='path of the raw measurement file to write (sidecar alongside).')
    sample_parser.add_argument('-f', '--format', help='input image format.', choices=['pgm8', 'pgm16', 'raw'],
                               default='pgm8')
    add_sampling_args(sample_parser)
    sample_parser.add_argument('--fpn_offset_sigma', help='column offset noise sigma in LSB.', type=float, default=0.0)
    sample_parser.add_argument('--fpn_gain_sigma', help='pixel gain noise sigma, relative.', type=float, default=0.0)
    sample_parser.add_argument('--fpn_seed', help='seed of the fixed pattern noise.', type=int, default=0)
    sample_parser.set_defaults(handler=command_sample)

    recon_parser = subparsers.add_parser('reconstruct', help='reconstruct an image from a measurement file.')
    recon_parser.add_argument('input', help='path to the raw measurement file written by sample.')
    recon_parser.add_argument('output', help='path of the 8-bit pgm to write.')
    add_spl_args(recon_parser)
    recon_parser.add_argument('-t', '--trace_file', help='write the iteration trace to this csv file.', default=None)
    recon_parser.add_argument('-r', '--reference', help='8-bit pgm to score the reconstruction against.',
                              default=None)
    recon_parser.add_argument('--calibrate', help='fold the gain map saved by sample into the reconstruction '
                                                     'weights.', action='store_true')
    recon_parser.set_defaults(handler=command_reconstruct)

    run_parser = subparsers.add_parser('run', help='run the full acquisition chain over a set of images.')
    run_parser.add_argument('-c', '--config_file', help='path to the csv file containing the pipeline configuration.',
                            default=None)
    run_parser.add_argument('-i', '--input', help='input image, may be given more than once.', action='append',
                            default=None)
    run_parser.add_argument('-f', '--format', help='input image format.', choices=['pgm8', 'pgm16', 'ppm'],
                            default=None)
    run_parser.add_argument('-k', '--kind', help='sampling kind.', choices=['binary', 'non_binary'], default=None)
    run_parser.add_argument('-o', '--orientation', help='direction the blocks run in.', choices=['rows', 'columns'],
                            default=None)
    run_parser.add_argument('-b', '--truncated_bits', help='LSBs dropped by the ADC.', type=int, default=None)
    run_parser.add_argument('-q', '--codec_mode', help='JPEG quality 1-100 or lossless.', default=None)
    run_parser.add_argument('--depth_scaled_tables', help='scale the quantisation tables with the bit depth.',
                            action='store_true', default=None)
    run_parser.add_argument('--basis', help='sparsifying basis.', choices=['dwt', 'ddwt'], default=None)
    run_parser.add_argument('--max_iters', help='SPL iteration limit.', type=int, default=None)
    run_parser.add_argument('-d', '--output_dir', help='directory the timestamped result folder is created in.',
                            default=None)
    run_parser.add_argument('-s', '--save_artifacts', help='save measurements and reconstructions.',
                            action='store_true', default=None)
    run_parser.add_argument('-r', '--render', help='render the acquisition diagram with graphviz.',
                            action='store_true')
    run_parser.set_defaults(handler=command_run)

    sweep_parser = subparsers.add_parser('sweep', help='run the pipeline over a grid of kinds, qualities and depths.')
    sweep_parser.add_argument('-c', '--config_file', help='path to the csv file containing the pipeline '
                                                          'configuration.', default=None)
    sweep_parser.add_argument('-g', '--grid_file', help='path to the csv file listing kind,quality,bitdepth cells.',
                              default=os.path.join('config', 'sweep_default.csv'))
    sweep_parser.add_argument('-i', '--input', help='input image, may be given more than once.', action='append',
                              default=None)
    sweep_parser.add_argument('-d', '--output_dir', help='directory the timestamped result folder is created in.',
                              default=None)
    sweep_parser.set_defaults(handler=command_sweep)

    power_parser = subparsers.add_parser('power', help='estimate sensor power for each bit depth.')
    power_parser.add_argument('-p', '--power_file', help='csv file with category,baseline_mw,scales rows. '
                                                         'Both built in designs are used when omitted.',
                              default=None)
    power_parser.add_argument('-b', '--bitdepth', help='measurement bit depth, may be given more than once.',
                              type=int, action='append', default=None)
    power_parser.add_argument('-d', '--output_dir', help='write power.csv and power.svg to this directory.',
                              default=None)
    power_parser.set_defaults(handler=command_power)

    pixel_parser = subparsers.add_parser('pixel-model', help='photodiode capacitance and pixel weight figures.')
    pixel_parser.add_argument('-p', '--photodiode_file', help='csv file with the photodiode parameters.',
                              default=None)
    pixel_parser.add_argument('--fill_factor', help='fill factor of one photodiode.', type=float, default=0.7)
    pixel_parser.add_argument('-d', '--output_dir', help='write the weighted addition curves to this directory.',
                              default=None)
    pixel_parser.set_defaults(handler=command_pixel_model)
    return parser


def add_sampling_args(parser: argparse.ArgumentParser):
    parser.add_argument('-k', '--kind', help='sampling kind.', choices=['binary', 'non_binary'],
                        default='non_binary')
    parser.add_argument('-o', '--orientation', help='direction the blocks run in.', choices=['rows', 'columns'],
                        default='rows')
    parser.add_argument('-b', '--truncated_bits', help='LSBs dropped by the ADC.', type=int, default=0)


def add_spl_args(parser: argparse.ArgumentParser):
    parser.add_argument('--basis', help='sparsifying basis.', choices=['dwt', 'ddwt'], default='ddwt')
    parser.add_argument('--lam', help='threshold multiplier.', type=float, default=6.0)
    parser.add_argument('--max_iters', help='iteration limit.', type=int, default=200)
    parser.add_argument('--epsilon', help='convergence tolerance.', type=float, default=1e-4)
    parser.add_argument('--levels', help='decomposition levels, size based when omitted.', type=int, default=None)


def create_output_dir(base_dir: str) -> str:
    output_dir = os.path.join(base_dir, f"CS_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}")
    os.makedirs(output_dir)
    return output_dir


def copy_inputs(output_dir: str, *filenames: Optional[str]):
    for filename in filenames:
        if filename is not None:
            shutil.copy(filename, os.path.join(output_dir, os.path.basename(filename)))


def command_sample(args: argparse.Namespace):
    img = load_image(args.input, args.format)
    spec = spec_from_kind(args.kind, args.orientation)
    fpn = FpnConfig(args.fpn_offset_sigma, args.fpn_gain_sigma, args.fpn_seed)
    noisy, gains = apply_fpn(img, fpn)
    sampled = truncate_sampled(sample(noisy, spec), args.truncated_bits)
    save_sampled(sampled, args.output)
    if fpn.enabled:
        print(f"Gain map saved to {save_gain_map(gains, args.output)}")
    print(f"{args.input}: {sampled.width}x{sampled.height} {spec.kind} measurements, "
          f"{sampled.bit_depth} bit, saved to {args.output}")


def command_reconstruct(args: argparse.Namespace):
    sampled = load_sampled(args.input)
    spec = calibrated_spec(load_gain_map(args.input), sampled.spec) if args.calibrate else sampled.spec
    cfg = SplConfig(args.lam, args.max_iters, args.epsilon, args.basis, args.levels)
    recon, trace = spl_reconstruct(sampled, spec=spec, cfg=cfg, print_debug_messages=args.verbose)
    save_image(recon, args.output, 'pgm8')
    status = "converged" if trace.converged else "did not converge"
    print(f"SPL {status} after {trace.iterations} iterations, saved to {args.output}")
    if args.trace_file:
        write_trace_csv(trace, args.trace_file)
    if args.reference:
        value = psnr(load_image(args.reference, 'pgm8'), recon)
        print(f"PSNR = {value:.2f} dB")


def pipeline_config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config_from_csv(args.config_file) if args.config_file else PipelineConfig()
    if args.input:
        cfg.input_paths = args.input
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    for name in ('format', 'kind', 'orientation', 'truncated_bits', 'codec_mode', 'depth_scaled_tables',
                 'save_artifacts'):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, 'input_format' if name == 'format' else name, value)
    if getattr(args, 'basis', None) is not None:
        cfg.spl = SplConfig(cfg.spl.lam, cfg.spl.max_iters, cfg.spl.epsilon, args.basis, cfg.spl.levels)
    if getattr(args, 'max_iters', None) is not None:
        cfg.spl = SplConfig(cfg.spl.lam, args.max_iters, cfg.spl.epsilon, cfg.spl.basis, cfg.spl.levels)
    cfg.validate()
    return cfg


def command_run(args: argparse.Namespace):
    cfg = pipeline_config_from_args(args)
    output_dir = create_output_dir(cfg.output_dir)
    copy_inputs(output_dir, args.config_file)

    print("Running pipeline...")
    report = run_pipeline(cfg, artifact_dir=output_dir if cfg.save_artifacts else None,
                          print_debug_messages=args.verbose)
    emit_report(report, os.path.join(output_dir, "report.csv"), 'csv')

    first = report.rows[0]
    print(f"{report.kind}, q={report.quality}, {report.bitdepth} bit: "
          f"size {report.mean_normalized_size:.2f}%, PSNR {report.mean_psnr_db:.2f} dB, "
          f"on-chip compression {first.onchip_compression_pct:.2f}%")

    system = diagram_for(cfg)
    system.save_source(output_dir)
    if args.render:
        system.render(output_dir)
    if args.verbose:
        for stage in system.stages_in_chain():
            print(stage.report_flow())
        print(f"On-chip reduction read off the diagram: {onchip_reduction(system):.2f}%")
    print(f"Done. Results saved to {output_dir}")


def diagram_for(cfg: PipelineConfig) -> AcquisitionSystem:
    """
    The block diagram of one frame, sized on the first input image.
    """
    name, img = load_inputs(cfg)[0]
    plane = img.red if isinstance(img, RgbImage) else img
    sampled = truncate_sampled(sample(plane, cfg.spec()), cfg.truncated_bits)
    coded_bytes = encode(sampled_to_image(sampled), cfg.codec_mode, cfg.depth_scaled_tables).size_bytes
    return create_acquisition_system(f"cs acquisition {name}", img.width, img.height, cfg.spec(), sampled.bit_depth,
                                     coded_bytes)


def command_sweep(args: argparse.Namespace):
    cfg = pipeline_config_from_args(args)
    runner = sweep_runner_from_csv(args.grid_file)
    output_dir = create_output_dir(cfg.output_dir)
    copy_inputs(output_dir, args.config_file, args.grid_file)

    print(f"Running sweep over {len(runner.cells)} cells...")
    cells = runner.run(cfg, print_debug_messages=args.verbose)
    report_sweep(output_dir, cells)
    write_convergence_csv(audit_kind_convergence(cells), os.path.join(output_dir, "kind_convergence.csv"))

    failed = [c for c in cells if not c.success]
    for c in failed:
        print(f"  {c} FAILED: {c.error_msg}")
    for violation in audit_size_monotonicity(cells):
        print(f"  trend violation: {violation}")
    print(f"Done. {len(cells) - len(failed)} of {len(cells)} cells succeeded. Results saved to {output_dir}")


def command_power(args: argparse.Namespace):
    if args.power_file:
        models = [load_power_model_from_csv(args.power_file)]
    else:
        models = [design1_power_model(), design2_power_model()]
    bit_depths = args.bitdepth if args.bitdepth else list(range(12, 4, -1))

    breakdowns = []
    for model in models:
        print(f"{model.name} baseline total [mW] = {model.baseline_total():.2f}")
        for b in power_range_report(model, bit_depths):
            print(f"    cr = {b.compression_ratio * 100:.2f}%: total [mW] = {b.total_mw:.2f}, "
                  f"saved = {b.savings_pct:.2f}%")
            if args.verbose:
                for k, v in b.breakdown_mw.items():
                    print(f"        {k} = {v:.3f}")
            breakdowns.append(b)

    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        write_power_csv(breakdowns, os.path.join(args.output_dir, "power.csv"))
        columns = [f"{b.model_name} {b.compression_ratio * 100:.1f}%" for b in breakdowns]
        stacked_bar_svg(columns, [b.breakdown_mw for b in breakdowns], os.path.join(args.output_dir, "power.svg"),
                        'Sensor power by category', 'Power (mW)')


def command_pixel_model(args: argparse.Namespace):
    params = load_photodiode_params_from_csv(args.photodiode_file) if args.photodiode_file else DEFAULT_PHOTODIODE
    print(f"Junction capacitance [fF] = {junction_capacitance(params):.2f}")
    print(f"Junction capacitance at zero bias [fF] = {junction_capacitance(params.with_bias(0.0)):.2f}")
    print(f"Merged pixel fill factor = {merged_fill_factor(args.fill_factor):.3f}")

    coeffs, weight = fit_weight(simulate_weight_grid(STANDARD_PIXEL_MODEL))
    print(f"Fitted pixel weight = {weight:.4f}")
    drop_mv = (pixel_response(0.0, 0.0) - pixel_response(100.0, 100.0)) * 1e3
    print(f"Output drop at p1 = p2 = 100 fA [mV] = {drop_mv:.2f}")
    if args.verbose:
        for i, c in enumerate(coeffs):
            print(f"    c{i} = {c:.4e}")

    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        curves = weighted_addition_curves(STANDARD_PIXEL_MODEL)
        series = {label: (curves['currents_fa'], values * 1e3)
                  for label, values in curves.items() if label != 'currents_fa'}
        line_plot_svg(series, os.path.join(args.output_dir, "weighted_addition.svg"),
                      'Pixel output drop, other photodiode at 100 fA', 'Photocurrent (fA)', 'Voltage drop (mV)')


if __name__ == '__main__':
    sys.exit(main())
