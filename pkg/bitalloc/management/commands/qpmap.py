# bitalloc/management/commands/qpmap.py
import logging
import re

import numpy as np

from bitalloc import __version__
from bitalloc.alloc import (
    AllocConfig,
    build_allocation,
    read_beta_map,
    write_lambda_scales,
    write_qp_map,
    zero_allocation,
)
from bitalloc.exceptions import ConfigError, GridMismatchError, InputFormatError
from bitalloc.imageio import block_partition, load_image
from bitalloc.management.base import BitallocCommand, get_bitalloc_settings
from bitalloc.manifest import RunManifest
from bitalloc.stepnet import DOWNSAMPLE, infer_step_map, load_weights, read_step_map
from bitalloc.toysim import read_block_bits

logger = logging.getLogger(__name__)

SIZE_RE = re.compile(r'^(\d+)x(\d+)$')


def parse_size(text):
    match = SIZE_RE.match(text or '')
    if not match:
        raise ConfigError(f"--size must look like WIDTHxHEIGHT, got '{text}'")
    width, height = int(match.group(1)), int(match.group(2))
    if width < 1 or height < 1:
        raise ConfigError("--size dimensions must be positive")
    return width, height


class Command(BitallocCommand):
    help = (
        "Derive a per-block QP offset map and lambda scales from a step map "
        "(QSMAP file, or an image plus network weights). Writes PREFIX.qpmap, "
        "PREFIX.lscale and PREFIX.manifest.json."
    )

    def add_arguments(self, parser):
        defaults = get_bitalloc_settings()
        parser.add_argument('out', help="output prefix")
        parser.add_argument('--stepmap', help="QSMAP file to allocate from")
        parser.add_argument('--image', help="image to run the step network on (needs --weights)")
        parser.add_argument('--weights', help="QSNW1 weights for --image")
        parser.add_argument('--size', help="pixel size WIDTHxHEIGHT for --stepmap (default: 16 x grid size)")
        parser.add_argument('--base-qp', type=int, required=True, help="frame QP the offsets apply to (0-63)")
        beta = parser.add_mutually_exclusive_group()
        beta.add_argument('--beta', type=float, default=defaults.get('BETA', -1.367),
                          help="R-lambda exponent for every block (default: %(default)s)")
        beta.add_argument('--beta-map', help="BMAP file with one exponent per block")
        parser.add_argument('--slope', type=float, default=defaults.get('SLOPE', 1.0),
                            help="multiplier on the raw offset before rounding (default: %(default)s)")
        parser.add_argument('--clamp', type=int, default=defaults.get('CLAMP', 4),
                            help="maximum absolute QP offset (default: %(default)s)")
        parser.add_argument('--n-const', type=int, default=defaults.get('N_CONST', 3),
                            help="QP units per doubling of lambda (default: %(default)s)")
        parser.add_argument('--block-size', type=int, default=defaults.get('BLOCK_SIZE', 64),
                            help="QP adaptation block size in pixels (default: %(default)s)")
        parser.add_argument('--eps', type=float, default=defaults.get('EPS', 1e-6),
                            help="floor applied to block steps before the reciprocal (default: %(default)s)")
        parser.add_argument('--bits', help="BITS file: take ratios from measured per-block bits")
        parser.add_argument('--zero', action='store_true',
                            help="write the fixed-QP (all zero) map; a source is still needed for the size")

    def run(self, out, **options):
        manifest = RunManifest(command='qpmap', tool_version=self.defaults.get('TOOL_VERSION', __version__))
        step_map, width, height = self._load_source(options, manifest)
        cfg = self._config(options, manifest)

        measured = None
        if options['bits']:
            block_size, bits_qp, measured = read_block_bits(options['bits'])
            if block_size != cfg.block_size:
                raise GridMismatchError(f"bits file uses {block_size}-px blocks, config uses {cfg.block_size}",
                                        options['bits'])
            if bits_qp != cfg.base_qp:
                logger.warning(f"bits were measured at base QP {bits_qp}, offsets target {cfg.base_qp}")
            manifest.inputs['bits'] = options['bits']

        if options['zero']:
            allocation = zero_allocation(width, height, cfg)
            ratio_source = 'zero'
        else:
            if measured is not None and measured.shape != block_partition(width, height, cfg.block_size).shape:
                raise GridMismatchError(f"bits grid {measured.shape[1]}x{measured.shape[0]} does not match the image",
                                        options['bits'])
            allocation = build_allocation(step_map, width, height, cfg, measured_bits=measured)
            ratio_source = 'bits' if measured is not None else 'step'

        manifest.config = {
            **cfg.echo(),
            'lambda': cfg.lambda_for_qp(),
            'ratio_source': ratio_source,
            'width': width,
            'height': height,
        }
        manifest.add_output(f"{out}.qpmap")
        manifest.add_output(f"{out}.lscale")
        self.save(write_qp_map, allocation.qp_map(), f"{out}.qpmap")
        self.save(write_lambda_scales, allocation, f"{out}.lscale")
        self.save(manifest.write, f"{out}.manifest.json")

        dqp = allocation.dqp
        self.stdout.write(
            f"blocks {allocation.grid.blocks_x}x{allocation.grid.blocks_y} "
            f"base QP {cfg.base_qp} offsets [{int(dqp.min())}, {int(dqp.max())}]"
        )

    def _load_source(self, options, manifest):
        stepmap, image, weights = options['stepmap'], options['image'], options['weights']
        if stepmap and (image or weights):
            raise InputFormatError("ambiguous source: give either --stepmap or --image/--weights")
        if stepmap:
            step_map = read_step_map(stepmap)
            if options['size']:
                width, height = parse_size(options['size'])
            else:
                width, height = step_map.grid_w * DOWNSAMPLE, step_map.grid_h * DOWNSAMPLE
            if not step_map.matches(width, height):
                raise InputFormatError(
                    f"step map {step_map.grid_w}x{step_map.grid_h} does not fit {width}x{height}", stepmap
                )
            manifest.inputs['stepmap'] = stepmap
            return step_map, width, height
        if image and weights:
            img = load_image(image)
            step_map = infer_step_map(img, load_weights(weights))
            manifest.inputs.update({'image': image, 'weights': weights})
            return step_map, img.width, img.height
        if image:
            raise InputFormatError("--image needs --weights")
        raise InputFormatError("no step-map source: give --stepmap or --image with --weights")

    def _config(self, options, manifest):
        beta = options['beta']
        if options['beta_map']:
            block_size, beta_qp, beta = read_beta_map(options['beta_map'])
            if beta_qp and beta_qp != options['base_qp']:
                raise GridMismatchError(
                    f"beta map was fitted at base QP {beta_qp}, run uses {options['base_qp']}",
                    options['beta_map'],
                )
            if block_size != options['block_size']:
                raise GridMismatchError(
                    f"beta map uses {block_size}-px blocks, config uses {options['block_size']}",
                    options['beta_map'],
                )
            manifest.inputs['beta_map'] = options['beta_map']
        return AllocConfig(
            base_qp=options['base_qp'],
            beta=beta if np.isscalar(beta) else np.asarray(beta),
            slope=options['slope'],
            clamp=options['clamp'],
            n_const=options['n_const'],
            block_size=options['block_size'],
            eps=options['eps'],
            lambda_table=dict(self.defaults.get('LAMBDA_TABLE', {})),
        )
