# bitalloc/management/commands/simulate.py
from bitalloc.alloc import read_qp_map
from bitalloc.gridio import atomic_write
from bitalloc.imageio import RasterImage, load_image, luma_plane, save_ppm, source_frame, write_yuv420
from bitalloc.management.base import BitallocCommand, get_bitalloc_settings
from bitalloc.toysim import ToyCodecConfig, rd_sweep, write_block_bits

CSV_HEADER = 'rate_bpp,quality,mse,qp'


def write_csv(rows, path):
    atomic_write(path, "\n".join(rows) + "\n")


class Command(BitallocCommand):
    help = (
        "Encode an image's luma with the proxy DCT codec. Writes PREFIX.csv "
        "(one RD row per QP), PREFIX_qpN.bits and PREFIX_qpN.ppm; --yuv also writes "
        "the source as the planar 4:2:0 frame an encoder takes."
    )

    def add_arguments(self, parser):
        defaults = get_bitalloc_settings()
        parser.add_argument('image', help="input image")
        parser.add_argument('out', help="output prefix")
        parser.add_argument('--qpmap', help="QPMAP file; its offsets ride on every base QP")
        parser.add_argument('--qp', type=int, nargs='+',
                            help="base QP(s); default is the QP map's base, or "
                                 f"{' '.join(str(q) for q in defaults.get('RD_QPS', ()))} without one")
        parser.add_argument('--block-size', type=int, default=defaults.get('BLOCK_SIZE', 64),
                            help="block size for the bits grid when no QP map is given (default: %(default)s)")
        parser.add_argument('--yuv', metavar='OUT',
                            help="also write the source image as planar 8-bit YUV 4:2:0 to OUT")

    def run(self, image, out, qpmap=None, qp=None, block_size=64, yuv=None, **options):
        img = load_image(image)
        luma = luma_plane(img)
        qp_map = None
        if qpmap:
            qp_map = read_qp_map(qpmap, width=img.width, height=img.height)
            block_size = qp_map.grid.block_size
        qps = qp or ([qp_map.base_qp] if qp_map is not None else list(self.defaults.get('RD_QPS', (37,))))

        results = rd_sweep(luma, qps, qp_map=qp_map, cfg=ToyCodecConfig(block_size=block_size))

        rows = [CSV_HEADER]
        for base_qp, (point, recon) in zip(qps, results):
            rows.append(f"{point.rate!r},{point.quality!r},{point.distortion!r},{base_qp}")
            self.save(write_block_bits, point, block_size, f"{out}_qp{base_qp}.bits")
            self.save(save_ppm, RasterImage(recon), f"{out}_qp{base_qp}.ppm")
        self.save(write_csv, rows, f"{out}.csv")
        if yuv:
            self.save(write_yuv420, source_frame(img), yuv)

        for line in rows[1:]:
            self.stdout.write(line)
