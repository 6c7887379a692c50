# bitalloc/management/commands/metrics.py
from bitalloc.imageio import load_image, rgb_to_yuv420, yuv420_to_rgb
from bitalloc.management.base import BitallocCommand, format_number
from bitalloc.metrics import evaluate

CSV_HEADER = 'file,psnr_db,ssim,msssim'


class Command(BitallocCommand):
    help = "Print one CSV row file,psnr_db,ssim,msssim[,lpips_db] for a reference/test pair."

    def add_arguments(self, parser):
        parser.add_argument('ref', help="reference image")
        parser.add_argument('test', help="test (decoded) image")
        parser.add_argument('--luma-only', action='store_true', help="score the BT.601 luma plane only")
        parser.add_argument('--lpips', type=float, help="externally measured LPIPS value, appended in dB")
        parser.add_argument('--yuv-roundtrip', action='store_true',
                            help="pass the reference through 4:2:0 and back before scoring")
        parser.add_argument('--header', action='store_true', help="print the CSV header first")

    def run(self, ref, test, luma_only=False, lpips=None, yuv_roundtrip=False, header=False, **options):
        ref_img = load_image(ref)
        test_img = load_image(test)
        label = test
        if yuv_roundtrip:
            ref_img = yuv420_to_rgb(rgb_to_yuv420(ref_img))
            label = f"{test}[yuv420]"
        if luma_only:
            label = f"{label}[luma]"

        report = evaluate(ref_img, test_img, luma_only=luma_only, lpips=lpips)

        if header:
            self.stdout.write(CSV_HEADER + (',lpips_db' if lpips is not None else ''))
        cells = [label, format_number(report.psnr), format_number(report.ssim), format_number(report.ms_ssim)]
        if report.lpips_db is not None:
            cells.append(format_number(report.lpips_db))
        self.stdout.write(",".join(cells))
