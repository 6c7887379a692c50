# bitalloc/management/commands/bdrate.py
import json

from bitalloc.bdrate import METRIC_TAGS, MODES, compare, read_rd_csv
from bitalloc.management.base import BitallocCommand


class Command(BitallocCommand):
    help = "Bjontegaard delta rate and delta quality of TEST against ANCHOR, printed as JSON."

    def add_arguments(self, parser):
        parser.add_argument('anchor', help="anchor RD curve CSV (rate_bpp,quality)")
        parser.add_argument('test', help="test RD curve CSV (rate_bpp,quality)")
        parser.add_argument('--metric', default='psnr', choices=METRIC_TAGS + ('lpips',),
                            help="quality column metric; 'lpips' means raw values, converted to dB")
        parser.add_argument('--mode', default='cubic', choices=MODES,
                            help="cubic polynomial fit or piecewise monotone cubic (default: %(default)s)")
        parser.add_argument('--diagnostics', action='store_true',
                            help="also report the mode, rate overlap and per-curve fit residuals")

    def run(self, anchor, test, metric='psnr', mode='cubic', diagnostics=False, **options):
        anchor_curve = read_rd_csv(anchor, metric)
        test_curve = read_rd_csv(test, metric)
        result = compare(anchor_curve, test_curve, mode=mode)
        self.stdout.write(json.dumps(result.as_dict(diagnostics=diagnostics)))
