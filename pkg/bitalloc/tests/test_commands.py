import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from PIL import Image

from bitalloc.alloc import read_lambda_scales, read_qp_map
from bitalloc.imageio import load_image, luma_plane, save_ppm
from bitalloc.stepnet import StepMap, read_step_map, save_weights, write_step_map
from bitalloc.tests.fixtures import SINGLE_CONV, fixture_weights, noisy_copy, textured_image


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return str(self.dir / name)

    def run_command(self, *args):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO())
        return out.getvalue()

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as ctx:
            self.run_command(*args)
        self.assertEqual(ctx.exception.returncode, code, str(ctx.exception))
        return ctx.exception

    def image(self, name, width, height, seed=0):
        path = self.path(name)
        save_ppm(textured_image(width, height, seed=seed), path)
        return path

    def weights(self, name='w.qsnw'):
        path = self.path(name)
        save_weights(fixture_weights(), path)
        return path

    def step_map(self, name, values):
        path = self.path(name)
        write_step_map(StepMap(values), path)
        return path


class StepmapCommandTests(CommandTestCase):

    def test_writes_quarter_grid(self):
        out = self.path('a.qsmap')
        stdout = self.run_command('stepmap', self.image('a.ppm', 64, 64), self.weights(), out)
        self.assertTrue(Path(out).read_text().startswith("QSMAP 1\n4 4\n"))
        self.assertIn("grid 4x4", stdout)
        self.assertTrue(np.all(read_step_map(out).values > 0))

    def test_missing_weights(self):
        self.assertExitCode(2, 'stepmap', self.image('a.ppm', 64, 64), self.path('none.qsnw'), self.path('a.qsmap'))

    def test_unwritable_output(self):
        self.assertExitCode(4, 'stepmap', self.image('a.ppm', 64, 64), self.weights(), self.path('no/dir/a.qsmap'))

    def test_weights_without_sixteen_fold_stride(self):
        weights = self.path('single.qsnw')
        Path(weights).write_text(SINGLE_CONV)
        self.assertExitCode(3, 'stepmap', self.image('a.ppm', 64, 64), weights, self.path('a.qsmap'))
        self.assertFalse(Path(self.path('a.qsmap')).exists())


class QpmapCommandTests(CommandTestCase):

    def two_level(self):
        values = np.full((4, 8), 2.0)
        values[:, :4] = 1.0
        return self.step_map('two.qsmap', values)

    def test_uniform_map_gives_zero_offsets(self):
        prefix = self.path('uni')
        stdout = self.run_command('qpmap', prefix, '--stepmap', self.step_map('u.qsmap', np.full((8, 8), 1.5)),
                                  '--base-qp', '37')
        self.assertEqual(Path(prefix + '.qpmap').read_text(), "QPMAP 1\n2 2 64 37\n0 0\n0 0\n")
        self.assertTrue(np.all(read_lambda_scales(prefix + '.lscale')[2] == 1.0))
        self.assertIn("offsets [0, 0]", stdout)

    def test_manifest_echoes_config_and_lambda(self):
        prefix = self.path('m')
        self.run_command('qpmap', prefix, '--stepmap', self.two_level(), '--base-qp', '32')
        manifest = json.loads(Path(prefix + '.manifest.json').read_text())
        self.assertEqual(manifest['command'], 'qpmap')
        self.assertEqual(manifest['config']['lambda'], 4.0)
        self.assertEqual(manifest['config']['beta'], -1.367)
        self.assertEqual(manifest['config']['ratio_source'], 'step')
        self.assertEqual(manifest['outputs'], [prefix + suffix for suffix in ('.qpmap', '.lscale', '.manifest.json')])

    def test_slope_scales_offsets(self):
        stepmap = self.two_level()
        self.run_command('qpmap', self.path('s10'), '--stepmap', stepmap, '--base-qp', '37')
        self.run_command('qpmap', self.path('s12'), '--stepmap', stepmap, '--base-qp', '37', '--slope', '1.2')
        # raw offsets -1.702 / +2.399 at slope 1.0, -2.042 / +2.879 at 1.2
        self.assertEqual(read_qp_map(self.path('s10.qpmap')).dqp.tolist(), [[-2, 2]])
        self.assertEqual(read_qp_map(self.path('s12.qpmap')).dqp.tolist(), [[-2, 3]])

    def test_explicit_size_with_partial_blocks(self):
        prefix = self.path('p')
        self.run_command('qpmap', prefix, '--stepmap', self.step_map('p.qsmap', np.ones((5, 7))),
                         '--size', '100x80', '--base-qp', '27')
        self.assertEqual(read_qp_map(prefix + '.qpmap', width=100, height=80).dqp.shape, (2, 2))

    def test_size_not_matching_step_map(self):
        self.assertExitCode(2, 'qpmap', self.path('x'), '--stepmap', self.step_map('p.qsmap', np.ones((5, 7))),
                            '--size', '640x480', '--base-qp', '27')

    def test_ambiguous_source(self):
        err = self.assertExitCode(2, 'qpmap', self.path('x'), '--stepmap', self.two_level(),
                                  '--image', self.image('a.ppm', 64, 64), '--weights', self.weights(),
                                  '--base-qp', '37')
        self.assertIn("ambiguous source", str(err))

    def test_no_source(self):
        self.assertExitCode(2, 'qpmap', self.path('x'), '--base-qp', '37')

    def test_image_and_weights(self):
        prefix = self.path('iw')
        self.run_command('qpmap', prefix, '--image', self.image('a.ppm', 100, 80), '--weights', self.weights(),
                         '--base-qp', '22')
        self.assertEqual(read_qp_map(prefix + '.qpmap', width=100, height=80).base_qp, 22)

    def test_beta_map_grid_mismatch(self):
        beta = self.path('b.bmap')
        Path(beta).write_text("BMAP 1\n3 3 64 0\n-1 -1 -1\n-1 -1 -1\n-1 -1 -1\n")
        self.assertExitCode(5, 'qpmap', self.path('x'), '--stepmap', self.two_level(), '--beta-map', beta,
                            '--base-qp', '37')
        self.assertFalse(Path(self.path('x.qpmap')).exists())

    def test_beta_map_fitted_at_another_base_qp(self):
        beta = self.path('b.bmap')
        Path(beta).write_text("BMAP 1\n2 1 64 32\n-1 -1\n")
        self.assertExitCode(5, 'qpmap', self.path('x'), '--stepmap', self.two_level(), '--beta-map', beta,
                            '--base-qp', '37')

    def test_beta_map_bound_to_the_run_base_qp(self):
        beta = self.path('b.bmap')
        Path(beta).write_text("BMAP 1\n2 1 64 37\n-1 -1\n")
        self.run_command('qpmap', self.path('m'), '--stepmap', self.two_level(), '--beta-map', beta,
                         '--base-qp', '37')
        self.run_command('qpmap', self.path('s'), '--stepmap', self.two_level(), '--beta', '-1',
                         '--base-qp', '37')
        self.assertEqual(read_qp_map(self.path('m.qpmap')).dqp.tolist(),
                         read_qp_map(self.path('s.qpmap')).dqp.tolist())

    def test_bits_block_size_mismatch(self):
        bits = self.path('a.bits')
        Path(bits).write_text("BITS 1\n2 1 32 37\n10 20\n")
        self.assertExitCode(5, 'qpmap', self.path('x'), '--stepmap', self.two_level(), '--bits', bits,
                            '--base-qp', '37')

    def test_measured_bits(self):
        bits = self.path('a.bits')
        Path(bits).write_text("BITS 1\n2 1 64 37\n100 300\n")
        prefix = self.path('mb')
        self.run_command('qpmap', prefix, '--stepmap', self.two_level(), '--bits', bits,
                         '--beta', '-1.0', '--base-qp', '37')
        self.assertEqual(read_qp_map(prefix + '.qpmap').dqp.tolist(), [[3, -2]])

    def test_bits_measured_at_another_base_qp_warn(self):
        bits = self.path('a.bits')
        Path(bits).write_text("BITS 1\n2 1 64 22\n100 300\n")
        prefix = self.path('mb')
        with self.assertLogs('bitalloc.management.commands.qpmap', level='WARNING') as logs:
            self.run_command('qpmap', prefix, '--stepmap', self.two_level(), '--bits', bits,
                             '--beta', '-1.0', '--base-qp', '37')
        self.assertIn('base QP 22', logs.output[0])
        self.assertEqual(read_qp_map(prefix + '.qpmap').dqp.tolist(), [[3, -2]])

    def test_zero_flag(self):
        prefix = self.path('z')
        self.run_command('qpmap', prefix, '--stepmap', self.two_level(), '--zero', '--base-qp', '37')
        self.assertEqual(read_qp_map(prefix + '.qpmap').dqp.tolist(), [[0, 0]])

    def test_out_of_range_base_qp(self):
        self.assertExitCode(2, 'qpmap', self.path('x'), '--stepmap', self.two_level(), '--base-qp', '70')


class MetricsCommandTests(CommandTestCase):

    def test_identical_files(self):
        ref = self.image('a.ppm', 176, 176)
        self.assertEqual(self.run_command('metrics', ref, ref).strip(), f"{ref},inf,1.0,1.0")

    def test_lpips_appended(self):
        ref = self.image('a.ppm', 176, 176)
        row = self.run_command('metrics', ref, ref, '--lpips', '0.1').strip()
        self.assertTrue(row.endswith(",10.0"), row)

    def test_small_image_reports_nan(self):
        ref = self.image('a.ppm', 64, 64)
        test = self.path('b.ppm')
        save_ppm(noisy_copy(textured_image(64, 64), 4.0), test)
        cells = self.run_command('metrics', ref, test).strip().split(',')
        self.assertEqual(cells[3], 'nan')
        self.assertNotEqual(cells[2], 'nan')

    def test_size_mismatch(self):
        self.assertExitCode(2, 'metrics', self.image('a.ppm', 32, 32), self.image('b.ppm', 33, 32))

    def test_yuv_roundtrip_label(self):
        ref = self.image('a.ppm', 32, 32)
        stdout = self.run_command('metrics', ref, ref, '--yuv-roundtrip', '--header')
        header, row = stdout.strip().splitlines()
        self.assertEqual(header, "file,psnr_db,ssim,msssim")
        self.assertTrue(row.startswith(f"{ref}[yuv420],"))


class BdrateCommandTests(CommandTestCase):

    def csv(self, name, points):
        path = self.path(name)
        Path(path).write_text("rate_bpp,quality\n" + "".join(f"{r!r},{q!r}\n" for r, q in points))
        return path

    def setUp(self):
        super().setUp()
        self.points = [(0.1, 30.0), (0.2, 33.1), (0.4, 35.9), (0.8, 38.4)]

    def test_same_file_twice(self):
        anchor = self.csv('a.csv', self.points)
        result = json.loads(self.run_command('bdrate', anchor, anchor))
        self.assertAlmostEqual(result['bd_rate_percent'], 0.0, delta=1e-9)
        self.assertEqual(result['overlap'], [30.0, 38.4])

    def test_rate_saving(self):
        anchor = self.csv('a.csv', self.points)
        test = self.csv('b.csv', [(r * 0.9, q) for r, q in self.points])
        result = json.loads(self.run_command('bdrate', anchor, test))
        self.assertAlmostEqual(result['bd_rate_percent'], -10.0, delta=1e-6)

    def test_diagnostics_flag(self):
        anchor = self.csv('a.csv', self.points)
        plain = json.loads(self.run_command('bdrate', anchor, anchor))
        result = json.loads(self.run_command('bdrate', anchor, anchor, '--diagnostics'))
        self.assertNotIn('diagnostics', plain)
        self.assertEqual(result['diagnostics']['mode'], 'cubic')
        lo, hi = result['diagnostics']['rate_overlap']
        self.assertAlmostEqual(lo, 0.1, delta=1e-12)
        self.assertAlmostEqual(hi, 0.8, delta=1e-12)
        self.assertEqual(len(result['diagnostics']['fit_residuals']), 4)

    def test_three_rows(self):
        anchor = self.csv('a.csv', self.points[:3])
        self.assertExitCode(2, 'bdrate', anchor, anchor)

    def test_no_overlap(self):
        anchor = self.csv('a.csv', self.points)
        test = self.csv('b.csv', [(r * 100, q + 20) for r, q in self.points])
        self.assertExitCode(6, 'bdrate', anchor, test)


class SimulateCommandTests(CommandTestCase):

    def test_black_image_is_lossless(self):
        image = self.path('black.png')
        Image.fromarray(np.zeros((64, 64), dtype=np.uint8)).save(image)
        stdout = self.run_command('simulate', image, self.path('sim'), '--qp', '22', '37')
        rows = [line.split(',') for line in stdout.strip().splitlines()]
        self.assertEqual([row[2] for row in rows], ['0.0', '0.0'])
        self.assertEqual(Path(self.path('sim_qp22.bits')).read_text(), "BITS 1\n1 1 64 22\n4096\n")

    def test_zero_map_changes_nothing(self):
        image = self.image('a.ppm', 128, 128)
        zero = self.path('zero')
        self.run_command('qpmap', zero, '--stepmap', self.step_map('u.qsmap', np.ones((8, 8))),
                         '--zero', '--base-qp', '32')
        self.run_command('simulate', image, self.path('plain'), '--qp', '32')
        self.run_command('simulate', image, self.path('mapped'), '--qpmap', zero + '.qpmap')
        for suffix in ('.csv', '_qp32.bits', '_qp32.ppm'):
            self.assertEqual(Path(self.path('plain' + suffix)).read_bytes(),
                             Path(self.path('mapped' + suffix)).read_bytes())

    def test_yuv_output_is_the_encoder_input(self):
        image = self.image('a.ppm', 66, 34)
        yuv = self.path('a.yuv')
        self.run_command('simulate', image, self.path('sim'), '--qp', '32', '--yuv', yuv)
        data = Path(yuv).read_bytes()
        self.assertEqual(len(data), 66 * 34 + 2 * 33 * 17)
        self.assertEqual(data[:66 * 34], luma_plane(load_image(image)).tobytes())

    def test_grid_mismatch(self):
        qpmap = self.path('m.qpmap')
        Path(qpmap).write_text("QPMAP 1\n1 1 64 32\n0\n")
        self.assertExitCode(5, 'simulate', self.image('a.ppm', 128, 128), self.path('sim'), '--qpmap', qpmap)
        self.assertFalse(Path(self.path('sim.csv')).exists())


class PipelineTests(CommandTestCase):

    def run_pipeline(self, root):
        root.mkdir()
        image = str(root / 'img.ppm')
        save_ppm(textured_image(512, 512, seed=11), image)
        weights = str(root / 'w.qsnw')
        save_weights(fixture_weights(seed=11), weights)
        self.run_command('stepmap', image, weights, str(root / 'img.qsmap'))
        curves = {}
        for slope in ('1.0', '1.2'):
            prefix = str(root / f'slope{slope}')
            self.run_command('qpmap', prefix, '--stepmap', str(root / 'img.qsmap'),
                             '--base-qp', '37', '--slope', slope)
            self.run_command('simulate', image, prefix, '--qpmap', prefix + '.qpmap',
                             '--qp', '22', '27', '32', '37')
            curves[slope] = prefix + '.csv'
        result = self.run_command('bdrate', curves['1.0'], curves['1.2'])
        outputs = sorted(p for p in root.iterdir() if p.is_file())
        return result, {p.name: p.read_bytes() for p in outputs}

    def test_two_runs_are_identical(self):
        first_result, first_files = self.run_pipeline(self.dir / 'run1')
        second_result, second_files = self.run_pipeline(self.dir / 'run2')
        self.assertEqual(first_result, second_result)
        self.assertEqual(set(first_files), set(second_files))
        for name, data in first_files.items():
            if name.endswith('.manifest.json'):
                # manifests record absolute input paths
                continue
            self.assertEqual(data, second_files[name], name)
        self.assertIn('bd_rate_percent', json.loads(first_result))
