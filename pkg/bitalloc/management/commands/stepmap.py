# bitalloc/management/commands/stepmap.py
from bitalloc.imageio import load_image
from bitalloc.management.base import BitallocCommand
from bitalloc.stepnet import infer_step_map, load_weights, write_step_map


class Command(BitallocCommand):
    help = "Run the step generation network on an image and write a QSMAP file."

    def add_arguments(self, parser):
        parser.add_argument('image', help="input image (binary PPM P6, or any format Pillow reads)")
        parser.add_argument('weights', help="network weights in QSNW1 text format")
        parser.add_argument('out', help="output QSMAP path")

    def run(self, image, weights, out, **options):
        img = load_image(image)
        model = load_weights(weights)
        step_map = infer_step_map(img, model)
        self.save(write_step_map, step_map, out)

        values = step_map.values
        self.stdout.write(
            f"grid {step_map.grid_w}x{step_map.grid_h} "
            f"range [{values.min():.6g}, {values.max():.6g}]"
        )
