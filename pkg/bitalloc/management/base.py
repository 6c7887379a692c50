# bitalloc/management/base.py
import logging
import math
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from bitalloc.exceptions import BitallocError

logger = logging.getLogger(__name__)


def get_bitalloc_settings():
    """BITALLOC_SETTINGS with nothing missing (commands read defaults here)."""
    return dict(getattr(settings, 'BITALLOC_SETTINGS', {}))


def format_number(value, digits=6):
    """CSV cell text: ``nan`` for missing, ``inf`` for lossless PSNR."""
    if value is None:
        return 'nan'
    value = float(value)
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return repr(round(value, digits))


class BitallocCommand(BaseCommand):
    """
    Runs :meth:`run` and maps library errors onto the exit-code taxonomy.

    Files written through :meth:`save` are removed again when the command
    fails later on, so a failed run leaves no partial result set behind.
    """
    requires_system_checks = []

    def handle(self, *args, **options):
        self._written = []
        self.defaults = get_bitalloc_settings()
        try:
            self.run(**options)
        except BitallocError as exc:
            logger.error(f"{self.command_name()} failed: {exc}", exc_info=True)
            self._discard_outputs()
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    def run(self, **options):
        raise NotImplementedError

    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def save(self, writer, *args):
        """Call ``writer(*args)``; the last argument is the output path."""
        writer(*args)
        self._written.append(Path(args[-1]))
        logger.info(f"wrote {args[-1]}")

    def _discard_outputs(self):
        for path in self._written:
            if path.exists():
                path.unlink()
                logger.info(f"removed partial output {path}")
