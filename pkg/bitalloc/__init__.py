"""Transfer learned block bit allocation into encoder QP maps."""

__version__ = '1.0.0'
