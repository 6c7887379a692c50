# bitalloc/manifest.py
import json
from dataclasses import asdict, dataclass, field

from .gridio import atomic_write


@dataclass
class RunManifest:
    """What a command read, how it was configured and what it wrote."""
    command: str
    tool_version: str
    inputs: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def add_output(self, path):
        self.outputs.append(str(path))

    def to_json(self):
        # no timestamps: identical runs give identical manifests
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        self.add_output(path)
        atomic_write(path, self.to_json())
