"""
manifest.py
-----------
Run manifests: a JSON file next to every output holding what is needed to
reproduce it (resolved config, seed, tool version, arguments, file digests
and timestamps).
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata

import logger.logger as log
from errors import ConfigurationError
from protocol import ProtocolConfig, parse_config
from protocol.config import format_value

logger = log.get_logger(__name__)

PACKAGE = "afc-dlcz"
MANIFEST_SUFFIX = ".manifest.json"


def tool_version() -> str:
    try:
        return metadata.version(PACKAGE)
    except metadata.PackageNotFoundError:
        return "0+unknown"


def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def manifest_path(output: str) -> str:
    return output + MANIFEST_SUFFIX


def now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    version: str = field(default_factory=tool_version)
    args: dict = field(default_factory=dict)
    n_trials: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    started_at: str = field(default_factory=now)
    finished_at: str | None = None

    @classmethod
    def start(cls, command: str, config: ProtocolConfig, seed=None, args=None, n_trials=None):
        snapshot = {k: format_value(v) for k, v in config.to_dict().items()}
        return cls(command, snapshot, seed, args=dict(args or {}), n_trials=n_trials)

    def add_input(self, path: str):
        self.inputs[os.path.basename(path)] = file_digest(path)

    def add_output(self, path: str):
        self.outputs[os.path.basename(path)] = file_digest(path)

    def resolved_config(self) -> ProtocolConfig:
        text = "".join("%s = %s\n" % item for item in self.config.items())
        return parse_config(text, source="manifest")

    def write(self, path: str):
        self.finished_at = now()
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.debug("Wrote manifest %s" % path)

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            return cls(**data)
        except (OSError, ValueError, TypeError) as e:
            raise ConfigurationError("cannot read manifest %s: %s" % (path, e))


def find_manifest(output: str) -> RunManifest | None:
    path = manifest_path(output)
    if not os.path.exists(path):
        return None
    return RunManifest.load(path)
