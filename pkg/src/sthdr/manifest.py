"""Run manifests: one JSON file per command invocation."""

import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import __version__


def environment_fingerprint():
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "threads": torch.get_num_threads(),
    }


def write_manifest(path, command, config, seed=None, started=None):
    """Write the manifest for one run and return its path."""
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "environment": environment_fingerprint(),
        "started": started or now,
        "written": now,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path
