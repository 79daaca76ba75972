"""Run manifests: enough provenance to replay any CLI command.

A manifest records the command, its effective parameters and seeds, sha256
hashes of the inputs, and the output paths. Re-running the same command with
the same inputs reproduces the primary outputs byte-identically; only the
wall-clock fields differ.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from . import __version__
from .imageops import sha256_file


def build_manifest(command: str, params: dict, seeds: dict, input_paths,
                   output_paths) -> dict:
    input_hashes = {}
    for p in input_paths:
        p = Path(p)
        if p.is_file():
            input_hashes[str(p)] = sha256_file(p)
        elif p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    input_hashes[str(f)] = sha256_file(f)
    return {
        "command": command,
        "params": params,
        "seeds": seeds,
        "input_hashes": input_hashes,
        "output_paths": [str(p) for p in output_paths],
        "tool_version": __version__,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def write_manifest(path, manifest: dict) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return str(path)
