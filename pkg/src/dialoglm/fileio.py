"""Atomic file writes and run manifests.

Every artifact is written to a temporary file in the target directory and
renamed into place, so interrupted runs never leave truncated outputs.
"""

import json
import os
import tempfile


def _atomic(path, data, mode):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text):
    _atomic(path, text, "w")


def write_bytes_atomic(path, blob):
    _atomic(path, blob, "wb")


def write_json_atomic(path, obj):
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir, subcommand, config, inputs, outputs, seed, started, ended):
    """One manifest per run, next to its outputs; enough to reproduce the run."""
    from . import __version__

    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "toolkit_version": __version__,
        "started": started,
        "ended": ended,
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json_atomic(path, manifest)
    return path
