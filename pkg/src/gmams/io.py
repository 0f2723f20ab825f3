"""Deterministic file output shared by the command-line front end.

Every structured result goes to JSON with a fixed field order (dict
insertion order, never sorted) and reals printed with 17 significant
digits, so reruns with the same inputs and seed produce byte-identical
files.  Tabular output goes to CSV under the same float rule.
"""

import hashlib
import json
import math
import numbers
from pathlib import Path

SCHEMA_VERSION = 1


def format_real(x: float) -> str:
    """17 significant digits: enough to round-trip any double exactly."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return f"{x:.17g}"


def _render(obj, indent: int, out: list) -> None:
    pad = "  " * indent
    if obj is None:
        out.append("null")
    elif obj is True or obj is False:
        out.append("true" if obj else "false")
    elif isinstance(obj, numbers.Integral):
        out.append(str(int(obj)))
    elif isinstance(obj, numbers.Real):
        out.append(format_real(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {key!r}")
            out.append(f"{pad}  {json.dumps(key)}: ")
            _render(value, indent + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[\n")
        for i, value in enumerate(obj):
            out.append(pad + "  ")
            _render(value, indent + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def render_json(obj) -> str:
    out: list[str] = []
    _render(obj, 0, out)
    out.append("\n")
    return "".join(out)


def write_json(path: Path, obj) -> None:
    path.write_text(render_json(obj), encoding="utf-8")


def write_csv(path: Path, header: list[str], rows) -> None:
    """Plain comma-separated output; fields are formatted by the caller
    except reals, which get the same 17-digit treatment as JSON."""

    def fmt(v):
        if isinstance(v, bool) or isinstance(v, numbers.Integral):
            return str(int(v))
        if isinstance(v, numbers.Real):
            return format_real(float(v))
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, inputs: dict,
                   config: dict, seed: int, duration: float) -> None:
    """One manifest per run, beside the outputs it describes.

    inputs maps a logical name to an input file path; the manifest
    records each file's SHA-256 so a rerun can prove it saw the same
    bytes.  config is the fully resolved configuration, defaults
    included.  The wall-clock duration is informational and is the one
    field expected to differ between otherwise identical runs.
    """
    from . import __version__

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(Path(path))}
            for name, path in inputs.items()
        },
        "config": config,
        "seed": seed,
        "version": __version__,
        "duration_seconds": duration,
    }
    write_json(out_dir / "manifest.json", manifest)
