"""Deterministic JSON/CSV writers.

Floats are written with 17 significant digits and keys in sorted order, so the
same results always serialize to the same bytes.
"""

from __future__ import annotations

import hashlib
import math
import platform
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from randaudit import __version__


def fmt_float(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite float {v}")
    text = f"{v:.17g}"
    if text.lstrip("-").isdigit():
        text += ".0"
    return text


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20 or ord(ch) > 0x7E:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _encode(obj, level: int, indent: int, parts: List[str]) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None:
        parts.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(fmt_float(obj))
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            parts.append(("," if i else "") + pad + _escape(str(key)) + ": ")
            _encode(obj[key], level + 1, indent, parts)
        parts.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            parts.append("[]")
            return
        # numeric vectors stay on one line
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in items):
            enc = []
            for v in items:
                sub: List[str] = []
                _encode(v, 0, indent, sub)
                enc.append("".join(sub))
            parts.append("[" + ", ".join(enc) + "]")
            return
        parts.append("[")
        for i, v in enumerate(items):
            parts.append(("," if i else "") + pad)
            _encode(v, level + 1, indent, parts)
        parts.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    parts: List[str] = []
    _encode(obj, 0, indent, parts)
    return "".join(parts) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config, indent=0).encode()).hexdigest()


def run_meta(config: dict) -> dict:
    return {
        "seed": config["seed"],
        "config_hash": config_hash(config),
        "versions": {
            "randaudit": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def write_json(path, payload: dict, config: dict) -> None:
    doc = {"meta": run_meta(config), "config": config}
    doc.update(payload)
    Path(path).write_text(dumps(doc))


def comment_lines(config: dict) -> List[str]:
    return [
        "randaudit " + __version__,
        "meta " + dumps(run_meta(config), indent=0).replace("\n", ""),
        "config " + dumps(config, indent=0).replace("\n", ""),
    ]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config: dict) -> None:
    """CSV preceded by ``#`` comment lines carrying the run metadata and config."""
    lines = ["# " + c for c in comment_lines(config)] + [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)
