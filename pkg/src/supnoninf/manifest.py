"""Run manifests and number formatting for emitted artifacts."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from supnoninf import __version__
from supnoninf.exceptions import InvalidParameterError

FORMAT_VERSION = "1"
MANIFEST_PREFIX = "# manifest: "


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int = 0
    versions: dict = field(default_factory=lambda: {"supnoninf": __version__, "format": FORMAT_VERSION})
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def as_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "seed": self.seed,
                "versions": self.versions, "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        try:
            return cls(doc["command"], dict(doc["params"]), int(doc.get("seed", 0)),
                       dict(doc.get("versions", {})), doc.get("timestamp", ""))
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed manifest: {exc}") from None


def round_sig(x: float, digits: int) -> float:
    if not math.isfinite(x) or x == 0.0:
        return x
    return float(f"{x:.{digits}g}")


def to_plain(obj, digits: int):
    """Convert numpy containers to JSON-ready Python, rounding floats to ``digits`` significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return round_sig(x, digits)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def json_artifact(manifest: RunManifest, result, digits: int) -> str:
    doc = {"manifest": to_plain(manifest.as_dict(), 17), "result": to_plain(result, digits)}
    return json.dumps(doc, indent=2) + "\n"


def csv_artifact(manifest: RunManifest, columns, rows, digits: int) -> str:
    buf = io.StringIO()
    buf.write(MANIFEST_PREFIX + json.dumps(to_plain(manifest.as_dict(), 17), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        out = []
        for col in columns:
            v = row.get(col, "")
            if isinstance(v, (float, np.floating)):
                v = format(float(v), f".{digits}g")
            out.append(v)
        writer.writerow(out)
    return buf.getvalue()


def read_manifest(text: str) -> RunManifest:
    """Manifest embedded in a JSON or CSV artifact."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return RunManifest.from_dict(json.loads(stripped)["manifest"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise InvalidParameterError(f"artifact has no readable manifest: {exc}") from None
    for line in text.splitlines():
        if line.startswith(MANIFEST_PREFIX):
            return RunManifest.from_dict(json.loads(line[len(MANIFEST_PREFIX):]))
    raise InvalidParameterError("artifact has no embedded manifest")


def strip_timestamp(text: str) -> str:
    """Artifact text with the manifest timestamp blanked, for reproducibility comparisons."""
    import re

    return re.sub(r'"timestamp": "[^"]*"', '"timestamp": ""', text)
