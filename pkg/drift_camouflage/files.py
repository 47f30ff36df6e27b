import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .concat import ConcatPath, SegmentRecord
from .filtering import HiddenDriftPath

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def to_jsonable(value: Any) -> Any:
    """Plain JSON types only; non-finite floats become null, rationals keep their exact string."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: Dict[str, Any]
    version: str
    timestamp: str
    # relative path -> sha256
    files: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": to_jsonable(self.config),
            "version": self.version,
            "timestamp": self.timestamp,
            "files": [{"path": p, "sha256": d} for p, d in sorted(self.files.items())],
        }


class ArtifactWriter:
    """Writes the artifacts of one run under out_dir and remembers them for the manifest."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        path = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        if name not in self.written:
            self.written.append(name)
        return path

    def json(self, name: str, data: Any) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(to_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False))
            f.write("\n")
        logger.debug("Wrote %s", path)
        return path

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        logger.debug("Wrote %s", path)
        return path

    def manifest(self, config: Dict[str, Any], version: str, timestamp: Optional[str] = None) -> RunManifest:
        stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
        files = {name: file_digest(os.path.join(self.out_dir, name)) for name in self.written}
        manifest = RunManifest(config, version, stamp, files)
        with open(os.path.join(self.out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
            f.write(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
            f.write("\n")
        logger.info("Wrote manifest with %d files to '%s'", len(files), self.out_dir)
        return manifest


def verify_manifest(out_dir: str) -> List[str]:
    """Names of files whose digest no longer matches the manifest (missing files included)."""
    with open(os.path.join(out_dir, MANIFEST_NAME), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    bad = []
    for entry in manifest["files"]:
        path = os.path.join(out_dir, entry["path"])
        if not os.path.exists(path) or file_digest(path) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def hidden_path_rows(path: HiddenDriftPath) -> Iterable[list]:
    for row in zip(path.grid.times, path.B.values, path.mu_t.values, path.S.values, path.Y.values, path.g.values):
        yield list(row)


HIDDEN_PATH_HEADER = ["t", "B", "mu_t", "S", "Y", "g"]
CONCAT_PATH_HEADER = ["t", "S", "mu", "H", "M", "segment_index"]
SEGMENT_HEADER = ["l", "tau_prev", "gamma", "stop_reason", "delta_hat", "crossing_slack"]
SUMMARY_HEADER = ["test", "statistic", "p_value", "pass"]


def write_hidden_path(writer: ArtifactWriter, index: int, path: HiddenDriftPath, seed: int, epsilon_mode: str) -> None:
    """CSV of one path plus a sidecar naming what regenerates it: stream (seed, index) under the same scenario."""
    stem = f"paths/hidden_{index:04d}"
    writer.csv(f"{stem}.csv", HIDDEN_PATH_HEADER, hidden_path_rows(path))
    sidecar = {
        "path": index,
        "seed": seed,
        "mu": path.scenario.mu,
        "epsilon_mode": epsilon_mode,
        "epsilon": path.epsilon,
        "dt": path.grid.dt,
        "horizon": path.grid.horizon,
        "n_steps": path.grid.n_steps,
    }
    writer.json(f"{stem}.json", sidecar)


def concat_path_rows(path: ConcatPath) -> Iterable[list]:
    for row in zip(path.grid.times, path.S.values, path.mu.values, path.H.values, path.M.values, path.segment_index):
        yield list(row)


def segment_rows(segments: Sequence[SegmentRecord]) -> Iterable[list]:
    for s in segments:
        yield [s.index, s.start_time, s.gamma, s.stop_reason, s.delta_hat, s.crossing_slack]


def write_concat_path(writer: ArtifactWriter, index: int, path: ConcatPath) -> None:
    writer.csv(f"paths/concat_{index:04d}.csv", CONCAT_PATH_HEADER, concat_path_rows(path))
    writer.csv(f"paths/segments_{index:04d}.csv", SEGMENT_HEADER, segment_rows(path.segments))
