"""File formats: headerless CSV matrices, JSON schedules/configs and JSONL streams.

Node indices are 1-based on disk and 0-based in memory. Floats are written
with ``repr``, the shortest string that round-trips exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .exceptions import InvalidSpecError, ShapeError
from .graphmodel import NoiseSpec, ObservationSet, SamplingSchedule
from .online import TrackerConfig
from .sem import ArmijoParams, SemConfig
from .svarm import SvarmConfig

__all__ = [
    "write_matrix_csv",
    "read_matrix_csv",
    "schedule_to_json",
    "schedule_from_json",
    "observations_to_json",
    "observations_from_json",
    "noise_to_json",
    "noise_from_json",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "read_stream",
    "stream_record",
    "dump_json",
    "staged_output",
]


def _fmt(x):
    return repr(float(x))


def write_matrix_csv(path, mat):
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    if m.ndim != 2:
        raise ShapeError("only 2-D matrices can be written as CSV")
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InvalidSpecError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeError(f"{path}: ragged rows")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise InvalidSpecError(f"{path}: {exc}") from exc


def schedule_to_json(schedule: SamplingSchedule) -> dict:
    return {"n": schedule.n, "slots": [[int(i) + 1 for i in s] for s in schedule.slots]}


def schedule_from_json(obj) -> SamplingSchedule:
    try:
        n = int(obj["n"])
        slots = [np.asarray(s, dtype=np.int64) - 1 for s in obj["slots"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad schedule JSON: {exc}") from exc
    return SamplingSchedule(n, slots)


def observations_to_json(obs: ObservationSet) -> dict:
    d = schedule_to_json(obs.schedule)
    d["y"] = [[float(v) for v in y] for y in obs.values]
    return d


def observations_from_json(obj) -> ObservationSet:
    sched = schedule_from_json(obj)
    try:
        values = [np.asarray(v, dtype=float) for v in obj["y"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad observations JSON: {exc}") from exc
    return ObservationSet(sched, values)


def noise_to_json(noise: NoiseSpec) -> dict:
    return {"process_sigma": noise.process_sigma, "obs_sigma": noise.obs_sigma, "seed": noise.seed}


def noise_from_json(obj) -> NoiseSpec:
    try:
        return NoiseSpec(float(obj["process_sigma"]), float(obj["obs_sigma"]), int(obj["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpecError(f"bad noise JSON: {exc}") from exc


def config_to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    if "z0" in d and d["z0"] is not None:
        d["z0"] = [float(v) for v in d["z0"]]
    return d


def config_from_dict(obj, kind="sem"):
    """Build a SemConfig (``kind="sem"``), SvarmConfig or TrackerConfig; unknown keys are rejected."""
    cls = {"sem": SemConfig, "svarm": SvarmConfig, "tracker": TrackerConfig}[kind]
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(obj) - names
    if extra:
        raise InvalidSpecError(f"unknown {kind} config keys: {sorted(extra)}")
    kw = dict(obj)
    if isinstance(kw.get("gd"), dict):
        gd_extra = set(kw["gd"]) - {f.name for f in dataclasses.fields(ArmijoParams)}
        if gd_extra:
            raise InvalidSpecError(f"unknown gd keys: {sorted(gd_extra)}")
        kw["gd"] = ArmijoParams(**kw["gd"])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise InvalidSpecError(str(exc)) from exc


def load_config(path, kind="sem", overrides=None):
    """Defaults, then the JSON file (if any), then non-None ``overrides``."""
    base = {}
    if path:
        with open(path) as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidSpecError(f"{path}: {exc}") from exc
        if not isinstance(base, dict):
            raise InvalidSpecError(f"{path}: config must be a JSON object")
    base.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(base, kind)


def stream_record(t, indices, y) -> dict:
    return {"t": int(t), "indices": [int(i) + 1 for i in indices], "y": [float(v) for v in y]}


def read_stream(lines, n):
    """Yield ``(indices, y)`` with 0-based indices from JSON lines; blank lines are skipped."""
    last = None
    for k, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            t = int(rec["t"])
            idx = np.asarray(rec["indices"], dtype=np.int64) - 1
            y = np.asarray(rec["y"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"stream line {k}: {exc}") from exc
        if last is not None and t <= last:
            raise InvalidSpecError(f"stream line {k}: time {t} does not increase")
        last = t
        SamplingSchedule(n, [idx])
        if y.shape != idx.shape:
            raise InvalidSpecError(f"stream line {k}: y and indices differ in length")
        yield idx, y


def dump_json(obj, path=None, **kw):
    text = json.dumps(obj, sort_keys=True, indent=2, **kw) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


@contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose files move into ``out_dir`` only on success.

    The manifest, if present, is moved last so that its presence marks a
    complete output directory.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        names = sorted(p.name for p in tmp.iterdir())
        names.sort(key=lambda name: name == "manifest.json")
        for name in names:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
