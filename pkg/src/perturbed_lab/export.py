"""CSV/JSON writers shared by the path, field and report types."""

from __future__ import annotations

import csv
import datetime as dt
import json
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np


def _stamp() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_csv(
    path: str | Path,
    columns: Mapping[str, Sequence[Any] | np.ndarray],
    timestamp: bool = False,
) -> Path:
    """Write equal-length columns in the mapping's order.

    With ``timestamp`` a leading ``# generated ...`` comment line is added;
    everything after it is a deterministic function of the data.
    """
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {dict(zip(names, map(len, cols)))}")
    with path.open("w", newline="") as fh:
        if timestamp:
            fh.write(f"# generated {_stamp()}\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*cols):
            writer.writerow([_fmt(v) for v in row])
    return path


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path: str | Path, payload: Mapping[str, Any], timestamp: bool = False) -> Path:
    path = Path(path)
    data = dict(payload)
    if timestamp:
        data = {"generated": _stamp(), **data}
    path.write_text(json.dumps(data, indent=2, sort_keys=False, default=_default) + "\n")
    return path
