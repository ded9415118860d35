"""Point-data ingestion, detrending and the flat ``key = value`` config format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MalformedRow, MissingColumn, RankDeficient


@dataclass(frozen=True)
class PointData:
    """Locations ``(m, d)`` and values ``(m,)``; ``dropped`` counts discarded rows."""

    locations: np.ndarray
    values: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if loc.shape[0] != val.size:
            raise ValueError("locations and values differ in length")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.values.size


def read_points_csv(path) -> PointData:
    """Read ``x,value`` (1D) or ``x,y,value`` (2D) rows; non-finite rows are dropped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if "x" not in header or "value" not in header:
            raise MissingColumn(f"{path}: header needs 'x' and 'value' columns, got {header}")
        coords = ["x", "y"] if "y" in header else ["x"]
        ix = [header.index(c) for c in coords] + [header.index("value")]
        rows = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(row[i]) for i in ix]
            except (ValueError, IndexError) as exc:
                raise MalformedRow(line_no, ",".join(row)) from exc
            if not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    arr = np.asarray(rows, dtype=float).reshape(-1, len(ix))
    return PointData(arr[:, :-1], arr[:, -1], dropped)


def write_points_csv(path, data: PointData) -> None:
    d = data.locations.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value"] if d == 1 else ["x", "y", "value"])
        for loc, v in zip(data.locations, data.values):
            w.writerow([repr(float(c)) for c in loc] + [repr(float(v))])


def detrend(data: PointData):
    """OLS fit of ``value ~ 1 + y + y^2``; returns residual data and coefficients.

    ``y`` is the last coordinate (latitude-like); in 1D it is ``x``.
    """
    y = data.locations[:, -1]
    if len(data) < 3 or np.unique(y).size < 3:
        raise RankDeficient("detrending needs at least 3 distinct coordinate values")
    x = np.column_stack([np.ones_like(y), y, y * y])
    coef, _, rank, _ = np.linalg.lstsq(x, data.values, rcond=None)
    if rank < 3:
        raise RankDeficient("design matrix is rank deficient")
    resid = data.values - x @ coef
    return PointData(data.locations, resid, data.dropped), tuple(float(c) for c in coef)


@dataclass
class RunConfig:
    """Flat key-value configuration with typed access and a record of what was read."""

    values: dict = field(default_factory=dict)
    used: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls(parse_config(Path(path).read_text()))

    def _get(self, key, default, cast):
        if key in self.values:
            raw = self.values[key]
            try:
                val = cast(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            val = default
        self.used[key] = val
        return val

    def get_str(self, key, default=None):
        return self._get(key, default, str)

    def get_int(self, key, default=None):
        return self._get(key, default, int)

    def get_float(self, key, default=None):
        return self._get(key, default, float)

    def get_bool(self, key, default=None):
        return self._get(key, default, _to_bool)

    def get_floats(self, key, default=None):
        return self._get(key, default, lambda s: [float(v) for v in str(s).replace(",", " ").split()]
                         if isinstance(s, str) else list(s))

    def require(self, key, cast=str):
        return self._get(key, _REQUIRED, cast)

    def echo(self) -> dict:
        """All resolved keys, including defaults, for the config-echo file."""
        out = dict(self.values)
        out.update({k: _format(v) for k, v in self.used.items()})
        return out


_REQUIRED = object()


def _to_bool(s):
    if isinstance(s, bool):
        return s
    t = str(s).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _format(v):
    if isinstance(v, (list, tuple)):
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        t = line.split("#", 1)[0].strip()
        if not t:
            continue
        if "=" not in t:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = t.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in sorted(values.items())))
