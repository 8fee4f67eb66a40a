"""Seeded scenario sampling and the scenario file format.

Random numbers come from the PCG64 bit generator (a stable stream for a fixed
seed).  Each 64-bit word ``w`` is mapped to the open interval ``(0, 1)`` by
``((w >> 11) + 0.5) * 2**-53`` and consecutive pairs are turned into standard
normals with the Box-Muller transform.  The resulting matrix is filled in
row-major order, one row per scenario.

Files are JSON.  Values are stored either inline (shortest round-trip float
repr) or in a little-endian float64 sidecar named in the header.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ConfigurationError, ImproxError

__all__ = [
    "Distribution",
    "ScenarioSet",
    "ScenarioParseError",
    "standard_normals",
    "sample_scenarios",
    "save_scenarios",
    "load_scenarios",
]

FORMAT = "improx-scenarios"
VERSION = 1
_KINDS = ("normal", "abs_normal")


class ScenarioParseError(ImproxError, ValueError):
    """Malformed scenario file; carries the line and column (1-based) or byte offset."""

    def __init__(self, message, path=None, line=None, column=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if offset is not None:
            where.append(f"offset {offset}")
        loc = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{path or '<scenarios>'}: {message}{loc}")
        self.path, self.line, self.column, self.offset = path, line, column, offset


@dataclass(frozen=True)
class Distribution:
    """One scenario coordinate: ``mean + sd * Z`` (``kind='normal'``) or its absolute value."""

    name: str
    mean: float = 0.0
    sd: float = 1.0
    kind: str = "normal"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        if not (self.sd >= 0 and math.isfinite(self.sd)):
            raise ConfigurationError("sd must be finite and nonnegative")

    @classmethod
    def from_param(cls, name, mean, param, dist_param="sd", kind="normal"):
        """Build from a (mean, spread) pair where the spread is an sd or a variance."""
        if dist_param == "sd":
            sd = float(param)
        elif dist_param == "var":
            if param < 0:
                raise ConfigurationError("variance must be nonnegative")
            sd = math.sqrt(float(param))
        else:
            raise ConfigurationError("dist_param must be 'sd' or 'var'")
        return cls(name, float(mean), sd, kind)

    def transform(self, z: np.ndarray) -> np.ndarray:
        v = self.mean + self.sd * z
        return np.abs(v) if self.kind == "abs_normal" else v

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "sd": self.sd, "kind": self.kind}


def standard_normals(seed: int, size: int) -> np.ndarray:
    """``size`` standard normal draws from PCG64 + Box-Muller (documented, stable)."""
    if not (0 <= int(seed) < 2**64):
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    pairs = (size + 1) // 2
    raw = np.random.PCG64(int(seed)).random_raw(2 * pairs)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    ang = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(ang)
    out[1::2] = r * np.sin(ang)
    return out[:size]


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """``N`` scenarios (rows of ``values``) with probabilities ``probs``."""

    values: np.ndarray
    probs: np.ndarray | None = None
    seed: int | None = None
    distributions: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ConfigurationError("need a nonempty (N, n_vars) array of scenarios")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.probs is None:
            p = np.full(v.shape[0], 1.0 / v.shape[0])
            object.__setattr__(self, "_uniform", True)
        else:
            p = np.array(self.probs, dtype=np.float64).ravel()
            object.__setattr__(self, "_uniform", False)
            if p.size != v.shape[0] or np.any(p < 0) or abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
                raise ConfigurationError("probabilities must be nonnegative, one per scenario, summing to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "distributions", tuple(self.distributions))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def uniform(self) -> bool:
        return self._uniform

    def column(self, name: str) -> np.ndarray:
        names = [d.name for d in self.distributions]
        return self.values[:, names.index(name)]

    def __eq__(self, other):
        if not isinstance(other, ScenarioSet):
            return NotImplemented
        return (self.seed == other.seed and self.distributions == other.distributions
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes()
                and self.probs.tobytes() == other.probs.tobytes())

    __hash__ = None


def sample_scenarios(distributions, N: int, seed: int) -> ScenarioSet:
    """Draw ``N`` scenarios, one coordinate per entry of ``distributions``."""
    dists = tuple(distributions)
    if N < 1:
        raise ConfigurationError("N must be positive")
    if not dists:
        raise ConfigurationError("need at least one distribution")
    z = standard_normals(seed, N * len(dists)).reshape(N, len(dists))
    cols = [d.transform(z[:, i]) for i, d in enumerate(dists)]
    return ScenarioSet(np.column_stack(cols), None, int(seed), dists)


def _header(S: ScenarioSet, storage: str) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "n_vars": S.n_vars,
        "N": S.N,
        "seed": S.seed,
        "distribution": [d.to_dict() for d in S.distributions],
        "storage": storage,
    }


def save_scenarios(S: ScenarioSet, path, storage: str = "inline") -> Path:
    """Write ``S`` to ``path``; ``storage='binary'`` puts values in ``<path>.bin``."""
    path = Path(path)
    head = _header(S, storage)
    head["probs"] = None if S.uniform else [float(p) for p in S.probs]
    if storage == "inline":
        head["values"] = S.values.tolist()
    elif storage == "binary":
        side = path.with_name(path.name + ".bin")
        head["data_file"] = side.name
        side.write_bytes(S.values.astype("<f8").tobytes(order="C"))
    else:
        raise ConfigurationError("storage must be 'inline' or 'binary'")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(head, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return path


def _need(head, key, path):
    if key not in head:
        raise ScenarioParseError(f"missing header field {key!r}", path, line=1, column=1)
    return head[key]


def load_scenarios(path) -> ScenarioSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        head = json.loads(text)
    except json.JSONDecodeError as err:
        raise ScenarioParseError(err.msg, path, err.lineno, err.colno, err.pos) from None
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise ScenarioParseError("not a scenario file", path, line=1, column=1)
    n_vars, N = int(_need(head, "n_vars", path)), int(_need(head, "N", path))
    storage = _need(head, "storage", path)
    try:
        dists = tuple(Distribution(**d) for d in _need(head, "distribution", path))
    except (TypeError, ConfigurationError) as err:
        raise ScenarioParseError(f"bad distribution entry: {err}", path, line=1, column=1) from None
    if storage == "inline":
        vals = _need(head, "values", path)
        try:
            values = np.array(vals, dtype=np.float64)
        except (TypeError, ValueError) as err:
            raise ScenarioParseError(f"bad values array: {err}", path, line=1, column=1) from None
        if values.shape != (N, n_vars):
            raise ScenarioParseError(f"values have shape {values.shape}, header says {(N, n_vars)}",
                                     path, line=1, column=1)
    elif storage == "binary":
        side = path.with_name(_need(head, "data_file", path))
        blob = side.read_bytes()
        want = 8 * N * n_vars
        if len(blob) != want:
            raise ScenarioParseError(f"sidecar has {len(blob)} bytes, expected {want}",
                                     side, offset=min(len(blob), want))
        values = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(N, n_vars)
    else:
        raise ScenarioParseError(f"unknown storage {storage!r}", path, line=1, column=1)
    probs = head.get("probs")
    try:
        return ScenarioSet(values, probs, head.get("seed"), dists)
    except ConfigurationError as err:
        raise ScenarioParseError(str(err), path, line=1, column=1) from None
