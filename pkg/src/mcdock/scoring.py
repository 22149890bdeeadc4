"""Per-pose performance scores and the instance x algorithm label matrix.

A docking outcome is an RMSD (in Angstrom, possibly missing when the tool
produced no pose) plus a PoseBusters pass/fail flag. Both are mapped to
[0, 1] and combined either additively or multiplicatively.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, SchemaError, ValidationError

MAX_TOLERANCE = 20.0
DEFAULT_TOLERANCE = math.log(11.0)


class ScoreMode(str, enum.Enum):
    ADDITIVE = "add"
    MULTIPLICATIVE = "mul"

    @classmethod
    def parse(cls, value) -> "ScoreMode":
        if isinstance(value, cls):
            return value
        aliases = {"add": cls.ADDITIVE, "additive": cls.ADDITIVE,
                   "mul": cls.MULTIPLICATIVE, "multiplicative": cls.MULTIPLICATIVE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ConfigError(f"unknown score mode {value!r}; expected 'add' or 'mul'") from None


def _check_tolerance(m_tol: float) -> float:
    m_tol = float(m_tol)
    if not math.isfinite(m_tol) or m_tol <= 0:
        raise ConfigError(f"tolerance M must be a positive finite number, got {m_tol}")
    if m_tol > MAX_TOLERANCE:
        raise ConfigError(f"tolerance M must be <= {MAX_TOLERANCE}, got {m_tol}")
    return m_tol


@dataclass(frozen=True)
class ScoreConfig:
    mode: ScoreMode = ScoreMode.MULTIPLICATIVE
    tolerance_m: float = DEFAULT_TOLERANCE
    alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", ScoreMode.parse(self.mode))
        object.__setattr__(self, "tolerance_m", _check_tolerance(self.tolerance_m))
        alpha = float(self.alpha)
        if not (0.0 <= alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "tolerance_m": self.tolerance_m, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreConfig":
        return cls(**d)


def pb_valid_from_checks(checks: Iterable[bool]) -> bool:
    """Collapse individual PoseBusters check outcomes into one validity flag."""
    return all(bool(c) for c in checks)


@dataclass(frozen=True)
class PerformanceRecord:
    """One docking outcome. ``rmsd is None`` means the tool produced no pose."""

    instance_id: str
    algorithm: str
    rmsd: float | None
    pb_valid: bool

    def __post_init__(self):
        if self.rmsd is not None:
            r = float(self.rmsd)
            if not math.isfinite(r) or r < 0:
                raise ValidationError(
                    f"rmsd must be finite and >= 0, got {self.rmsd} "
                    f"for ({self.instance_id}, {self.algorithm})")
            object.__setattr__(self, "rmsd", r)
        object.__setattr__(self, "pb_valid", bool(self.pb_valid))


class PerformanceTable:
    """Records keyed by (instance_id, algorithm); pairs must be unique."""

    def __init__(self, records: Iterable[PerformanceRecord] = ()):
        self._records: dict[tuple[str, str], PerformanceRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, rec: PerformanceRecord) -> None:
        key = (rec.instance_id, rec.algorithm)
        if key in self._records:
            raise SchemaError(f"duplicate record for instance {rec.instance_id!r}, "
                              f"algorithm {rec.algorithm!r}")
        self._records[key] = rec

    def get(self, instance_id: str, algorithm: str) -> PerformanceRecord | None:
        return self._records.get((instance_id, algorithm))

    def __iter__(self):
        return iter(self._records.values())

    def __len__(self):
        return len(self._records)

    def __eq__(self, other):
        if not isinstance(other, PerformanceTable):
            return NotImplemented
        return self._records == other._records

    def instance_ids(self) -> list[str]:
        return sorted({k[0] for k in self._records})

    def algorithms(self) -> list[str]:
        """Algorithms in order of first appearance."""
        return list(dict.fromkeys(k[1] for k in self._records))

    def to_arrays(self, instance_ids: Sequence[str], portfolio: Sequence[str]):
        """Dense (rmsd, pb_valid) arrays; missing poses are NaN / False."""
        row = {iid: i for i, iid in enumerate(instance_ids)}
        col = {a: j for j, a in enumerate(portfolio)}
        rmsd = np.full((len(instance_ids), len(portfolio)), np.nan)
        valid = np.zeros((len(instance_ids), len(portfolio)), dtype=bool)
        for (iid, alg), rec in self._records.items():
            if iid not in row or alg not in col:
                continue
            i, j = row[iid], col[alg]
            if rec.rmsd is not None:
                rmsd[i, j] = rec.rmsd
            valid[i, j] = rec.pb_valid
        return rmsd, valid


@dataclass
class LabelMatrix:
    scores: np.ndarray
    instance_ids: list[str]
    algorithm_ids: list[str]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        n, m = len(self.instance_ids), len(self.algorithm_ids)
        if self.scores.shape != (n, m):
            raise SchemaError(f"score matrix has shape {self.scores.shape}, expected {(n, m)}")

    @property
    def shape(self):
        return self.scores.shape

    def rows(self, instance_ids: Sequence[str]) -> "LabelMatrix":
        index = {iid: i for i, iid in enumerate(self.instance_ids)}
        idx = [index[iid] for iid in instance_ids]
        return LabelMatrix(self.scores[idx], list(instance_ids), list(self.algorithm_ids))

    def columns(self, algorithm_ids: Sequence[str]) -> "LabelMatrix":
        index = {a: j for j, a in enumerate(self.algorithm_ids)}
        idx = [index[a] for a in algorithm_ids]
        return LabelMatrix(self.scores[:, idx], list(self.instance_ids), list(algorithm_ids))


def _check_rmsd(x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x < 0:
        raise ValidationError(f"rmsd must be finite and >= 0, got {x}")
    return x


def rmsd_score(x: float, m_tol: float) -> float:
    """Exponential RMSD score: 1 at x=0, 0 at x>=M, strictly decreasing between."""
    m_tol = _check_tolerance(m_tol)
    x = _check_rmsd(x)
    if x > m_tol:
        return 0.0
    # expm1 keeps both endpoints exact: x=0 -> 1.0, x=M -> 0.0
    denom = math.expm1(m_tol)
    return (denom - math.expm1(x)) / denom


def rmsd_scores(x: np.ndarray, m_tol: float) -> np.ndarray:
    """Vectorised :func:`rmsd_score`; NaN entries (missing poses) score 0."""
    m_tol = _check_tolerance(m_tol)
    x = np.asarray(x, dtype=float)
    present = ~np.isnan(x)
    if np.any(np.isinf(x)) or np.any(x[present] < 0):
        raise ValidationError("rmsd values must be finite and >= 0")
    denom = math.expm1(m_tol)
    out = np.zeros_like(x)
    ok = present & (x <= m_tol)
    out[ok] = (denom - np.expm1(x[ok])) / denom
    return out


def pb_score(pb_valid: bool | None) -> int:
    """1 for a PB-valid pose, 0 otherwise (including a missing pose)."""
    return 1 if pb_valid else 0


def composite_score(rec: PerformanceRecord | None, cfg: ScoreConfig) -> float:
    if rec is None or rec.rmsd is None:
        return 0.0
    s_rmsd = rmsd_score(rec.rmsd, cfg.tolerance_m)
    s_pb = pb_score(rec.pb_valid)
    if cfg.mode is ScoreMode.MULTIPLICATIVE:
        return s_rmsd * s_pb
    return cfg.alpha * s_rmsd + (1.0 - cfg.alpha) * s_pb


def composite_scores(rmsd: np.ndarray, pb_valid: np.ndarray, cfg: ScoreConfig) -> np.ndarray:
    """Vectorised :func:`composite_score` over dense arrays (NaN rmsd = missing)."""
    rmsd = np.asarray(rmsd, dtype=float)
    s_rmsd = rmsd_scores(rmsd, cfg.tolerance_m)
    s_pb = np.where(np.isnan(rmsd), 0.0, np.asarray(pb_valid, dtype=float))
    if cfg.mode is ScoreMode.MULTIPLICATIVE:
        return s_rmsd * s_pb
    out = cfg.alpha * s_rmsd + (1.0 - cfg.alpha) * s_pb
    return np.where(np.isnan(rmsd), 0.0, out)


def build_label_matrix(records: Iterable[PerformanceRecord], portfolio: Sequence[str],
                       cfg: ScoreConfig, instance_ids: Sequence[str] | None = None) -> LabelMatrix:
    """Score every (instance, algorithm) cell; absent records score 0.

    Rows follow ``instance_ids`` when given, otherwise the sorted ids seen in
    ``records``. Columns follow ``portfolio``.
    """
    table = records if isinstance(records, PerformanceTable) else PerformanceTable(records)
    known = set(portfolio)
    if len(known) != len(portfolio):
        raise SchemaError(f"portfolio contains duplicate algorithms: {list(portfolio)}")
    for rec in table:
        if rec.algorithm not in known:
            raise SchemaError(f"record for instance {rec.instance_id!r} references unknown "
                              f"algorithm {rec.algorithm!r}")
    ids = sorted(table.instance_ids()) if instance_ids is None else list(instance_ids)
    rmsd, valid = table.to_arrays(ids, portfolio)
    return LabelMatrix(composite_scores(rmsd, valid, cfg), ids, list(portfolio))
