"""CSV ingestion, synthetic datasets with planted structure, and dataset persistence.

File grammar (UTF-8, comma-delimited, header row mandatory, ``.`` decimals)::

    features.csv     instance_id,f_0,f_1,...,f_{d-1}
    performance.csv  instance_id,algorithm,rmsd_angstrom,pb_valid[,pb_check_*...]
    ground_truth.csv instance_id,best_algorithm

An empty ``rmsd_angstrom`` field marks a docking run that produced no pose.
``pb_valid`` is ``0`` or ``1``; any ``pb_check_*`` columns (one per
PoseBusters check) are conjoined with it. A file may carry check columns
without ``pb_valid``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, ValidationError
from .scoring import PerformanceRecord, PerformanceTable

FEATURE_PREFIX = "f_"
PERF_COLUMNS = ("instance_id", "algorithm", "rmsd_angstrom")
PB_CHECK_PREFIX = "pb_check_"
TRUE_TOKENS = {"1", "true", "True", "TRUE"}
FALSE_TOKENS = {"0", "false", "False", "FALSE"}


def _fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _read_rows(path):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open file: {exc.strerror}", path=path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty (header row is mandatory)", path=path, line=1) from None
        except csv.Error as exc:
            raise ParseError(str(exc), path=path, line=1) from exc
        rows = []
        try:
            for row in reader:
                if not row:
                    continue
                rows.append((reader.line_num, row))
        except csv.Error as exc:
            raise ParseError(str(exc), path=path, line=reader.line_num) from exc
    return path, [h.strip() for h in header], rows


def load_features(path):
    """Read ``features.csv``; returns ``(instance_ids, matrix)`` in file order."""
    path, header, rows = _read_rows(path)
    if not header or header[0] != "instance_id":
        raise ParseError("first header column must be 'instance_id'", path=path, line=1)
    names = header[1:]
    expected = [f"{FEATURE_PREFIX}{i}" for i in range(len(names))]
    if not names or names != expected:
        raise ParseError(f"feature columns must be f_0..f_{{d-1}}, got {names}", path=path, line=1)
    d = len(names)
    ids: list[str] = []
    seen: dict[str, int] = {}
    values = np.empty((len(rows), d))
    for r, (line, row) in enumerate(rows):
        if len(row) != d + 1:
            raise ParseError(f"ragged row: expected {d + 1} fields, found {len(row)}",
                             path=path, line=line)
        iid = row[0].strip()
        if not iid:
            raise ParseError("empty instance_id", path=path, line=line)
        if iid in seen:
            raise SchemaError(f"{path}:{line}: duplicate instance_id {iid!r} "
                              f"(first seen on line {seen[iid]})")
        seen[iid] = line
        for c, tok in enumerate(row[1:]):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"column {names[c]}: {tok!r} is not a number",
                                 path=path, line=line) from None
            if not math.isfinite(v):
                raise ValidationError(f"{path}:{line}: column {names[c]} is not finite ({tok!r})")
            values[r, c] = v
        ids.append(iid)
    return ids, values


def _parse_bool(tok, path, line, column):
    tok = tok.strip()
    if tok in TRUE_TOKENS:
        return True
    if tok in FALSE_TOKENS:
        return False
    raise ValidationError(f"{path}:{line}: column {column}: unknown token {tok!r} (expected 0 or 1)")


def load_performance(path) -> PerformanceTable:
    path, header, rows = _read_rows(path)
    if tuple(header[:3]) != PERF_COLUMNS:
        raise ParseError(f"header must start with {','.join(PERF_COLUMNS)}", path=path, line=1)
    extra = header[3:]
    checks = [c for c in extra if c.startswith(PB_CHECK_PREFIX)]
    unknown = [c for c in extra if c != "pb_valid" and not c.startswith(PB_CHECK_PREFIX)]
    if unknown:
        raise ParseError(f"unknown columns {unknown}", path=path, line=1)
    if "pb_valid" not in extra and not checks:
        raise ParseError("need a pb_valid column or pb_check_* columns", path=path, line=1)
    bool_cols = [(i + 3, name) for i, name in enumerate(extra)]
    table = PerformanceTable()
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"ragged row: expected {len(header)} fields, found {len(row)}",
                             path=path, line=line)
        iid, alg, rmsd_tok = (t.strip() for t in row[:3])
        if not iid or not alg:
            raise ParseError("empty instance_id or algorithm", path=path, line=line)
        if rmsd_tok == "":
            rmsd = None
        else:
            try:
                rmsd = float(rmsd_tok)
            except ValueError:
                raise ParseError(f"rmsd_angstrom {rmsd_tok!r} is not a number",
                                 path=path, line=line) from None
            if not math.isfinite(rmsd) or rmsd < 0:
                raise ValidationError(f"{path}:{line}: rmsd_angstrom must be finite and >= 0, "
                                      f"got {rmsd_tok!r} (instance {iid}, algorithm {alg})")
        valid = all(_parse_bool(row[i], path, line, name) for i, name in bool_cols)
        try:
            table.add(PerformanceRecord(iid, alg, rmsd, valid))
        except SchemaError as exc:
            raise SchemaError(f"{path}:{line}: {exc}") from None
    return table


def write_features(path, instance_ids: Sequence[str], features) -> None:
    features = np.asarray(features, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id"] + [f"{FEATURE_PREFIX}{i}" for i in range(features.shape[1])])
        for iid, row in zip(instance_ids, features):
            w.writerow([iid] + [_fmt(v) for v in row])


def write_performance(path, table: PerformanceTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(PERF_COLUMNS) + ["pb_valid"])
        for rec in table:
            rmsd = "" if rec.rmsd is None else _fmt(rec.rmsd)
            w.writerow([rec.instance_id, rec.algorithm, rmsd, int(rec.pb_valid)])


def write_ground_truth(path, ground_truth: dict[str, str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "best_algorithm"])
        for iid, alg in ground_truth.items():
            w.writerow([iid, alg])


def load_ground_truth(path) -> dict[str, str]:
    path, header, rows = _read_rows(path)
    if header != ["instance_id", "best_algorithm"]:
        raise ParseError("header must be instance_id,best_algorithm", path=path, line=1)
    out = {}
    for line, row in rows:
        if len(row) != 2:
            raise ParseError(f"ragged row: expected 2 fields, found {len(row)}", path=path, line=line)
        out[row[0]] = row[1]
    return out


@dataclass
class Dataset:
    """Aligned features and performance records.

    Rows of ``features`` follow ``instance_ids``, which is kept sorted so fold
    assignment does not depend on file order.
    """

    instance_ids: list[str]
    features: np.ndarray
    records: PerformanceTable
    portfolio: list[str]
    provenance: str = ""
    ground_truth: dict[str, str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.instance_ids):
            raise SchemaError(f"feature matrix shape {self.features.shape} does not match "
                              f"{len(self.instance_ids)} instance ids")
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise SchemaError("duplicate instance ids in features")
        if len(set(self.portfolio)) != len(self.portfolio):
            raise SchemaError(f"duplicate algorithms in portfolio {self.portfolio}")
        order = sorted(range(len(self.instance_ids)), key=self.instance_ids.__getitem__)
        self.instance_ids = [self.instance_ids[i] for i in order]
        self.features = self.features[order]
        feat_ids = set(self.instance_ids)
        rec_ids = {r.instance_id for r in self.records}
        if feat_ids != rec_ids:
            only_f = sorted(feat_ids - rec_ids)[:5]
            only_r = sorted(rec_ids - feat_ids)[:5]
            raise SchemaError(f"features and performance disagree on the instance set "
                              f"(only in features: {only_f}, only in performance: {only_r})")
        known = set(self.portfolio)
        for rec in self.records:
            if rec.algorithm not in known:
                raise SchemaError(f"performance record references algorithm {rec.algorithm!r} "
                                  f"outside the portfolio {self.portfolio}")

    @property
    def n(self) -> int:
        return len(self.instance_ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return len(self.portfolio)

    def rows(self, instance_ids: Sequence[str]) -> np.ndarray:
        index = {iid: i for i, iid in enumerate(self.instance_ids)}
        return self.features[[index[i] for i in instance_ids]]

    def arrays(self):
        """Dense ``(rmsd, pb_valid)`` arrays aligned with ``instance_ids`` x ``portfolio``."""
        return self.records.to_arrays(self.instance_ids, self.portfolio)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.instance_ids == other.instance_ids
                and np.array_equal(self.features, other.features)
                and self.records == other.records and self.portfolio == other.portfolio
                and self.ground_truth == other.ground_truth)


def load_dataset(features_path, performance_path, portfolio: Sequence[str] | None = None,
                 ground_truth_path=None) -> Dataset:
    ids, x = load_features(features_path)
    table = load_performance(performance_path)
    port = list(portfolio) if portfolio else table.algorithms()
    gt = load_ground_truth(ground_truth_path) if ground_truth_path else None
    return Dataset(ids, x, table, port, provenance=f"{features_path}|{performance_path}",
                   ground_truth=gt)


def save_dataset(dataset: Dataset, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"features": out / "features.csv", "performance": out / "performance.csv"}
    write_features(paths["features"], dataset.instance_ids, dataset.features)
    write_performance(paths["performance"], dataset.records)
    if dataset.ground_truth is not None:
        paths["ground_truth"] = out / "ground_truth.csv"
        write_ground_truth(paths["ground_truth"], dataset.ground_truth)
    return paths


class Regime(str, enum.Enum):
    PLANTED_SEPARABLE = "planted"
    DOMINANT_ALGORITHM = "dominant"
    NOISY_COMPLEMENTARY = "noisy"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            valid = ", ".join(r.value for r in cls)
            raise ConfigError(f"unknown regime {value!r}; valid regimes: {valid}") from None


@dataclass(frozen=True)
class SynthSpec:
    n_instances: int = 200
    d: int = 16
    m: int = 4
    regime: Regime = Regime.PLANTED_SEPARABLE
    noise_level: float = 0.0
    pb_fail_rate: float | tuple[float, ...] = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if self.n_instances < 1 or self.d < 1 or self.m < 1:
            raise ConfigError("n_instances, d and m must all be >= 1")
        if self.regime is Regime.PLANTED_SEPARABLE and self.d < 1:
            raise ConfigError("planted regime needs d >= 1")
        if not (self.noise_level >= 0 and math.isfinite(self.noise_level)):
            raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")
        rates = self.fail_rates()
        if any(not (0.0 <= r <= 1.0) for r in rates):
            raise ConfigError(f"pb_fail_rate entries must lie in [0, 1], got {rates}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def fail_rates(self) -> tuple[float, ...]:
        r = self.pb_fail_rate
        if isinstance(r, (int, float)):
            return (float(r),) * self.m
        r = tuple(float(v) for v in r)
        if len(r) != self.m:
            raise ConfigError(f"pb_fail_rate has {len(r)} entries for m={self.m} algorithms")
        return r


def algorithm_names(m: int) -> list[str]:
    return [f"algo{j}" for j in range(m)]


def _instance_names(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"inst{i:0{width}d}" for i in range(n)]


def _planted(spec: SynthSpec, rng):
    # cluster c has designated best algorithm c (cycled when there are more clusters than m)
    n, d, m = spec.n_instances, spec.d, spec.m
    centroids = rng.normal(0.0, 3.0, size=(m, d))
    cluster = rng.integers(0, m, size=n)
    x = centroids[cluster] + rng.normal(0.0, 0.3, size=(n, d))
    rmsd = rng.uniform(3.0, 8.0, size=(n, m))
    rows = np.arange(n)
    rmsd[rows, cluster] = 0.5 + np.abs(rng.normal(0.0, 0.1, size=n))
    valid = rng.random((n, m)) >= np.asarray(spec.fail_rates())[None, :]
    valid[rows, cluster] = True
    if spec.noise_level > 0:
        rmsd = np.abs(rmsd + rng.normal(0.0, spec.noise_level, size=rmsd.shape))
        x = x + rng.normal(0.0, spec.noise_level, size=x.shape)
    return x, rmsd, valid, cluster


def _dominant(spec: SynthSpec, rng):
    n, d, m = spec.n_instances, spec.d, spec.m
    best = int(rng.integers(0, m))
    x = rng.normal(size=(n, d))
    rmsd = rng.uniform(2.5, 8.0, size=(n, m))
    rmsd[:, best] = rng.lognormal(mean=np.log(0.8), sigma=0.3, size=n)
    valid = rng.random((n, m)) >= np.asarray(spec.fail_rates())[None, :]
    if spec.noise_level > 0:
        rmsd = np.abs(rmsd + rng.normal(0.0, spec.noise_level, size=rmsd.shape))
    return x, rmsd, valid, np.full(n, best)


def _noisy(spec: SynthSpec, rng):
    # log-RMSD of algorithm j = base_j + <z, w_j> + noise; features observe z
    n, d, m = spec.n_instances, spec.d, spec.m
    z = rng.normal(size=(n, d))
    w = rng.normal(0.0, 0.4 / math.sqrt(d), size=(d, m))
    base = np.log(np.linspace(0.9, 2.5, m))
    spread = np.linspace(0.2, 0.7, m)[::-1]
    expected = base[None, :] + z @ w
    log_rmsd = expected + rng.normal(size=(n, m)) * spread[None, :] * (1.0 + spec.noise_level)
    rmsd = np.exp(log_rmsd)
    valid = rng.random((n, m)) >= np.asarray(spec.fail_rates())[None, :]
    x = z + rng.normal(0.0, spec.noise_level, size=z.shape) if spec.noise_level > 0 else z
    return x, rmsd, valid, np.argmin(expected, axis=1)


_GENERATORS = {
    Regime.PLANTED_SEPARABLE: _planted,
    Regime.DOMINANT_ALGORITHM: _dominant,
    Regime.NOISY_COMPLEMENTARY: _noisy,
}


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Synthetic dataset whose best algorithm per instance is known.

    ``planted``: features are noisy copies of a per-cluster centroid and
    cluster ``c`` has algorithm ``c`` as its only near-native, PB-valid pose
    (about 0.5 Angstrom); every other algorithm lands at 3-8 Angstrom.
    ``dominant``: one algorithm is near-native everywhere, the rest never
    get below 2.5 Angstrom; features carry no signal.
    ``noisy``: overlapping log-normal RMSD per algorithm whose location
    depends weakly on the features, with independent PB failures.
    """
    rng = np.random.default_rng(spec.seed)
    x, rmsd, valid, best = _GENERATORS[spec.regime](spec, rng)
    ids = _instance_names(spec.n_instances)
    names = algorithm_names(spec.m)
    table = PerformanceTable(
        PerformanceRecord(ids[i], names[j], float(rmsd[i, j]), bool(valid[i, j]))
        for i in range(spec.n_instances) for j in range(spec.m))
    gt = {ids[i]: names[int(best[i])] for i in range(spec.n_instances)}
    return Dataset(ids, x, table, names, provenance=f"synthetic:{spec.regime.value}:seed={spec.seed}",
                   ground_truth=gt)


# report persistence lives next to the report schema
from .report import load_report, save_report  # noqa: E402,F401
