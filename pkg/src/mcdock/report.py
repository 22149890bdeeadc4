"""Evaluation report structure, JSON persistence and the text table renderer.

``report.json`` layout (``schema_version`` 1)::

    {
      "schema_version": 1,
      "metrics": [{"key": "rmsd<=1A&pb", "rmsd_threshold": 1.0, "require_pb_valid": true}, ...],
      "k": 10, "seed": 0, "n_instances": 2000,
      "portfolio": ["algo0", ...],
      "significance_test": "wilcoxon",
      "fold_sizes": [200, ...],
      "sbs_per_fold": ["algo2", ...],
      "sbs":  {"per_fold": {metric_key: [rate, ...]}, "mean": {metric_key: rate}},
      "vbs":  {"per_fold": {...}, "mean": {...}},
      "vbs_frequencies": {algorithm: count},
      "standalone": {algorithm: {"per_fold": {...}, "pooled": {metric_key: rate}}},
      "methods": {
        name: {"per_fold": {...}, "mean": {...}, "delta_vs_sbs": {...},
               "p_vs_sbs": {metric_key: p or null}, "p_vs_bce": {...} or null,
               "selection_frequencies": {algorithm: count},
               "portfolio_per_fold": [[algorithm, ...], ...], "config": {...}}
      },
      "config": {... fully resolved run configuration ...}
    }

Rates are fractions in [0, 1] stored at full precision; the text renderer
prints percentages with one decimal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ParseError, ReportVersionError, SchemaError

SCHEMA_VERSION = 1
SIGNIFICANCE_LEVEL = 0.05


@dataclass
class RateSummary:
    per_fold: dict[str, list[float]]
    mean: dict[str, float]


@dataclass
class MethodResult:
    per_fold: dict[str, list[float]]
    mean: dict[str, float]
    delta_vs_sbs: dict[str, float]
    p_vs_sbs: dict[str, float | None]
    selection_frequencies: dict[str, int]
    portfolio_per_fold: list[list[str]]
    config: dict = field(default_factory=dict)
    p_vs_bce: dict[str, float | None] | None = None


@dataclass
class EvalReport:
    metrics: list[dict]
    k: int
    seed: int
    n_instances: int
    portfolio: list[str]
    fold_sizes: list[int]
    sbs_per_fold: list[str]
    sbs: RateSummary
    vbs: RateSummary
    vbs_frequencies: dict[str, int]
    standalone: dict[str, dict]
    methods: dict[str, MethodResult]
    significance_test: str = "wilcoxon"
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def metric_keys(self) -> list[str]:
        return [m["key"] for m in self.metrics]

    def to_dict(self) -> dict:
        d = asdict(self)
        # keep schema_version first in the file
        return {"schema_version": d.pop("schema_version"), **d}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ReportVersionError(f"report schema version {version!r} is not supported "
                                     f"(this build reads version {SCHEMA_VERSION})")
        try:
            d["sbs"] = RateSummary(**d["sbs"])
            d["vbs"] = RateSummary(**d["vbs"])
            d["methods"] = {k: MethodResult(**v) for k, v in d["methods"].items()}
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"report does not match schema version {SCHEMA_VERSION}: {exc}") from exc


def dumps_report(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def save_report(path, report: EvalReport) -> None:
    text = dumps_report(report)
    Path(path).write_text(text, encoding="utf-8")


def load_report(path) -> EvalReport:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read report: {exc.strerror}", path=path) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", path=path, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError("report must be a JSON object", path=path)
    return EvalReport.from_dict(data)


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _metric_label(m: dict) -> str:
    label = f"<={m['rmsd_threshold']:g}A"
    if m.get("require_pb_valid", True):
        label += " & PB-valid"
    return label


def render_table(report: EvalReport) -> str:
    """Plain-text table: one row per standalone algorithm, then SBS/VBS, then each method.

    Columns per metric are ``Abs`` (percent) and ``Delta`` (percentage points
    over SBS, ``*`` when p < 0.05 vs SBS); the last column says whether a
    ranking-loss variant differs significantly from its BCE-only twin.
    """
    keys = report.metric_keys
    name_w = max([len("Method"), len("VBS"), *(len(a) + 6 for a in report.portfolio),
                  *(len(n) for n in report.methods)]) + 2
    col_w = 18
    head = "Method".ljust(name_w) + "".join(_metric_label(m).center(col_w) for m in report.metrics)
    head += "LTR".center(6)
    sub = " " * name_w + "".join(("Abs".rjust(7) + "Delta".rjust(9)).ljust(col_w) for _ in keys)
    lines = [head, sub, "-" * len(head)]

    sbs_name = max(set(report.sbs_per_fold), key=report.sbs_per_fold.count) if report.sbs_per_fold else None

    def row(name, values, deltas=None, ltr="--"):
        cells = []
        for key in keys:
            d = "--" if deltas is None else deltas[key]
            cells.append((_pct(values[key]).rjust(7) + d.rjust(9)).ljust(col_w))
        return name.ljust(name_w) + "".join(cells) + ltr.center(6)

    for alg in report.portfolio:
        label = f"{alg} (SBS)" if alg == sbs_name else alg
        lines.append(row(label, report.standalone[alg]["pooled"]))
    lines.append(row("SBS (per fold)", report.sbs.mean))
    lines.append(row("VBS", report.vbs.mean))
    lines.append("-" * len(head))
    for name, res in report.methods.items():
        deltas = {}
        for key in keys:
            p = res.p_vs_sbs.get(key)
            star = "*" if p is not None and p < SIGNIFICANCE_LEVEL else ""
            deltas[key] = f"{100.0 * res.delta_vs_sbs[key]:+.1f}{star}"
        if res.p_vs_bce is None:
            ltr = "--"
        else:
            sig = any(p is not None and p < SIGNIFICANCE_LEVEL for p in res.p_vs_bce.values())
            ltr = "Yes" if sig else "No"
        lines.append(row(name, res.mean, deltas, ltr))
    return "\n".join(lines) + "\n"


def render_frequencies(portfolio, counts_by_source: dict[str, dict[str, int]]) -> str:
    """Selection counts per algorithm (zeros included), one column per source."""
    sources = list(counts_by_source)
    name_w = max([len("Algorithm"), *(len(a) for a in portfolio)]) + 2
    lines = ["Algorithm".ljust(name_w) + "".join(s.rjust(max(10, len(s) + 2)) for s in sources)]
    for alg in portfolio:
        lines.append(alg.ljust(name_w) + "".join(
            str(counts_by_source[s].get(alg, 0)).rjust(max(10, len(s) + 2)) for s in sources))
    lines.append("total".ljust(name_w) + "".join(
        str(sum(counts_by_source[s].values())).rjust(max(10, len(s) + 2)) for s in sources))
    return "\n".join(lines) + "\n"
