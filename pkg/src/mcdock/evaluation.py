"""Experimental harness: gated metrics, VBS/SBS baselines, k-fold CV, score ablation, significance."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .data import Dataset
from .errors import ConfigError, ShapeError
from .losses import LossConfig
from .model import ArchitectureSpec, Standardizer, TrainConfig, Variant, select, train
from .report import EvalReport, MethodResult, RateSummary
from .scoring import LabelMatrix, PerformanceTable, ScoreConfig, ScoreMode, build_label_matrix


@dataclass(frozen=True)
class GatedMetricSpec:
    rmsd_threshold: float = 2.0
    require_pb_valid: bool = True

    def __post_init__(self):
        if not (self.rmsd_threshold > 0 and math.isfinite(self.rmsd_threshold)):
            raise ConfigError(f"rmsd_threshold must be > 0, got {self.rmsd_threshold}")

    @property
    def key(self) -> str:
        return f"rmsd<={self.rmsd_threshold:g}A" + ("&pb" if self.require_pb_valid else "")

    def to_dict(self) -> dict:
        return {"key": self.key, "rmsd_threshold": self.rmsd_threshold,
                "require_pb_valid": self.require_pb_valid}


DEFAULT_METRICS = (GatedMetricSpec(1.0), GatedMetricSpec(2.0))


def gated_outcomes(rmsd, pb_valid, spec: GatedMetricSpec) -> np.ndarray:
    """Boolean success per cell; missing poses (NaN rmsd) fail."""
    rmsd = np.asarray(rmsd, dtype=float)
    with np.errstate(invalid="ignore"):
        ok = ~np.isnan(rmsd) & (rmsd <= spec.rmsd_threshold)
    if spec.require_pb_valid:
        ok &= np.asarray(pb_valid, dtype=bool)
    return ok


def gated_success(selections: Mapping[str, str], records: PerformanceTable,
                  spec: GatedMetricSpec) -> float:
    """Fraction of instances whose selected pose passes the RMSD gate (and PB-validity if required)."""
    if not selections:
        return 0.0
    hits = 0
    for iid, alg in selections.items():
        rec = records.get(iid, alg)
        if rec is None or rec.rmsd is None:
            continue
        if rec.rmsd <= spec.rmsd_threshold and (rec.pb_valid or not spec.require_pb_valid):
            hits += 1
    return hits / len(selections)


def _as_selection_map(labels: LabelMatrix, idx) -> dict[str, str]:
    return {iid: labels.algorithm_ids[int(j)] for iid, j in zip(labels.instance_ids, idx)}


def vbs_selection(labels: LabelMatrix) -> dict[str, str]:
    """Per-instance best algorithm by composite score; ties go to the lowest index."""
    if labels.scores.size == 0:
        raise ShapeError("VBS needs a non-empty label matrix")
    return _as_selection_map(labels, np.argmax(labels.scores, axis=1))


def _column_means(train_labels: LabelMatrix) -> np.ndarray:
    if train_labels.scores.size == 0:
        raise ShapeError("need a non-empty training label matrix")
    return train_labels.scores.mean(axis=0)


def sbs_algorithm(train_labels: LabelMatrix) -> str:
    """Algorithm with the highest mean training score; ties go to the lowest index."""
    return train_labels.algorithm_ids[int(np.argmax(_column_means(train_labels)))]


def refine_portfolio(train_labels: LabelMatrix, k: int) -> list[str]:
    """The ``k`` algorithms with the best mean training score, in original portfolio order."""
    m = len(train_labels.algorithm_ids)
    if not 1 <= k <= m:
        raise ConfigError(f"portfolio size k={k} must lie in [1, {m}]")
    means = _column_means(train_labels)
    # stable sort on -mean keeps lower indices first among ties
    top = np.sort(np.argsort(-means, kind="stable")[:k])
    return [train_labels.algorithm_ids[j] for j in top]


def selection_frequencies(selections, portfolio: Sequence[str]) -> dict[str, int]:
    """Count how often each portfolio algorithm was selected (zeros included).

    ``selections`` may be a mapping instance -> algorithm or any iterable of
    algorithm names.
    """
    names = selections.values() if isinstance(selections, Mapping) else selections
    counts = {a: 0 for a in portfolio}
    for a in names:
        if a not in counts:
            raise ConfigError(f"selected algorithm {a!r} is not in the portfolio")
        counts[a] += 1
    return counts


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int]
    seed: int

    def test_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.assignments.items() if f == fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.assignments.items() if f != fold)

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignments.values():
            counts[f] += 1
        return counts


def kfold_split(instance_ids: Sequence[str], k: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded shuffle followed by round-robin fold assignment.

    The result does not depend on the order of ``instance_ids``.
    """
    ids = sorted(set(instance_ids))
    if len(ids) != len(instance_ids):
        raise ConfigError("instance ids must be unique")
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(ids) < k:
        raise ConfigError(f"cannot split {len(ids)} instances into k={k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan(k, {ids[p]: pos % k for pos, p in enumerate(perm)}, seed)


def wilcoxon_signed_rank(sample_a, sample_b, exact_max_n: int = 25):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get mid-ranks. For at
    most ``exact_max_n`` non-zero differences the p-value comes from the exact
    permutation distribution of the positive-rank sum; beyond that a normal
    approximation with tie and continuity correction is used.

    Returns ``(w_plus, p)``.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be 1-D with equal length, got {a.shape} and {b.shape}")
    diff = a - b
    diff = diff[diff != 0]
    n = diff.size
    if n == 0:
        return 0.0, 1.0
    ranks = stats.rankdata(np.abs(diff))
    # mid-ranks are multiples of 1/2, so doubled ranks are integers
    doubled = np.rint(2 * ranks).astype(np.int64)
    t_obs = int(doubled[diff > 0].sum())
    total = int(doubled.sum())
    if n <= exact_max_n:
        counts = np.zeros(total + 1, dtype=np.int64)
        counts[0] = 1
        for r in doubled:
            counts[r:] = counts[r:] + counts[:-r]
        lower = int(counts[:t_obs + 1].sum())
        upper = int(counts[t_obs:].sum())
        p = min(1.0, 2.0 * min(lower, upper) / float(2 ** n))
        return t_obs / 2.0, p
    mean = total / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    z = (abs(t_obs / 2.0 - mean) - 0.5) / math.sqrt(var)
    return t_obs / 2.0, float(min(1.0, 2.0 * stats.norm.sf(max(z, 0.0))))


MIN_PAIRED = 5


def paired_significance(sample_a, sample_b, method: str = "wilcoxon") -> float:
    """Two-sided p-value for a paired difference between per-fold values."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be 1-D with equal length, got {a.shape} and {b.shape}")
    if a.size < MIN_PAIRED:
        raise ConfigError(f"paired test needs at least {MIN_PAIRED} pairs, got {a.size}")
    if method == "wilcoxon":
        return wilcoxon_signed_rank(a, b)[1]
    if method == "ttest":
        diff = a - b
        if np.all(diff == 0):
            return 1.0
        if np.all(diff == diff[0]):
            return 0.0
        return float(stats.ttest_rel(a, b).pvalue)
    raise ConfigError(f"unknown significance test {method!r}; expected 'wilcoxon' or 'ttest'")


@dataclass(frozen=True)
class Method:
    """One selector configuration evaluated by the harness (a row of the results table)."""

    name: str
    arch: ArchitectureSpec
    train: TrainConfig

    @property
    def is_bce_only(self) -> bool:
        loss = self.train.loss
        return loss.weight_pl == 0 and loss.weight_ndcg == 0


def method_name(variant: Variant, loss: LossConfig) -> str:
    if loss.weight_pl == 0 and loss.weight_ndcg == 0:
        tag = "BCE"
    else:
        parts = [n for n, w in (("PL", loss.weight_pl), ("NDCG", loss.weight_ndcg)) if w > 0]
        tag = "+Both" if len(parts) == 2 and loss.weight_bce > 0 else "+" + "+".join(parts)
        if loss.weight_bce == 0:
            tag = "+".join(parts)
    return f"{'Residual' if variant is Variant.RESIDUAL else 'MLP'} ({tag})"


@dataclass
class SplitResult:
    """Everything measured on one train/test split."""

    test_ids: list[str]
    portfolio: list[str]
    selections: dict[str, str]
    rates: dict[str, float]
    history: list[float] = field(default_factory=list)


def _fit_and_select(dataset: Dataset, labels: LabelMatrix, train_ids, test_ids,
                    method: Method, portfolio_k: int | None):
    train_labels = labels.rows(train_ids)
    portfolio = list(labels.algorithm_ids)
    if portfolio_k is not None:
        portfolio = refine_portfolio(train_labels, portfolio_k)
        train_labels = train_labels.columns(portfolio)
    x_train = dataset.rows(train_ids)
    scaler = Standardizer.fit(x_train)
    arch = replace(method.arch, input_dim=dataset.d, output_dim=len(portfolio))
    params, history = train(scaler.transform(x_train), train_labels, arch, method.train)
    picks = select(params, scaler.transform(dataset.rows(test_ids)))
    picks = np.atleast_1d(picks)
    return portfolio, {iid: portfolio[int(j)] for iid, j in zip(test_ids, picks)}, history


def run_split(dataset: Dataset, train_ids: Sequence[str], test_ids: Sequence[str],
              score_cfg: ScoreConfig, method: Method,
              metrics: Sequence[GatedMetricSpec] = DEFAULT_METRICS,
              portfolio_k: int | None = None) -> SplitResult:
    """Standardise on the train rows, train the decoder, select on the test rows, score the picks."""
    train_ids, test_ids = list(train_ids), list(test_ids)
    labels = build_label_matrix(dataset.records, dataset.portfolio, score_cfg,
                                instance_ids=dataset.instance_ids)
    portfolio, selections, history = _fit_and_select(dataset, labels, train_ids, test_ids,
                                                     method, portfolio_k)
    rates = {m.key: gated_success(selections, dataset.records, m) for m in metrics}
    return SplitResult(test_ids, portfolio, selections, rates, history)


def _run_task(args):
    dataset, labels, train_ids, test_ids, method, portfolio_k = args
    return _fit_and_select(dataset, labels, train_ids, test_ids, method, portfolio_k)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _mean(values):
    return float(np.mean(values)) if len(values) else 0.0


def cross_validate(dataset: Dataset, score_cfg: ScoreConfig, methods: Method | Sequence[Method],
                   metric_specs: Sequence[GatedMetricSpec] = DEFAULT_METRICS, k: int = 10,
                   seed: int = 0, portfolio_k: int | None = None, jobs: int = 1,
                   significance: str = "wilcoxon", folds: Sequence[int] | None = None,
                   config: dict | None = None) -> EvalReport:
    """k-fold evaluation of one or more selector configurations against SBS and VBS.

    Per fold: the SBS is chosen from the training rows only, the VBS and the
    standalone algorithms are scored on the test rows, and every method is
    trained on standardised training features (optionally restricted to the
    top-``portfolio_k`` training algorithms) and scored on its test picks.
    ``folds`` restricts the run to a subset of fold indices.
    """
    methods = [methods] if isinstance(methods, Method) else list(methods)
    if not methods:
        raise ConfigError("need at least one method to evaluate")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError(f"method names must be unique, got {names}")
    metric_specs = list(metric_specs)
    keys = [m.key for m in metric_specs]
    plan = kfold_split(dataset.instance_ids, k, seed)
    fold_ids = list(range(k)) if folds is None else [int(f) for f in folds]
    if any(not 0 <= f < k for f in fold_ids):
        raise ConfigError(f"fold indices must lie in [0, {k})")

    labels = build_label_matrix(dataset.records, dataset.portfolio, score_cfg,
                                instance_ids=dataset.instance_ids)
    rmsd, valid = dataset.arrays()
    success = {m.key: gated_outcomes(rmsd, valid, m) for m in metric_specs}
    row_of = {iid: i for i, iid in enumerate(dataset.instance_ids)}
    col_of = {a: j for j, a in enumerate(dataset.portfolio)}

    def rate(sel: Mapping[str, str], key):
        if not sel:
            return 0.0
        return float(np.mean([success[key][row_of[i], col_of[a]] for i, a in sel.items()]))

    splits = [(plan.train_ids(f), plan.test_ids(f)) for f in fold_ids]
    tasks = [(dataset, labels, tr, te, meth, portfolio_k) for meth in methods for tr, te in splits]
    outputs = _map(_run_task, tasks, jobs)

    sbs_per_fold, sbs_rates, vbs_rates = [], {k_: [] for k_ in keys}, {k_: [] for k_ in keys}
    vbs_counts = {a: 0 for a in dataset.portfolio}
    standalone_fold = {a: {k_: [] for k_ in keys} for a in dataset.portfolio}
    standalone_hits = {a: {k_: 0 for k_ in keys} for a in dataset.portfolio}
    n_tested = 0
    for tr, te in splits:
        sbs = sbs_algorithm(labels.rows(tr))
        sbs_per_fold.append(sbs)
        vbs = vbs_selection(labels.rows(te))
        for a, c in selection_frequencies(vbs, dataset.portfolio).items():
            vbs_counts[a] += c
        rows = [row_of[i] for i in te]
        n_tested += len(te)
        for key in keys:
            sbs_rates[key].append(rate({i: sbs for i in te}, key))
            vbs_rates[key].append(rate(vbs, key))
            for a in dataset.portfolio:
                hits = int(success[key][rows, col_of[a]].sum())
                standalone_hits[a][key] += hits
                standalone_fold[a][key].append(hits / len(te))

    sbs_summary = RateSummary(sbs_rates, {key: _mean(v) for key, v in sbs_rates.items()})
    standalone = {a: {"per_fold": standalone_fold[a],
                      "pooled": {key: standalone_hits[a][key] / n_tested for key in keys}}
                  for a in dataset.portfolio}

    results: dict[str, MethodResult] = {}
    for mi, meth in enumerate(methods):
        outs = outputs[mi * len(splits):(mi + 1) * len(splits)]
        per_fold = {key: [rate(sel, key) for _, sel, _ in outs] for key in keys}
        mean = {key: _mean(v) for key, v in per_fold.items()}
        freqs = {a: 0 for a in dataset.portfolio}
        for _, sel, _ in outs:
            for a, c in selection_frequencies(sel, dataset.portfolio).items():
                freqs[a] += c
        p_sbs = {}
        for key in keys:
            p_sbs[key] = (paired_significance(per_fold[key], sbs_rates[key], significance)
                          if len(splits) >= MIN_PAIRED else None)
        results[meth.name] = MethodResult(
            per_fold=per_fold, mean=mean,
            delta_vs_sbs={key: mean[key] - sbs_summary.mean[key] for key in keys},
            p_vs_sbs=p_sbs, selection_frequencies=freqs,
            portfolio_per_fold=[port for port, _, _ in outs],
            config={"arch": meth.arch.to_dict(), "train": meth.train.to_dict()})

    # ranking-loss variants are compared with the BCE-only method of the same decoder
    for meth in methods:
        if meth.is_bce_only:
            continue
        twin = next((b for b in methods if b.is_bce_only and b.arch.variant is meth.arch.variant),
                    None)
        if twin is None:
            continue
        res, base = results[meth.name], results[twin.name]
        res.p_vs_bce = {key: (paired_significance(res.per_fold[key], base.per_fold[key], significance)
                              if len(splits) >= MIN_PAIRED else None) for key in keys}

    return EvalReport(
        metrics=[m.to_dict() for m in metric_specs], k=k, seed=seed,
        n_instances=dataset.n, portfolio=list(dataset.portfolio),
        fold_sizes=[len(te) for _, te in splits], sbs_per_fold=sbs_per_fold,
        sbs=sbs_summary, vbs=RateSummary(vbs_rates, {key: _mean(v) for key, v in vbs_rates.items()}),
        vbs_frequencies=vbs_counts, standalone=standalone, methods=results,
        significance_test=significance, config=dict(config or {}))


def format_tolerance(m: float) -> str:
    """``2`` for integers, ``ln 11`` for logs of integers, otherwise ``%g``."""
    if abs(m - round(m)) < 1e-12:
        return f"{int(round(m))}"
    e = math.exp(m)
    if abs(e - round(e)) < 1e-9 * e:
        return f"ln {int(round(e))}"
    return f"{m:g}"


@dataclass
class AblationResult:
    m_values: list[float]
    alpha_values: list[float]
    include_multiplicative: bool
    grids: dict[str, np.ndarray]  # metric key -> (len(M), len(alpha) [+1]) in percent

    @property
    def row_labels(self) -> list[str]:
        return [format_tolerance(m) for m in self.m_values]

    @property
    def column_labels(self) -> list[str]:
        cols = [f"{a:g}" for a in self.alpha_values]
        return cols + ["s_mul"] if self.include_multiplicative else cols

    def to_csv(self, key: str) -> str:
        lines = ["M," + ",".join(self.column_labels)]
        for label, row in zip(self.row_labels, self.grids[key]):
            lines.append(label + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def baseline_method(arch: ArchitectureSpec | None = None,
                    train_cfg: TrainConfig | None = None) -> Method:
    """Residual decoder trained with BCE only, keeping any other training settings."""
    arch = ArchitectureSpec(1, 1) if arch is None else arch
    train_cfg = TrainConfig() if train_cfg is None else train_cfg
    loss = LossConfig(sigma=train_cfg.loss.sigma)
    return Method("Residual (BCE)", replace(arch, variant=Variant.RESIDUAL),
                  replace(train_cfg, loss=loss))


def fixed_split(dataset: Dataset, k: int = 10, seed: int = 0, fold: int = 0):
    """Train/test ids of one fold of :func:`kfold_split` (a 9-1 split for k=10)."""
    plan = kfold_split(dataset.instance_ids, k, seed)
    return plan.train_ids(fold), plan.test_ids(fold)


def ablation_grid(dataset: Dataset, m_values: Sequence[float], alpha_values: Sequence[float],
                  include_multiplicative: bool = True, split=None,
                  method: Method | None = None,
                  metric_specs: Sequence[GatedMetricSpec] = DEFAULT_METRICS,
                  jobs: int = 1) -> AblationResult:
    """Gated success (percent) of the baseline selector for every (M, alpha) cell and (M, s_mul).

    All cells share one train/test ``split`` (default: fold 0 of a seed-0
    10-fold plan).
    """
    m_values = [float(m) for m in m_values]
    alpha_values = [float(a) for a in alpha_values]
    if not m_values:
        raise ConfigError("need at least one tolerance M")
    if not alpha_values and not include_multiplicative:
        raise ConfigError("need at least one alpha or the multiplicative column")
    method = baseline_method() if method is None else method
    train_ids, test_ids = fixed_split(dataset) if split is None else split
    cells = []
    for m in m_values:
        row = [ScoreConfig("add", m, a) for a in alpha_values]
        if include_multiplicative:
            row.append(ScoreConfig("mul", m))
        cells.extend(row)
    tasks = [(dataset, train_ids, test_ids, cfg, method, metric_specs) for cfg in cells]
    results = _map(_ablation_task, tasks, jobs)
    n_cols = len(alpha_values) + int(include_multiplicative)
    grids = {}
    for spec in metric_specs:
        vals = np.array([100.0 * r.rates[spec.key] for r in results])
        grids[spec.key] = vals.reshape(len(m_values), n_cols)
    return AblationResult(m_values, alpha_values, include_multiplicative, grids)


def _ablation_task(args):
    dataset, train_ids, test_ids, cfg, method, metric_specs = args
    return run_split(dataset, train_ids, test_ids, cfg, method, metric_specs)


def vbs_dominance_guaranteed(score_cfg: ScoreConfig, metric_specs: Sequence[GatedMetricSpec]) -> bool:
    """True when score-argmax VBS provably meets every gate any other choice meets.

    Holds for the multiplicative score whenever every gate is PB-gated and
    its threshold lies strictly below the tolerance M (a pose at exactly M
    passes the gate but scores 0, tying with failures).
    """
    return score_cfg.mode is ScoreMode.MULTIPLICATIVE and all(
        m.require_pb_valid and m.rmsd_threshold < score_cfg.tolerance_m for m in metric_specs)
