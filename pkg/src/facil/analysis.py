"""Scaling fits, baseline samplers, strategy comparison, and design checks.

Covers the quantitative side: power-law fitting of failure rate against demo
count, gaussian/uniform baseline dataset samplers, budget-matched strategy
comparison against the curation flywheel, the reduced-vs-full benchmark gap,
and the factor-design checker that flags compositions the factor structure
predicts but evaluation does not deliver.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .flywheel import FlywheelConfig, RunHistory, run_flywheel
from .oracle import (
    EvaluationReport,
    OracleParams,
    derive_tag,
    mapped_evaluation,
    simulate_evaluation,
)
from .orbit import empirical_orbit, product_closure
from .spaces import Composition, FactorSpace, Tensor, format_composition

STRATEGY_NAMES = ("facil_ratio", "factors_mixture", "gaussian")


def stream_tag(name: str) -> int:
    """Stable 64-bit tag for a strategy or benchmark label."""
    return derive_tag(*name.encode("utf-8"))


@dataclass(frozen=True)
class ScalingFit:
    """Power-law fit failure ~ N**(-alpha) from log-log least squares."""

    alpha: float
    log_c: float
    r_squared: float
    n_points: int

    def __post_init__(self) -> None:
        if self.n_points < 2:
            raise ValueError(f"a fit needs >= 2 points, got {self.n_points}")


def fit_power_law(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Fit failure rate 1 - success against demo count N on log-log axes.

    Ordinary least squares with intercept; alpha is the negated slope.
    Points with success >= 1 have zero failure and are dropped with a
    warning; fewer than two usable points is an error.
    """
    usable: list[tuple[float, float]] = []
    dropped = 0
    for n_demos, success in points:
        if n_demos <= 0:
            raise ValueError(f"demo counts must be positive, got {n_demos!r}")
        if success < 0:
            raise ValueError(f"success rates must be >= 0, got {success!r}")
        if success >= 1.0:
            dropped += 1
            continue
        usable.append((float(n_demos), float(success)))
    if dropped:
        warnings.warn(f"dropped {dropped} point(s) with success >= 1 (zero failure)")
    if len(usable) < 2:
        raise ValueError(f"need >= 2 points with success < 1, got {len(usable)}")

    log_n = np.log([n for n, _ in usable])
    log_fail = np.log([1.0 - s for _, s in usable])
    slope, intercept = np.polyfit(log_n, log_fail, 1)
    predicted = slope * log_n + intercept
    ss_res = float(np.sum((log_fail - predicted) ** 2))
    ss_tot = float(np.sum((log_fail - log_fail.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ScalingFit(
        alpha=float(-slope),
        log_c=float(intercept),
        r_squared=float(min(max(r_squared, 0.0), 1.0)),
        n_points=len(usable),
    )


def _gaussian_probabilities(
    space: FactorSpace, mode: Composition, sigma: float
) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    mode = space.validate(mode)
    index_grids = np.indices(space.shape).reshape(space.ndim, -1)
    centered = index_grids - np.asarray(mode, dtype=float).reshape(-1, 1)
    logits = -np.sum(centered**2, axis=0) / (2.0 * sigma * sigma)
    logits -= logits.max()
    probs = np.exp(logits)
    return probs / probs.sum()


def baseline_sampler(
    strategy: str,
    space: FactorSpace,
    n_demos: int,
    seed: int,
    mode: Composition | None = None,
    sigma: float = 1.0,
) -> Dataset:
    """Draw a dataset without regard to curation.

    "factors_mixture" samples compositions uniformly; "gaussian" samples from
    a discretized isotropic gaussian over integer grid coordinates centered
    at `mode` (grid center by default) with index-unit standard deviation
    `sigma`.  Deterministic per (strategy, seed).
    """
    if n_demos < 0:
        raise ValueError(f"n_demos must be >= 0, got {n_demos}")
    if strategy == "factors_mixture":
        probs = np.full(space.cardinality, 1.0 / space.cardinality)
    elif strategy == "gaussian":
        if mode is None:
            mode = tuple((size - 1) // 2 for size in space.shape)
        probs = _gaussian_probabilities(space, mode, sigma)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")

    key = np.array([seed & (2**64 - 1), stream_tag(strategy)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    draws = rng.multinomial(n_demos, probs)
    counts = {
        space.decode(idx): int(n) for idx, n in enumerate(draws) if n > 0
    }
    return Dataset(space, counts)


@dataclass(frozen=True)
class StrategyOutcome:
    """Overall benchmark success of one strategy at one demo budget."""

    strategy: str
    benchmark: str
    budget: int
    success: float

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"strategy must be one of {STRATEGY_NAMES}, got {self.strategy!r}")
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if not 0.0 <= self.success <= 1.0:
            raise ValueError(f"success must be in [0, 1], got {self.success!r}")


def truncate_history(history: RunHistory, budget: int) -> Dataset:
    """Dataset after the last completed iteration affordable at the budget.

    The initial seeding counts toward the budget; if even it does not fit,
    the result is empty.
    """
    best = Dataset.empty(history.world_space)
    if history.initial_dataset.total <= budget:
        best = history.initial_dataset
    for rec in history.records:
        if rec.dataset_after.total <= budget:
            best = rec.dataset_after
    return best


def compare_strategies(
    space: FactorSpace,
    params: OracleParams,
    budgets: Sequence[int],
    cfg: FlywheelConfig,
    seed: int,
    gaussian_mode: Composition | None = None,
    gaussian_sigma: float = 1.0,
    benchmark: str = "O",
    threads: int = 1,
) -> list[StrategyOutcome]:
    """Budget-matched comparison of curation against baseline samplers.

    The flywheel runs once; each budget evaluates its truncation.  Baselines
    draw budget-many demos directly.  Every (strategy, budget) cell gets its
    own rollout streams, so outcomes are order-independent and reproducible.
    """
    if list(budgets) != sorted(int(b) for b in budgets):
        raise ValueError("budgets must be sorted ascending")
    budgets = [int(b) for b in budgets]
    if budgets and budgets[0] < 0:
        raise ValueError("budgets must be >= 0")

    history = run_flywheel(
        space,
        params,
        cfg,
        eval_tag_base=derive_tag(seed, stream_tag("facil_ratio")),
        threads=threads,
    )

    outcomes: list[StrategyOutcome] = []
    for budget in budgets:
        datasets = {
            "facil_ratio": truncate_history(history, budget),
            "factors_mixture": baseline_sampler(
                "factors_mixture", space, budget, derive_tag(seed, budget)
            ),
            "gaussian": baseline_sampler(
                "gaussian",
                space,
                budget,
                derive_tag(seed, budget),
                mode=gaussian_mode,
                sigma=gaussian_sigma,
            ),
        }
        for strategy, dataset in datasets.items():
            report = simulate_evaluation(
                params,
                dataset,
                space,
                cfg.k,
                iteration_tag=derive_tag(seed, stream_tag(strategy), budget),
                threads=threads,
            )
            outcomes.append(
                StrategyOutcome(
                    strategy=strategy,
                    benchmark=benchmark,
                    budget=budget,
                    success=report.overall,
                )
            )
    return sorted(outcomes, key=lambda o: (o.strategy, o.budget))


def comparison_csv(outcomes: Sequence[StrategyOutcome]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "benchmark", "budget", "success"])
    for o in outcomes:
        writer.writerow([o.strategy, o.benchmark, o.budget, repr(o.success)])
    return buf.getvalue()


def generalization_gap(
    params: OracleParams,
    dataset: Dataset,
    reduced: FactorSpace,
    full_space: FactorSpace,
    k: int,
    seed: int,
) -> tuple[float, float, float]:
    """Rate on the slot-reduced benchmark minus rate on the full grid."""
    if full_space.shape != dataset.space.shape:
        raise ValueError(
            f"full benchmark shape {full_space.shape} does not match dataset {dataset.space.shape}"
        )
    rate_reduced = mapped_evaluation(
        params, dataset, reduced, k, iteration_tag=derive_tag(seed, stream_tag("reduced"))
    ).overall
    rate_full = simulate_evaluation(
        params, dataset, full_space, k, iteration_tag=derive_tag(seed, stream_tag("full"))
    ).overall
    return rate_reduced, rate_full, rate_reduced - rate_full


@dataclass(frozen=True)
class CompositionalityReport:
    """Product-closure predictions checked against measured success."""

    space: FactorSpace
    predicted: frozenset[Composition]
    empirical: frozenset[Composition]
    violations: tuple[Composition, ...]
    pair_counts: Mapping[tuple[int, int], int]

    @property
    def predicted_size(self) -> int:
        return len(self.predicted)

    @property
    def empirical_size(self) -> int:
        return len(self.empirical)


def compositionality_check(
    train: set[Composition] | frozenset[Composition],
    evaluation: EvaluationReport | Tensor,
    tau: float,
    strict: bool = True,
) -> CompositionalityReport:
    """Which compositions does the factor design promise but not deliver?

    Predicted compositions are the product closure of the training support;
    empirical ones are those whose measured (or exact) success clears tau.
    Each violation increments every dimension pair whose level pair never
    occurs together in the training set, attributing the failure to
    unverified pairwise interactions.
    """
    if not train:
        raise ValueError("training support must be non-empty")
    rates = evaluation.rates if isinstance(evaluation, EvaluationReport) else evaluation
    space = rates.space
    train = frozenset(space.validate(c) for c in train)

    predicted = product_closure(train)
    empirical = empirical_orbit(rates, tau, strict=strict)
    violations = tuple(sorted(predicted - empirical, key=space.encode))

    seen_pairs: dict[tuple[int, int], set[tuple[int, int]]] = {}
    for m in range(space.ndim):
        for n in range(m + 1, space.ndim):
            seen_pairs[(m, n)] = {(c[m], c[n]) for c in train}
    pair_counts = {key: 0 for key in seen_pairs}
    for comp in violations:
        for (m, n), seen in seen_pairs.items():
            if (comp[m], comp[n]) not in seen:
                pair_counts[(m, n)] += 1
    return CompositionalityReport(
        space=space,
        predicted=frozenset(predicted),
        empirical=empirical,
        violations=violations,
        pair_counts=pair_counts,
    )


def violations_csv(report: CompositionalityReport, rates: Tensor) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["composition_indices", "predicted_p_or_rate"])
    for comp in report.violations:
        writer.writerow([format_composition(comp), repr(float(rates[comp]))])
    return buf.getvalue()


def scaling_csv(fits: Mapping[str, ScalingFit]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["benchmark", "alpha", "r2", "points"])
    for benchmark in fits:
        fit = fits[benchmark]
        writer.writerow([benchmark, repr(fit.alpha), repr(fit.r_squared), fit.n_points])
    return buf.getvalue()


def bundled_rates(name: str) -> str:
    """Text of a rate-table CSV shipped inside the package."""
    return (resources.files("facil") / "data" / name).read_text(encoding="utf-8")


def load_rate_table(text: str) -> dict[str, list[tuple[float, float]]]:
    """Parse a (benchmark, n_demos, success_rate) CSV into fit inputs.

    A missing benchmark column puts every row under the single key "all".
    """
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("empty rate table")
    fields = set(reader.fieldnames)
    if not {"n_demos", "success_rate"} <= fields:
        raise ValueError(f"rate table needs n_demos and success_rate columns, got {sorted(fields)}")
    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in reader:
        benchmark = row.get("benchmark", "all") or "all"
        grouped.setdefault(benchmark, []).append(
            (float(row["n_demos"]), float(row["success_rate"]))
        )
    return grouped
