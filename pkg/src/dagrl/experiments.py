"""Transfer-task matrix execution and report emission.

A plan names a dataset, a set of ordered (source_group, target_group)
pairs over the four density quartiles, a training config, and seeds.
Each (pair, seed) cell trains one model and records final-epoch target
accuracy. Cells are independent; ``DAGRL_THREADS`` caps how many run
concurrently. Reports are written deterministically: identical plans and
seeds produce byte-identical CSV files.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import save_checkpoint
from .errors import ConfigurationError, DagrlError
from .graphs import parse_tudataset, split_by_density, subset_as_source, subset_as_target
from .trainer import VARIANTS, TrainConfig, evaluate, export_loss_history, train

# Ordered as in the transfer-result tables: both directions of each
# unordered group pair, lowest-density groups first.
ALL_PAIRS = ((0, 1), (1, 0), (0, 2), (2, 0), (0, 3), (3, 0),
             (1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2))


@dataclass(frozen=True)
class ExperimentPlan:
    data_root: str
    dataset_name: str
    pairs: tuple[tuple[int, int], ...]
    config: TrainConfig
    seeds: tuple[int, ...]
    out_dir: str

    def __post_init__(self):
        if not self.pairs:
            raise ConfigurationError("a plan needs at least one (source, target) pair")
        if not self.seeds:
            raise ConfigurationError("a plan needs at least one seed")
        for s, t in self.pairs:
            if s == t:
                raise ConfigurationError(f"source and target group must differ, got ({s}, {t})")
            if not (0 <= s <= 3 and 0 <= t <= 3):
                raise ConfigurationError(f"group indices must lie in 0..3, got ({s}, {t})")


@dataclass(frozen=True)
class RunResult:
    source_group: int
    target_group: int
    seed: int
    accuracy: float


@dataclass
class ResultTable:
    dataset_name: str
    pairs: tuple[tuple[int, int], ...]
    rows: list[RunResult] = field(default_factory=list)

    @property
    def initial(self) -> str:
        return self.dataset_name[0].upper()

    def group_name(self, index: int) -> str:
        return f"{self.initial}{index}"

    def pair_accuracies(self, pair) -> list[float]:
        s, t = pair
        return [r.accuracy for r in self.rows
                if r.source_group == s and r.target_group == t]

    def pair_mean(self, pair) -> float:
        values = self.pair_accuracies(pair)
        if not values:
            raise ConfigurationError(f"no results recorded for pair {pair}")
        return float(np.mean(values))

    def pair_std(self, pair) -> float:
        return float(np.std(self.pair_accuracies(pair)))

    def overall_average(self) -> float:
        return float(np.mean([self.pair_mean(p) for p in self.pairs]))


class PlanExecutionError(DagrlError):
    """One or more runs of a plan failed; carries a per-run manifest."""

    def __init__(self, failures, partial: ResultTable):
        lines = [f"{s}->{t} seed={seed}: {message}" for s, t, seed, message in failures]
        super().__init__("plan execution failed:\n" + "\n".join(lines))
        self.failures = failures
        self.partial = partial


def _max_workers() -> int:
    raw = os.environ.get("DAGRL_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigurationError(f"DAGRL_THREADS must be an integer, got {raw!r}")
    return max(1, workers)


def _run_cell(plan: ExperimentPlan, dataset, groups, pair, seed: int) -> RunResult:
    s, t = pair
    config = replace(plan.config, seed=seed)
    source = subset_as_source(dataset, groups[s])
    target = subset_as_target(dataset, groups[t])
    state = train(config, source, target)
    accuracy = evaluate(state, target)
    out = Path(plan.out_dir)
    export_loss_history(out / f"loss_history_{s}_{t}_{seed}.csv", state.history)
    save_checkpoint(out / f"checkpoint_{s}_{t}_{seed}.txt", state.named_arrays())
    return RunResult(source_group=s, target_group=t, seed=seed, accuracy=accuracy)


def run_plan(plan: ExperimentPlan) -> ResultTable:
    """Execute every (pair, seed) cell and collect target accuracies.

    Raises :class:`PlanExecutionError` with a per-run manifest if any
    cell fails; completed cells are kept on the exception's ``partial``.
    """
    dataset = parse_tudataset(plan.data_root, plan.dataset_name)
    groups = split_by_density(dataset).groups
    Path(plan.out_dir).mkdir(parents=True, exist_ok=True)

    cells = [(pair, seed) for pair in plan.pairs for seed in plan.seeds]
    table = ResultTable(dataset_name=plan.dataset_name, pairs=plan.pairs)
    failures = []
    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        futures = {pool.submit(_run_cell, plan, dataset, groups, pair, seed): (pair, seed)
                   for pair, seed in cells}
        outcomes = {}
        for future, (pair, seed) in futures.items():
            try:
                outcomes[(pair, seed)] = future.result()
            except Exception as exc:  # noqa: BLE001 - manifest reports every failure
                failures.append((pair[0], pair[1], seed, f"{type(exc).__name__}: {exc}"))
    for pair, seed in cells:
        if (pair, seed) in outcomes:
            table.rows.append(outcomes[(pair, seed)])
    if failures:
        raise PlanExecutionError(failures, table)
    return table


def run_ablation(plan: ExperimentPlan, variant: str) -> ResultTable:
    """Run the plan under a model variant substitution."""
    if variant not in VARIANTS:
        raise ConfigurationError(
            f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}"
        )
    return run_plan(replace(plan, config=replace(plan.config, variant=variant)))


def emit_report(table: ResultTable, out_dir) -> tuple[Path, Path]:
    """Write results.csv (per run) and summary.csv (per pair plus Avg.).

    Percentages are rendered with one decimal; summary.csv also carries
    the full-precision mean so the average is recomputable exactly.
    """
    if not table.rows:
        raise ConfigurationError("cannot emit a report for an empty result table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    summary_path = out / "summary.csv"

    with results_path.open("w") as fh:
        fh.write("source,target,seed,accuracy\n")
        for r in table.rows:
            fh.write(f"{table.group_name(r.source_group)},{table.group_name(r.target_group)},"
                     f"{r.seed},{r.accuracy!r}\n")

    with summary_path.open("w") as fh:
        fh.write("source,target,mean_pct,std_pct,mean_accuracy\n")
        for pair in table.pairs:
            mean = table.pair_mean(pair)
            std = table.pair_std(pair)
            fh.write(f"{table.group_name(pair[0])},{table.group_name(pair[1])},"
                     f"{100 * mean:.1f},{100 * std:.1f},{mean!r}\n")
        avg = table.overall_average()
        fh.write(f"Avg.,,{100 * avg:.1f},,{avg!r}\n")
    return results_path, summary_path
