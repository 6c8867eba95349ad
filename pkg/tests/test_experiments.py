import numpy as np
import pytest

from dagrl.errors import ConfigurationError
from dagrl.experiments import (
    ALL_PAIRS,
    ExperimentPlan,
    PlanExecutionError,
    ResultTable,
    RunResult,
    emit_report,
    run_ablation,
    run_plan,
)
from dagrl.graphs import write_tudataset
from dagrl.synthetic import make_benchmark
from dagrl.trainer import TrainConfig


def tiny_config(**overrides):
    defaults = dict(epochs=2, lr=1e-2, hidden_dim=8, batch_size=16, lambda1=0.1,
                    lambda2=0.1, epsilon=1.0, wl_depth=1, seed=0, variant="full")
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def bench_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    write_tudataset(make_benchmark(seed=1, graphs_per_block=16), root, "SynthBench")
    return root


def make_plan(root, out, pairs=((0, 1),), seeds=(0,), **cfg):
    return ExperimentPlan(data_root=str(root), dataset_name="SynthBench", pairs=pairs,
                          config=tiny_config(**cfg), seeds=seeds, out_dir=str(out))


class TestPlanValidation:
    def test_default_pair_matrix_has_all_twelve(self):
        assert len(ALL_PAIRS) == 12
        assert len(set(ALL_PAIRS)) == 12
        assert all(s != t for s, t in ALL_PAIRS)
        assert ALL_PAIRS[0] == (0, 1) and ALL_PAIRS[-1] == (3, 2)

    def test_same_group_pair_rejected(self, bench_root, tmp_path):
        with pytest.raises(ConfigurationError):
            make_plan(bench_root, tmp_path, pairs=((1, 1),))

    def test_out_of_range_group_rejected(self, bench_root, tmp_path):
        with pytest.raises(ConfigurationError):
            make_plan(bench_root, tmp_path, pairs=((0, 4),))

    def test_unknown_ablation_variant_lists_valid_ones(self, bench_root, tmp_path):
        plan = make_plan(bench_root, tmp_path)
        with pytest.raises(ConfigurationError, match="gkn_only_dual"):
            run_ablation(plan, "bogus")


class TestRunPlan:
    def test_single_cell_shape(self, bench_root, tmp_path):
        table = run_plan(make_plan(bench_root, tmp_path / "o"))
        assert len(table.rows) == 1
        row = table.rows[0]
        assert (row.source_group, row.target_group, row.seed) == (0, 1, 0)
        assert 0.0 <= row.accuracy <= 1.0
        assert (tmp_path / "o" / "loss_history_0_1_0.csv").is_file()
        assert (tmp_path / "o" / "checkpoint_0_1_0.txt").is_file()

    def test_loss_history_columns(self, bench_root, tmp_path):
        run_plan(make_plan(bench_root, tmp_path / "o"))
        lines = (tmp_path / "o" / "loss_history_0_1_0.csv").read_text().splitlines()
        assert lines[0] == "epoch,L_S,L_DA_C,L_DA_K,L,target_accuracy"
        assert len(lines) == 3  # header + 2 epochs

    def test_byte_identical_reruns(self, bench_root, tmp_path):
        plan_a = make_plan(bench_root, tmp_path / "a", pairs=((0, 1), (1, 0)), seeds=(0, 1))
        plan_b = make_plan(bench_root, tmp_path / "b", pairs=((0, 1), (1, 0)), seeds=(0, 1))
        emit_report(run_plan(plan_a), tmp_path / "a")
        emit_report(run_plan(plan_b), tmp_path / "b")
        for name in ("results.csv", "summary.csv", "loss_history_0_1_0.csv",
                     "loss_history_1_0_1.csv", "checkpoint_0_1_0.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ablation_full_equals_run_plan(self, bench_root, tmp_path):
        plan = make_plan(bench_root, tmp_path / "a")
        base = run_plan(plan)
        again = run_ablation(make_plan(bench_root, tmp_path / "b"), "full")
        assert [r.accuracy for r in base.rows] == [r.accuracy for r in again.rows]

    def test_parallel_workers_match_serial(self, bench_root, tmp_path, monkeypatch):
        plan_serial = make_plan(bench_root, tmp_path / "s", pairs=((0, 1), (2, 3)), seeds=(0,))
        table_serial = run_plan(plan_serial)
        monkeypatch.setenv("DAGRL_THREADS", "4")
        plan_parallel = make_plan(bench_root, tmp_path / "p", pairs=((0, 1), (2, 3)), seeds=(0,))
        table_parallel = run_plan(plan_parallel)
        assert [r.accuracy for r in table_serial.rows] == [r.accuracy for r in table_parallel.rows]

    def test_checkpoint_contains_model_and_perturbations(self, bench_root, tmp_path):
        from dagrl.autodiff import load_checkpoint

        run_plan(make_plan(bench_root, tmp_path / "o"))
        arrays = load_checkpoint(tmp_path / "o" / "checkpoint_0_1_0.txt")
        keys = set(arrays)
        assert any(k.startswith("branch0_gin/") for k in keys)
        assert any(k.startswith("branch1_gkn/") for k in keys)
        assert any(k.startswith("disc0/") for k in keys)
        assert "delta/0" in keys and "zeta/0" in keys

    def test_failed_cell_raises_with_manifest(self, bench_root, tmp_path, monkeypatch):
        import dagrl.experiments as exp

        original = exp.train

        def boom(config, source, target):
            if config.seed == 1:
                raise RuntimeError("synthetic failure")
            return original(config, source, target)

        monkeypatch.setattr(exp, "train", boom)
        plan = make_plan(bench_root, tmp_path / "o", seeds=(0, 1))
        with pytest.raises(PlanExecutionError) as excinfo:
            run_plan(plan)
        failures = excinfo.value.failures
        assert failures == [(0, 1, 1, "RuntimeError: synthetic failure")]
        assert [r.seed for r in excinfo.value.partial.rows] == [0]


class TestReport:
    def synthetic_table(self):
        pairs = ((0, 1), (1, 0))
        table = ResultTable(dataset_name="Mutagenicity", pairs=pairs)
        table.rows = [
            RunResult(0, 1, 0, 0.779),
            RunResult(0, 1, 1, 0.781),
            RunResult(1, 0, 0, 0.70),
            RunResult(1, 0, 1, 0.72),
        ]
        return table

    def test_summary_row_rendering(self, tmp_path):
        pairs = ((0, 1),)
        table = ResultTable(dataset_name="Mutagenicity", pairs=pairs)
        table.rows = [RunResult(0, 1, 0, 0.779)]
        _, summary = emit_report(table, tmp_path)
        lines = summary.read_text().splitlines()
        assert lines[1].startswith("M0,M1,77.9,")
        assert lines[-1].startswith("Avg.,,77.9,")

    def test_results_rows_count(self, tmp_path):
        table = ResultTable(dataset_name="SynthBench", pairs=ALL_PAIRS)
        for pair in ALL_PAIRS:
            for seed in range(3):
                table.rows.append(RunResult(pair[0], pair[1], seed, 0.5))
        results, summary = emit_report(table, tmp_path)
        lines = results.read_text().splitlines()
        assert len(lines) == 1 + 36
        # Full matrix: one summary row per pair plus the Avg. row.
        summary_lines = summary.read_text().splitlines()
        assert len(summary_lines) == 1 + 12 + 1
        assert summary_lines[1].startswith("S0,S1,")
        assert summary_lines[-1].startswith("Avg.,")

    def test_empty_table_rejected(self, tmp_path):
        table = ResultTable(dataset_name="X", pairs=((0, 1),))
        with pytest.raises(ConfigurationError):
            emit_report(table, tmp_path)
        assert not (tmp_path / "results.csv").exists()

    def test_average_recomputable_from_results(self, tmp_path):
        table = self.synthetic_table()
        results, summary = emit_report(table, tmp_path)
        rows = results.read_text().splitlines()[1:]
        by_pair = {}
        for line in rows:
            src, tgt, _seed, acc = line.split(",")
            by_pair.setdefault((src, tgt), []).append(float(acc))
        recomputed = np.mean([np.mean(v) for v in by_pair.values()])
        reported = float(summary.read_text().splitlines()[-1].split(",")[4])
        assert abs(recomputed - reported) <= 1e-9
        assert abs(table.overall_average() - reported) <= 1e-9

    def test_avg_is_mean_of_pair_means(self):
        table = self.synthetic_table()
        expected = np.mean([np.mean([0.779, 0.781]), np.mean([0.70, 0.72])])
        assert table.overall_average() == pytest.approx(expected, abs=1e-12)
