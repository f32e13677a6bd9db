import csv
import subprocess
import sys

import numpy as np
import pytest

from phasesep.artifacts import load_artifact
from phasesep.cli import main
from phasesep.separability import recovery_score
from phasesep.signal_io import load_series


def _kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["--out", str(out), "run"])
    return code, out


@pytest.mark.slow
def test_default_run_is_separable(default_run):
    code, out = default_run
    assert code == 0
    summary = _kv(out / "summary.txt")
    assert summary["verdict"] == "separable"
    assert abs(float(summary["weight_corr_12"])) <= 0.02
    for name in ("sources.npz", "mixtures.npz", "normalized.npz", "grid.npz", "frames.npz",
                 "weights.npz", "map.npz", "verdict.npz", "recovered.npz", "config.ini",
                 "quiver.csv", "weights.csv", "partitions.txt", "map_grid.csv",
                 "map_curves.csv", "source_grid.csv", "report.txt", "report.csv",
                 "recovered.csv", "recovered_u1.wav", "recovered_u2.wav", "recovery.txt"):
        assert (out / name).exists(), name


@pytest.mark.slow
def test_rerun_gives_identical_summary(default_run, tmp_path):
    _, out = default_run
    assert main(["--out", str(tmp_path), "run"]) == 0
    assert (tmp_path / "summary.txt").read_bytes() == (out / "summary.txt").read_bytes()


@pytest.mark.slow
def test_recovered_waveforms_track_the_sources(default_run):
    _, out = default_run
    u = np.column_stack([load_series(out / f"recovered_u{k}.wav").samples[:, 0]
                         for k in (1, 2)])
    s = load_artifact(out, "sources")["samples"]
    sc = recovery_score(u, s)
    assert np.all(sc.matched >= 0.95)
    assert sc.cross <= 0.2


@pytest.mark.slow
def test_quiver_has_one_row_per_framed_bin(default_run):
    _, out = default_run
    with open(out / "quiver.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "v1_1", "v1_2", "v2_1", "v2_2", "degenerate"]
    frames = load_artifact(out, "frames")
    assert len(rows) - 1 == int(frames["valid"].sum())


@pytest.mark.slow
def test_report_records_threshold_and_tables(default_run):
    _, out = default_run
    report = _kv(out / "report.txt")
    assert report["threshold"] == "0.05" and report["partition_passed"] == "true"
    assert float(report["max_stat"]) <= 0.05
    with open(out / "report.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 9 + 9 + 4


def test_staged_commands_and_quiver_out(tmp_path):
    base = ["--out", str(tmp_path), "--set", "source.n_samples=200000"]
    assert main(base + ["gen"]) == 0
    assert main(base + ["mix"]) == 0
    assert main(base + ["bin"]) == 0
    assert main(base + ["frames", "--quiver-out", str(tmp_path / "q.csv")]) == 0
    with open(tmp_path / "q.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == int(load_artifact(tmp_path, "frames")["valid"].sum())
    assert all(len(r) == 7 for r in rows)


def test_too_few_samples_fails_in_frames_stage(tmp_path, capsys):
    code = main(["--out", str(tmp_path), "--set", "source.n_samples=2000",
                 "--set", "grid.min_count=3000", "run"])
    assert code == 1
    err = capsys.readouterr().err
    assert "frames stage failed" in err and "no valid bins" in err


def test_verify_without_map(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "verify"]) == 1
    err = capsys.readouterr().err
    assert "missing artifact" in err and "map.npz" in err


def test_schema_mismatch_is_a_stage_failure(tmp_path, capsys):
    np.savez(tmp_path / "sources.npz", schema_kind=np.array("sources"),
             schema_version=np.array(99), samples=np.zeros((5, 2)), sample_rate=1.0)
    assert main(["--out", str(tmp_path), "mix"]) == 1
    assert "schema version 99" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["--set", "grid.margin=-1", "run"],
    ["--set", "nonsense", "run"],
    ["--set", "source.kind=pink", "gen"],
])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    assert main(["--out", str(tmp_path)] + argv) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["--config", str(tmp_path / "none.ini"), "gen"]) == 2


def test_config_command_writes_effective_config(tmp_path):
    path = tmp_path / "eff.ini"
    assert main(["--set", "source.seed=3", "config", str(path)]) == 0
    assert "seed = 3" in path.read_text()


def test_external_mixture_input(tmp_path, desk_run):
    from phasesep.signal_io import TimeSeries, store_series
    mix = TimeSeries(desk_run.mixture.samples[:200_000], desk_run.mixture.sample_rate)
    store_series(mix, tmp_path / "mix.csv")
    out = tmp_path / "out"
    assert main(["--out", str(out), "run", "--input", str(tmp_path / "mix.csv")]) == 0
    summary = _kv(out / "summary.txt")
    assert "verdict" in summary and "spearman_cross_max" not in summary
    assert not (out / "sources.npz").exists()


def test_console_script_help():
    out = subprocess.run([sys.executable, "-c",
                          "import sys; from phasesep.cli import main; sys.exit(main())",
                          "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "verify" in out.stdout
