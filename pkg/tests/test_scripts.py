import pytest

from pathlib import Path

import csv

from alpha_mixture.harness.exceptions import NumericDegeneracyError

from alpha_mixture.scripts import alpha_mixture as cli

from alpha_mixture.targets import TargetKind


CONFIG = """
num_components = 3
trials = 2
seed = 5

[target]
kind = "ewgmm"
dimension = 2

[schedule]
alpha = 0.2
num_samples = 30
num_iterations = 4
eta = 0.5
gamma = 0.5

[sweep]
gamma = [0.5, 1.0]
"""


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    path = tmp_path / "experiment.toml"
    path.write_text(CONFIG, encoding="utf-8")
    return path


def test_targets_list(capsys: pytest.CaptureFixture[str]) -> None:
    cli.main(["targets", "list"])
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in lines] == [kind.value for kind in TargetKind]


def test_run(config_file: Path, tmp_path: Path) -> None:
    out = tmp_path / "out"
    cli.main(["run", str(config_file), "--out", str(out), "--trials", "3", "-j", "2"])
    assert (out / "trace.csv").is_file()
    assert (out / "weights.csv").is_file()
    assert (out / "trace.gp").is_file()
    assert len(list((out / "states").iterdir())) == 3
    with (out / "summary.csv").open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[1][8:] == ["3", "5"]


def test_run_seed_override(config_file: Path, tmp_path: Path) -> None:
    cli.main(["run", str(config_file), "--out", str(tmp_path / "a")])
    cli.main(["run", str(config_file), "--out", str(tmp_path / "b"), "--seed", "6"])
    a = (tmp_path / "a" / "trace.csv").read_bytes()
    b = (tmp_path / "b" / "trace.csv").read_bytes()
    assert a != b


def test_sweep(config_file: Path, tmp_path: Path) -> None:
    cli.main(["sweep", str(config_file), "--out", str(tmp_path / "sweep")])
    assert (tmp_path / "sweep" / "index.csv").is_file()
    assert (tmp_path / "sweep" / "cell_001" / "summary.csv").is_file()


def test_eval(
    config_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    out = tmp_path / "out"
    cli.main(["run", str(config_file), "--out", str(out)])
    capsys.readouterr()
    states = sorted(str(p) for p in (out / "states").iterdir())
    cli.main(["eval", str(config_file), *states])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "path,vr_bound,psi_exact,squared_error"
    assert len(lines) == 1 + 2 + 1
    assert lines[-1].startswith("# logmse: ")


@pytest.mark.parametrize(
    "text",
    [
        # Unreadable or invalid configurations
        "[schedule\n",
        "[schedule]\nalpha = 0.2\n",
        "rule = 'SGD'\n[schedule]\nalpha = 0.2\nnum_iterations = 2\n",
        "[target]\nkind = 'banana'\n[schedule]\nalpha = 0.2\nnum_iterations = 2\n",
    ],
)
def test_config_error_exit_status(tmp_path: Path, text: str) -> None:
    path = tmp_path / "bad.toml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["run", str(path), "--out", str(tmp_path / "out")])
    assert exc_info.value.code == cli.EXIT_CONFIG_ERROR == 2


def test_missing_config_exit_status(tmp_path: Path) -> None:
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["run", str(tmp_path / "missing.toml"), "--out", str(tmp_path)])
    assert exc_info.value.code == 2


def test_numeric_degeneracy_exit_status(
    config_file: Path, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    def degenerate(*args: object, **kwargs: object) -> None:
        raise NumericDegeneracyError("Iteration 0 produced an invalid mixture.")

    monkeypatch.setattr(cli, "replicate", degenerate)
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["run", str(config_file), "--out", str(tmp_path / "out")])
    assert exc_info.value.code == cli.EXIT_NUMERIC_DEGENERACY == 3


def test_missing_command() -> None:
    with pytest.raises(SystemExit) as exc_info:
        cli.main([])
    assert exc_info.value.code == 2
