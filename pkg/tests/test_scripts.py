import importlib.util
from pathlib import Path

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


def load(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_sweep_csv(capsys):
    load("sweep_regimes").main(["--world", "8", "--ppn", "4", "--csv"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("ppn,pattern,algorithm")
    assert len(lines) == 1 + 6 * 5


def test_compare_matrix_all_ok(capsys, data_dir):
    assert load("compare_matrix").main([str(data_dir / "symmetric.mtx"), "--world", "4", "--ppn", "2"]) == 0
    assert "MISMATCH" not in capsys.readouterr().out
