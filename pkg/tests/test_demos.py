import runpy
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parents[1] / "demos"


@pytest.mark.parametrize("name", ["01_measurements.py", "02_missing_measurements.py"])
def test_demo_runs(name, capsys):
    runpy.run_path(str(DEMOS / name), run_name="__main__")
    assert capsys.readouterr().out


def test_end_to_end_demo_on_saved_bundle(tiny_bundle_dir, monkeypatch, capsys):
    monkeypatch.setattr("sys.argv", ["03_end_to_end.py", str(tiny_bundle_dir)])
    runpy.run_path(str(DEMOS / "03_end_to_end.py"), run_name="__main__")
    out = capsys.readouterr().out
    assert "incomplete pure record" in out and "sigma=pi/6" in out
