import pytest

from tomoforge import datagen
from tomoforge.gbdt import BoostParams
from tomoforge.lineage import LineageConfig, Workspace, _phases


def tiny_lineage(seed=0) -> LineageConfig:
    """A lineage that trains every artifact in a few seconds (untrained quality)."""
    gen = datagen.GenConfig(n_pure=400, n_mixed=400, noisy_states_per_sigma=20,
                            rotations_per_state=10, master_seed=seed,
                            distribution_mix={"normal": 4, "laplace": 2, "brown": 2, "blue": 1,
                                              "pink": 1})
    one = _phases(("adam", 1e-3, 1))
    return LineageConfig(gen=gen, latent=8, ae_schedule=one, ae_retrain_schedule=one,
                         clf_schedule=one, denoise_schedule=one, reg_schedule=one, batch_size=64,
                         boost=BoostParams(rounds=3), imputer_rows=200, seed=seed)


@pytest.fixture(scope="session")
def tiny_workspace(tmp_path_factory):
    ws = Workspace(tmp_path_factory.mktemp("tiny_ws"), tiny_lineage())
    ws.build_all()
    return ws


@pytest.fixture(scope="session")
def tiny_bundle_dir(tiny_workspace):
    path = tiny_workspace.root / "bundle"
    tiny_workspace.bundle().save(path)
    return path


@pytest.fixture(scope="session")
def tiny_bundle(tiny_workspace):
    return tiny_workspace.bundle()


# ---------------------------------------------------------------- acceptance report

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "status": "PASS", "notes": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    entry["notes"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        notes = "; ".join(dict.fromkeys(e["notes"]))
        terminalreporter.write_line(f"{e['status']} criterion {n:2d}: {e['title']}"
                                    + (f" [{notes}]" if notes else ""))
