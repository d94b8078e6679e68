import logging
from pathlib import Path

import numpy as np
import pytest

from hysage.data import build_matrix, leave_one_out_split, load_interactions, save_feature_table
from hysage.datasets import planted_blocks, write_lines

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k"


def write_small_world(d: Path, n_users=40, n_items=60, seed=0, train_epochs=3) -> Path:
    """A planted-block world with matching one-hot features; returns the config path."""
    lines, uf, itf = planted_blocks(n_users, n_items, 2, seed=seed)
    write_lines(lines, d / "u.data")
    save_feature_table(uf, d / "user_block.feat")
    save_feature_table(itf, d / "item_block.feat")
    cfg = d / "run.ini"
    cfg.write_text(f"""[data]
interactions = u.data
[walk]
walk_length = 8
walks_per_node = 10
[embedding]
dim = 8
epochs = 15
[interest]
K = 2
[context.user]
block = categorical-onehot user_block.feat
[context.item]
block = categorical-onehot item_block.feat
[train]
epochs = {train_epochs}
batch_size = 64
[eval]
negatives = 19
cutoffs = 1, 5, 10
[run]
out = out
""", encoding="utf-8")
    return cfg


@pytest.fixture
def small_world(tmp_path) -> Path:
    return write_small_world(tmp_path)


@pytest.fixture
def planted():
    lines, uf, itf = planted_blocks(20, 30, 2, seed=3)
    users, items = {}, {}
    pairs = []
    for line in lines:
        u, i, _, _ = line.split("\t")
        pairs.append((users.setdefault(u, len(users)), items.setdefault(i, len(items))))
    return pairs, users, items, uf, itf


@pytest.fixture(scope="session")
def ml100k_dir() -> Path:
    if not (ML100K / "u.data").exists():
        from hysage.datasets import build_ml100k
        try:
            build_ml100k(ML100K)
        except Exception as exc:  # pragma: no cover - offline machines
            pytest.skip(f"MovieLens-100K unavailable: {exc}")
    return ML100K


@pytest.fixture(scope="session")
def ml100k(ml100k_dir):
    log_ = load_interactions(ml100k_dir / "u.data")
    split = leave_one_out_split(log_.interactions)
    Y = build_matrix(split.train, log_.n_users, log_.n_items)
    return log_, split, Y


# ------------------------------------------------------------------ acceptance ledger

CRITERIA = {
    1: "gradient fidelity",
    2: "walk-law fidelity",
    3: "similarity oracle",
    4: "embedding cluster separation",
    5: "MovieLens-100K end to end",
    6: "ablation directions",
    7: "walk-length trend",
    8: "context decoupling",
    9: "random-scorer protocol sanity",
}
_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")


@pytest.fixture
def criterion(request):
    """``criterion(ok, detail)`` records the outcome of the test's acceptance criterion.

    The criterion counts as failed from the moment the test starts, so a crash
    before the call still shows up as FAIL.
    """
    results = request.config.stash.setdefault(_RESULTS, {})
    n = request.node.get_closest_marker("criterion").args[0]
    results[n] = (False, "did not complete")

    def record(ok: bool, detail: str) -> bool:
        results[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n} ({name}): not run in this session")
