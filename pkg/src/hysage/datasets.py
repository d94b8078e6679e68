"""Dataset builders: MovieLens-100K conversion and small synthetic worlds for tests."""
from __future__ import annotations

import io
import logging
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .data import FeatureTable, one_hot_encode, save_feature_table
from .errors import DataError

log = logging.getLogger(__name__)

RECBOLE_WHEEL = "recbole==1.2.1"
_ML_PREFIX = "recbole/dataset_example/ml-100k/ml-100k."


def download_ml100k_wheel(dest) -> Path:
    """Fetch the RecBole wheel, which bundles the complete ML-100K atomic files."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    subprocess.run([sys.executable, "-m", "pip", "download", RECBOLE_WHEEL, "--no-deps",
                    "--quiet", "-d", str(dest)], check=True)
    wheels = sorted(dest.glob("recbole-*.whl"))
    if not wheels:
        raise DataError("pip download produced no recbole wheel")
    return wheels[-1]


def _read_atomic(z: zipfile.ZipFile, suffix: str) -> list[list[str]]:
    text = z.read(_ML_PREFIX + suffix).decode("latin-1")
    rows = [line.split("\t") for line in text.splitlines()[1:] if line]
    return rows


def build_ml100k(out_dir, wheel=None) -> Path:
    """Write ``u.data`` plus user/item feature files for ML-100K into ``out_dir``.

    Features: user age (dense), gender and occupation (one-hot), item release year
    and genre indicators (dense), and a 16-d title text vector (pretrained kind,
    TF-IDF + truncated SVD).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if wheel is None:
        with tempfile.TemporaryDirectory() as tmp:
            return build_ml100k(out, download_ml100k_wheel(tmp))
    with zipfile.ZipFile(wheel) as z:
        inter = _read_atomic(z, "inter")
        users = _read_atomic(z, "user")
        items = _read_atomic(z, "item")

    with open(out / "u.data", "w", encoding="utf-8") as fh:
        for u, i, r, t in inter:
            fh.write(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}\n")

    ages = {u[0]: np.array([float(u[1])]) for u in users}
    save_feature_table(FeatureTable(1, ages, "dense"), out / "user_age.feat")
    save_feature_table(one_hot_encode({u[0]: u[2] for u in users}), out / "user_gender.feat")
    save_feature_table(one_hot_encode({u[0]: u[3] for u in users}), out / "user_occupation.feat")

    years = {}
    for row in items:
        try:
            years[row[0]] = float(row[2])
        except (IndexError, ValueError):
            pass
    fill = float(np.median(list(years.values())))
    year_tab = {row[0]: np.array([years.get(row[0], fill)]) for row in items}
    save_feature_table(FeatureTable(1, year_tab, "dense"), out / "item_year.feat")

    genres = sorted({g for row in items if len(row) > 3 for g in row[3].split()})
    gidx = {g: k for k, g in enumerate(genres)}
    genre_tab = {}
    for row in items:
        v = np.zeros(len(genres))
        for g in (row[3].split() if len(row) > 3 else []):
            v[gidx[g]] = 1.0
        genre_tab[row[0]] = v
    save_feature_table(FeatureTable(len(genres), genre_tab, "dense"), out / "item_genre.feat")

    save_feature_table(title_vectors({row[0]: row[1] for row in items}), out / "item_title.feat")
    log.info("ML-100K written to %s (%d interactions)", out, len(inter))
    return out


def title_vectors(titles: dict[str, str], dim: int = 16, seed: int = 0) -> FeatureTable:
    from sklearn.decomposition import TruncatedSVD
    from sklearn.feature_extraction.text import TfidfVectorizer

    keys = list(titles)
    X = TfidfVectorizer(min_df=2).fit_transform([titles[k] for k in keys])
    Z = TruncatedSVD(n_components=dim, random_state=seed).fit_transform(X)
    return FeatureTable(dim, {k: Z[n] for n, k in enumerate(keys)}, "pretrained")


def planted_blocks(n_users: int = 20, n_items: int = 30, n_blocks: int = 2, p_in: float = 0.6,
                   p_out: float = 0.03, seed: int = 0):
    """Users and items split into blocks; users mostly interact inside their block.

    Returns (lines, user_features, item_features) where ``lines`` are
    ``user<TAB>item<TAB>rating<TAB>timestamp`` strings and the feature tables
    carry a one-hot block indicator.
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(n_users) % n_blocks
    ib = np.arange(n_items) % n_blocks
    lines = []
    t = 0
    for u in range(n_users):
        probs = np.where(ib == ub[u], p_in, p_out)
        chosen = np.flatnonzero(rng.random(n_items) < probs)
        if chosen.size < 3:
            chosen = np.union1d(chosen, rng.choice(np.flatnonzero(ib == ub[u]), 3, replace=False))
        for i in rng.permutation(chosen):
            t += 1
            lines.append(f"u{u}\ti{i}\t1\t{t}")
    eye = np.eye(n_blocks)
    uf = FeatureTable(n_blocks, {f"u{u}": eye[ub[u]] for u in range(n_users)}, "categorical-onehot")
    itf = FeatureTable(n_blocks, {f"i{i}": eye[ib[i]] for i in range(n_items)}, "categorical-onehot")
    return lines, uf, itf


def write_lines(lines, path) -> Path:
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
