"""Pipeline stages behind the command line: prepare, embed, train, evaluate, ablate, sweep.

Stages talk only through files under the run directory::

    prepared/        train.tsv, test.tsv, users.tsv, items.tsv, summary.tsv, features.tsv
    embeddings.ckpt  static user and item graph embeddings
    model.ckpt       adaptive ranking model (plus Adam state) and train_log.tsv
    eval/            report.tsv, report.txt, details.tsv, metrics.png

Context feature files are read from their configured paths whenever a model is
built, so new feature files take effect at the next train or evaluate without
touching the embedding checkpoint.
"""
from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import plots
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .context import ContextFeatures, ContextSchema
from .data import (Interaction, InteractionMatrix, Split, build_matrix, leave_one_out_split,
                   load_interactions)
from .errors import CheckpointError, ConfigError, DataError
from .evaluation import EvalReport, PopularityScorer, evaluate as run_evaluation
from .graph_embedding import (WalkConfig, count_cooccurrences, finalize, generate_walks,
                              train_embeddings)
from .interest import InterestConfig
from .ranker import RankingModel, TrainConfig, train_epoch
from .rng import stage_rng, stage_seed
from .similarity import build_item_similarity, build_user_similarity

log = logging.getLogger(__name__)

SWEEP_AXES = ("embedding_dim", "walk_length", "interest_K")


@dataclass
class Layout:
    """Where a run reads and writes its artifacts."""

    out: Path
    prepared: Path
    embeddings: Path

    @classmethod
    def for_config(cls, cfg: RunConfig) -> "Layout":
        out = Path(cfg.out)
        return cls(out, out / "prepared", out / "embeddings.ckpt")


@dataclass
class Prepared:
    user_ids: list[str]
    item_ids: list[str]
    split: Split
    Y_train: InteractionMatrix

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


# ------------------------------------------------------------------ prepare

def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path: Path) -> list[list[str]]:
    if not path.exists():
        raise DataError(f"missing file: {path} (run prepare first)")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return rows[1:]


def prepare(cfg: RunConfig, layout: Layout | None = None) -> dict:
    """Split the binarised log and write it next to the checked feature manifest."""
    layout = layout or Layout.for_config(cfg)
    cfg.validate()
    log_ = load_interactions(cfg.interactions, cfg.fmt)
    split = leave_one_out_split(log_.interactions)
    Y = build_matrix(split.train, log_.n_users, log_.n_items)
    schema = cfg.schema.load()

    d = layout.prepared
    d.mkdir(parents=True, exist_ok=True)
    cols = ["user_idx", "item_idx", "rating", "timestamp"]
    as_row = lambda x: (x.user_idx, x.item_idx, repr(float(x.rating)), x.timestamp)  # noqa: E731
    _write_rows(d / "train.tsv", cols, (as_row(x) for x in sorted(
        split.train, key=lambda x: (x.user_idx, x.timestamp, x.item_idx))))
    _write_rows(d / "test.tsv", cols, (as_row(split.test[u]) for u in sorted(split.test)))
    _write_rows(d / "users.tsv", ["idx", "id"], enumerate(log_.user_ids))
    _write_rows(d / "items.tsv", ["idx", "id"], enumerate(log_.item_ids))
    _write_rows(d / "features.tsv", ["role", "name", "kind", "dim", "path"],
                ((role, f.name, f.kind, f.dim, f.path) for role, f in schema.fields()))
    summary = {"n_users": log_.n_users, "n_items": log_.n_items, "n_interactions": len(log_),
               "n_train_entries": Y.nnz, "n_test_users": len(split.test),
               "n_single_interaction_users": len(split.dropped_users),
               "density": round(Y.density, 8)}
    _write_rows(d / "summary.tsv", ["key", "value"], summary.items())
    log.info("prepared %d users, %d items, %d interactions", log_.n_users, log_.n_items, len(log_))
    return summary


def load_prepared(layout: Layout) -> Prepared:
    d = layout.prepared
    users = [r[1] for r in _read_rows(d / "users.tsv")]
    items = [r[1] for r in _read_rows(d / "items.tsv")]
    parse = lambda r: Interaction(int(r[0]), int(r[1]), float(r[2]), int(r[3]))  # noqa: E731
    train = [parse(r) for r in _read_rows(d / "train.tsv")]
    test = {x.user_idx: x for x in (parse(r) for r in _read_rows(d / "test.tsv"))}
    Y = build_matrix(train, len(users), len(items))
    dropped = sorted(set(range(len(users))) - set(test))
    return Prepared(users, items, Split(train, test, dropped), Y)


# ------------------------------------------------------------------ embed

def embed(cfg: RunConfig, layout: Layout | None = None) -> Path:
    """Train static vectors for both similarity graphs from their walk co-occurrences."""
    layout = layout or Layout.for_config(cfg)
    prep = load_prepared(layout)
    tensors, stats, losses = {}, [], []
    for graph, S in (("user", build_user_similarity(prep.Y_train)),
                     ("item", build_item_similarity(prep.Y_train))):
        t0 = time.perf_counter()
        walk_cfg = replace(cfg.walk, seed=stage_seed(cfg.seed, f"walk.{graph}"))
        walks = generate_walks(S, walk_cfg)
        O = count_cooccurrences(walks, S.n)
        e = cfg.embedding
        emb = train_embeddings(O, e.dim, e.epochs, e.lr, stage_seed(cfg.seed, f"embed.{graph}"),
                               e.batch_size, n=S.n)
        for key in ("e", "e_ctx", "b", "b_ctx"):
            tensors[f"{graph}.{key}"] = getattr(emb, key)
        tensors[f"{graph}.final"] = finalize(emb)
        stats.append((graph, S.n, int(S.isolated().size), S.n_edges, walks.shape[0],
                      int((walks >= 0).sum()), len(O), int(O.total), f"{emb.loss_history[-1]:.6g}",
                      f"{time.perf_counter() - t0:.1f}"))
        losses += [(graph, k + 1, f"{v:.10g}") for k, v in enumerate(emb.loss_history)]
        log.info("embedded %s graph: %d nodes, %d walks, %d pairs", graph, S.n, walks.shape[0], len(O))
    ckpt = Checkpoint(tensors, {"stage": "embed", **cfg.snapshot()},
                      {"user_ids": prep.user_ids, "item_ids": prep.item_ids})
    save_checkpoint(ckpt, layout.embeddings)
    out = layout.embeddings.parent
    _write_rows(out / "embed_stats.tsv", ["graph", "nodes", "isolated", "edges", "walks", "walk_nodes",
                                          "pairs", "pair_total", "final_loss", "seconds"], stats)
    _write_rows(out / "embed_loss.tsv", ["graph", "epoch", "loss"], losses)
    plots.embedding_loss(out / "embed_loss.tsv", out / "embed_loss.png")
    return layout.embeddings


def load_embeddings(layout: Layout) -> tuple[np.ndarray, np.ndarray, Checkpoint]:
    ckpt = load_checkpoint(layout.embeddings)
    try:
        return ckpt.tensors["user.final"], ckpt.tensors["item.final"], ckpt
    except KeyError as exc:
        raise CheckpointError(f"embedding checkpoint lacks tensor {exc}") from None


# ------------------------------------------------------------------ model

def schema_for_variant(schema: ContextSchema, variant: str) -> ContextSchema:
    if variant == "no_multimodal":
        return schema.without_kinds(["pretrained"])
    if variant == "no_side_info":
        return schema.without_kinds(["categorical-onehot", "dense"])
    return schema


def load_context(cfg: RunConfig, prep: Prepared, variant: str = "full") -> ContextFeatures:
    """Read the configured feature files now; nothing is cached between stages."""
    return ContextFeatures(schema_for_variant(cfg.schema, variant).load(), prep.user_ids, prep.item_ids)


def build_model(cfg: RunConfig, prep: Prepared, variant: str = "full",
                embeddings: tuple | None = None) -> RankingModel:
    users, items = embeddings or load_embeddings(Layout.for_config(cfg))[:2]
    if users.shape[0] != prep.n_users or items.shape[0] != prep.n_items:
        raise CheckpointError("embedding checkpoint does not match the prepared dataset")
    return RankingModel(users, items, prep.Y_train, load_context(cfg, prep, variant), cfg.interest,
                        variant, stage_seed(cfg.seed, f"model.{variant}"))


def _model_config(cfg: RunConfig, variant: str, epoch: int, context_dim: int | None = None) -> dict:
    return {"stage": "train", "variant": variant, "epoch": epoch, "context_dim": context_dim,
            **cfg.snapshot()}


def train(cfg: RunConfig, layout: Layout | None = None, variant: str = "full",
          model_path: Path | None = None, resume: bool = False) -> Path:
    """Train the ranking model; with ``resume`` continue from the saved epoch and Adam state."""
    layout = layout or Layout.for_config(cfg)
    model_path = Path(model_path or layout.out / "model.ckpt")
    log_path = model_path.with_name(model_path.stem.replace("model", "train_log") + ".tsv")
    prep = load_prepared(layout)
    model = build_model(cfg, prep, variant, load_embeddings(layout)[:2])
    start = 0
    rows: list[tuple] = []
    if resume:
        if not model_path.exists():
            raise CheckpointError(f"nothing to resume: {model_path} does not exist")
        ckpt = load_checkpoint(model_path)
        if ckpt.config.get("variant") != variant:
            raise CheckpointError(f"checkpoint variant {ckpt.config.get('variant')!r} != {variant!r}")
        model.load_state_dict(ckpt.tensors)
        start = int(ckpt.config["epoch"])
        if log_path.exists():
            rows = [tuple(r) for r in _read_rows(log_path)][:start]
    for epoch in range(start, cfg.train.epochs):
        rng = stage_rng(cfg.seed, f"train.{variant}.epoch{epoch}")
        st = train_epoch(model, cfg.train, rng, epoch)
        rows.append((epoch + 1, f"{st.mean_loss:.8f}", f"{st.wall_ms:.0f}"))
        log.info("%s epoch %d: mean loss %.5f (%.1fs)", variant, epoch + 1, st.mean_loss, st.wall_ms / 1000)
        save_checkpoint(Checkpoint(model.state_dict(), _model_config(cfg, variant, epoch + 1, model.context.dim),
                                   {"user_ids": prep.user_ids, "item_ids": prep.item_ids}), model_path)
        _write_rows(log_path, ["epoch", "mean_loss", "wall_ms"], rows)
    if start >= cfg.train.epochs and not model_path.exists():
        raise ConfigError("no epochs to run")
    plots.training_loss(log_path, log_path.with_suffix(".png"))
    return model_path


def load_model(cfg: RunConfig, layout: Layout, model_path: Path | None = None,
               prep: Prepared | None = None) -> RankingModel:
    model_path = Path(model_path or layout.out / "model.ckpt")
    ckpt = load_checkpoint(model_path)
    prep = prep or load_prepared(layout)
    variant = ckpt.config.get("variant", "full")
    interest = ckpt.config.get("interest", {})
    cfg = copy.deepcopy(cfg)
    cfg.interest = InterestConfig(interest.get("K", cfg.interest.K), interest.get("hidden_dims"))
    model = build_model(cfg, prep, variant, load_embeddings(layout)[:2])
    model.load_state_dict(ckpt.tensors)
    return model


# ------------------------------------------------------------------ evaluate

def evaluate(cfg: RunConfig, layout: Layout | None = None, model_path: Path | None = None,
             report_dir: Path | None = None) -> EvalReport:
    layout = layout or Layout.for_config(cfg)
    prep = load_prepared(layout)
    model = load_model(cfg, layout, model_path, prep)
    eval_cfg = replace(cfg.eval, seed=stage_seed(cfg.seed, "eval"))
    report = run_evaluation(model, prep.split, prep.Y_train, eval_cfg)
    baseline = run_evaluation(PopularityScorer(prep.Y_train), prep.split, prep.Y_train, eval_cfg)
    write_report(report, Path(report_dir or layout.out / "eval"), baseline)
    return report


def write_report(report: EvalReport, d: Path, baseline: EvalReport | None = None) -> None:
    d.mkdir(parents=True, exist_ok=True)
    report.write(d / "report.tsv")
    report.write_details(d / "details.tsv")
    text = report.table("model")
    if baseline is not None:
        baseline.write(d / "popularity.tsv")
        text += "\n\n" + baseline.table("item popularity")
    (d / "report.txt").write_text(text + "\n", encoding="utf-8")
    plots.metrics_by_cutoff(report, d / "metrics.png", baseline)
    plots.rank_histogram(report, d / "ranks.png")


# ------------------------------------------------------------------ ablate / sweep

def ablate(cfg: RunConfig, layout: Layout | None = None, variants=None) -> dict[str, EvalReport]:
    """Train and evaluate each variant under ``out/ablation/<variant>``; reuse finished checkpoints."""
    layout = layout or Layout.for_config(cfg)
    variants = list(variants or cfg.variants)
    reports = {}
    for v in variants:
        d = layout.out / "ablation" / v
        model_path = d / "model.ckpt"
        if not _finished(model_path, cfg, v):
            train(cfg, layout, v, model_path)
        reports[v] = evaluate(cfg, layout, model_path, d / "eval")
    cutoffs = cfg.eval.cutoffs
    header = ["variant"] + [f"HR@{k}" for k in cutoffs] + [f"NDCG@{k}" for k in cutoffs]
    _write_rows(layout.out / "ablation.tsv", header,
                ([v] + [f"{reports[v].hr[k]:.6f}" for k in cutoffs] + [f"{reports[v].ndcg[k]:.6f}" for k in cutoffs]
                 for v in variants))
    plots.ablation(reports, layout.out / "ablation.png")
    return reports


def _finished(model_path: Path, cfg: RunConfig, variant: str) -> bool:
    if not model_path.exists():
        return False
    try:
        c = load_checkpoint(model_path).config
    except CheckpointError:
        return False
    want = _model_config(cfg, variant, cfg.train.epochs)
    return all(c.get(k) == want[k] for k in ("variant", "epoch", "train", "interest", "context",
                                             "seed", "walk", "embedding"))


def sweep_config(cfg: RunConfig, axis: str, value) -> RunConfig:
    sub = copy.deepcopy(cfg)
    if axis == "embedding_dim":
        sub.embedding = replace(sub.embedding, dim=int(value))
    elif axis == "walk_length":
        sub.walk = replace(sub.walk, walk_length=int(value))
    elif axis == "interest_K":
        sub.interest = InterestConfig(int(value), sub.interest.hidden_dims)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    sub.out = Path(cfg.out) / f"sweep_{axis}" / str(value)
    return sub


def sweep(cfg: RunConfig, axis: str, values, layout: Layout | None = None) -> dict:
    """One full run per value; prepared data is shared, embeddings only when the axis leaves them alone."""
    layout = layout or Layout.for_config(cfg)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if axis == "interest_K" and not layout.embeddings.exists():
        embed(cfg, layout)
    reports = {}
    for value in values:
        sub = sweep_config(cfg, axis, value)
        sub_layout = Layout(Path(sub.out), layout.prepared,
                            layout.embeddings if axis == "interest_K" else Path(sub.out) / "embeddings.ckpt")
        if axis != "interest_K" and not _embeddings_match(sub_layout.embeddings, sub):
            embed(sub, sub_layout)
        model_path = Path(sub.out) / "model.ckpt"
        if not _finished(model_path, sub, "full"):
            train(sub, sub_layout, "full", model_path)
        reports[value] = evaluate(sub, sub_layout, model_path)
    cutoffs = cfg.eval.cutoffs
    header = [axis] + [f"HR@{k}" for k in cutoffs] + [f"NDCG@{k}" for k in cutoffs]
    _write_rows(layout.out / f"sweep_{axis}.tsv", header,
                ([v] + [f"{reports[v].hr[k]:.6f}" for k in cutoffs] + [f"{reports[v].ndcg[k]:.6f}" for k in cutoffs]
                 for v in reports))
    plots.sweep(axis, reports, layout.out / f"sweep_{axis}.png")
    return reports


def _embeddings_match(path: Path, cfg: RunConfig) -> bool:
    if not path.exists():
        return False
    try:
        c = load_checkpoint(path).config
    except CheckpointError:
        return False
    snap = cfg.snapshot()
    return all(c.get(k) == snap[k] for k in ("walk", "embedding", "seed"))
