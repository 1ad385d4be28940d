"""Recall@k retrieval metrics, modality probes and the variant ablation runner."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .encoders import IMAGE, TEXT, PackedBatch, GeneratorParams
from .similarity import MetricParams, score_padded

KS = (1, 5, 10)
RECALL_FIELDS = ("r1_i2t", "r5_i2t", "r10_i2t", "r1_t2i", "r5_t2i", "r10_t2i")


@dataclass
class RetrievalReport:
    r1_i2t: float
    r5_i2t: float
    r10_i2t: float
    r1_t2i: float
    r5_t2i: float
    r10_t2i: float
    split: str = ""
    variant: str = ""
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        for d in ("i2t", "t2i"):
            r = [getattr(self, f"r{k}_{d}") for k in KS]
            if not all(0.0 <= x <= 100.0 for x in r):
                raise ValueError(f"recall out of range: {r}")
            if not r[0] <= r[1] <= r[2]:
                raise ValueError(f"recall not monotone in k: {r}")

    @property
    def rsum(self) -> float:
        return rsum(self)

    def as_row(self) -> dict:
        row = asdict(self)
        row["rsum"] = self.rsum
        return row


def rsum(report) -> float:
    return float(sum(getattr(report, f) for f in RECALL_FIELDS))


def _ranks_i2t(scores, owner):
    """Best rank (0-based) of any ground-truth caption for each image row."""
    n_img = scores.shape[0]
    best = np.full(n_img, np.iinfo(np.int64).max)
    cols = np.arange(scores.shape[1])
    for c, i in enumerate(owner):
        row = scores[i]
        rank = np.count_nonzero(row > row[c]) + np.count_nonzero((row == row[c]) & (cols < c))
        best[i] = min(best[i], rank)
    return best


def _ranks_t2i(scores, owner):
    """Rank (0-based) of the paired image for each caption column."""
    n_img = scores.shape[0]
    rows = np.arange(n_img)[:, None]
    gt = scores[owner, np.arange(scores.shape[1])]
    higher = np.count_nonzero(scores > gt[None], axis=0)
    tied_before = np.count_nonzero((scores == gt[None]) & (rows < owner[None]), axis=0)
    return higher + tied_before


def query_ranks(scores, owner, direction: str):
    scores = np.asarray(scores, dtype=np.float64)
    owner = np.asarray(owner, dtype=np.int64)
    if scores.ndim != 2 or scores.size == 0:
        raise ValueError("scores must be a nonempty images x captions matrix")
    if owner.shape != (scores.shape[1],):
        raise ValueError("owner must give the image row of every caption column")
    if direction == "i2t":
        if np.setdiff1d(np.arange(scores.shape[0]), owner).size:
            raise ValueError("every image query needs at least one caption")
        return _ranks_i2t(scores, owner)
    if direction == "t2i":
        return _ranks_t2i(scores, owner)
    raise ValueError(f"direction must be 'i2t' or 't2i', got {direction!r}")


def recall_at_k(scores, ground_truth, k: int, direction: str = "i2t") -> float:
    """Percentage of queries whose ground truth lands in the top ``k``.

    ``scores`` is always images x captions; ``ground_truth[c]`` is the image
    row paired with caption column ``c``. For ``i2t`` an image hits when any
    of its captions ranks in the top ``k``. Ties go to the lower gallery index.
    """
    scores = np.asarray(scores)
    gallery = scores.shape[1] if direction == "i2t" else scores.shape[0]
    if k < 1 or k > gallery:
        raise ValueError(f"k={k} outside [1, gallery size {gallery}]")
    ranks = query_ranks(scores, ground_truth, direction)
    return 100.0 * np.count_nonzero(ranks < k) / ranks.size


def report_from_scores(scores, owner, **meta) -> RetrievalReport:
    scores = np.asarray(scores)
    values = {}
    for direction in ("i2t", "t2i"):
        ranks = query_ranks(scores, owner, direction)
        gallery = scores.shape[1] if direction == "i2t" else scores.shape[0]
        for k in KS:
            kk = min(k, gallery)
            values[f"r{k}_{direction}"] = 100.0 * np.count_nonzero(ranks < kk) / ranks.size
    return RetrievalReport(**values, **meta)


def score_dataset(gen: GeneratorParams, metric: MetricParams, dataset, image_ids):
    """Images x captions similarity over ``image_ids`` and all their captions."""
    caption_ids = [c for i in image_ids for c in dataset.pairs[i]]
    row_of = {img: r for r, img in enumerate(image_ids)}
    owner = np.array([row_of[dataset.image_of(c)] for c in caption_ids])
    imgs = PackedBatch(gen, [dataset.image(i).features for i in image_ids], IMAGE)
    caps = PackedBatch(gen, [dataset.sentence(c).features for c in caption_ids], TEXT)
    scores = score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, metric.tau)
    return scores, owner


def evaluate(gen, metric, dataset, split: str = "test", folds=None, **meta) -> RetrievalReport:
    """Retrieval report on a split, or the mean over ``folds`` (lists of image ids)."""
    if folds is None:
        ids = dataset.image_ids(split)
        if not ids:
            raise ValueError(f"split {split!r} is empty")
        return report_from_scores(*score_dataset(gen, metric, dataset, ids), split=split, **meta)
    reports = [report_from_scores(*score_dataset(gen, metric, dataset, f)) for f in folds]
    mean = {f: float(np.mean([getattr(r, f) for r in reports])) for f in RECALL_FIELDS}
    return RetrievalReport(**mean, split=f"{split}/{len(folds)}fold", **meta)


@dataclass
class ProbeConfig:
    steps: int = 200
    lr: float = 0.5
    split: str = "test"


def _probe_accuracy(X0, X1, steps, lr):
    """Class-balanced logistic probe trained on even rows, scored on odd rows."""
    tr0, te0 = X0[0::2], X0[1::2]
    tr1, te1 = X1[0::2], X1[1::2]
    if min(len(tr0), len(te0), len(tr1), len(te1)) == 0:
        raise ValueError("probe needs at least two samples per modality")
    X = np.vstack([tr0, tr1])
    y = np.concatenate([np.zeros(len(tr0)), np.ones(len(tr1))])
    w = np.where(y == 1, 0.5 / len(tr1), 0.5 / len(tr0))
    W, b = np.zeros(X.shape[1]), 0.0
    for _ in range(steps):
        r = w * (1.0 / (1.0 + np.exp(-(X @ W + b))) - y)
        W -= lr * (X.T @ r)
        b -= lr * r.sum()
    acc0 = np.mean(te0 @ W + b <= 0)
    acc1 = np.mean(te1 @ W + b > 0)
    return 0.5 * (acc0 + acc1)


def probe_accuracy(regions, words, config: ProbeConfig | None = None) -> float:
    config = config or ProbeConfig()
    return float(_probe_accuracy(np.asarray(regions), np.asarray(words), config.steps, config.lr))


def domain_confusion(gen: GeneratorParams, dataset, config: ProbeConfig | None = None) -> float:
    """Mean held-out balanced accuracy of per-pair modality probes (50 = fully confused)."""
    config = config or ProbeConfig()
    ids = dataset.image_ids(config.split) or dataset.image_ids()
    if not ids:
        raise ValueError("no images to probe")
    imgs = PackedBatch(gen, [dataset.image(i).features for i in ids], IMAGE)
    accs = []
    for row, img in enumerate(ids):
        caps = [dataset.sentence(c).features for c in dataset.pairs[img]]
        words = PackedBatch(gen, caps, TEXT).Y
        accs.append(_probe_accuracy(imgs.rows_of(row), words, config.steps, config.lr))
    return 100.0 * float(np.mean(accs))


ABLATION_COLUMNS = (
    "variant", "seed", "r1_i2t", "r1_t2i", "rsum", "dataset_hash", "config_hash",
)


def run_ablation(base_config, dataset, variants=("base", "united", "multiple", "addr"),
                 seeds=(0,), n_folds=None, split="test", progress=None):
    """Train every variant at every seed with identical data and budgets.

    Returns ``(rows, medians)``; each row is a dict over :data:`ABLATION_COLUMNS`.
    """
    from dataclasses import replace

    from .data import folds as make_folds
    from .trainer import train

    dhash = dataset.fingerprint()
    test_folds = make_folds(dataset, split, n_folds, seed=0) if n_folds else None
    rows = []
    for seed in seeds:
        for variant in variants:
            cfg = replace(base_config, variant=variant, seed=int(seed))
            result = train(cfg, dataset)
            rep = evaluate(result.gen, result.metric, dataset, split, folds=test_folds,
                           variant=variant, seed=int(seed), config_hash=cfg.hash())
            rows.append({"variant": variant, "seed": int(seed), "r1_i2t": rep.r1_i2t,
                         "r1_t2i": rep.r1_t2i, "rsum": rep.rsum,
                         "dataset_hash": dhash, "config_hash": cfg.hash()})
            if progress:
                progress(rows[-1])
    return rows, ablation_medians(rows)


def ablation_medians(rows) -> dict:
    out = {}
    for variant in dict.fromkeys(r["variant"] for r in rows):
        sel = [r for r in rows if r["variant"] == variant]
        out[variant] = {c: float(np.median([r[c] for r in sel])) for c in ("r1_i2t", "r1_t2i", "rsum")}
    return out


def write_ablation_csv(path, rows, medians) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ABLATION_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in ABLATION_COLUMNS])
        for variant, m in medians.items():
            wr.writerow([variant, "median", _fmt(m["r1_i2t"]), _fmt(m["r1_t2i"]), _fmt(m["rsum"]), "", ""])


REPORT_COLUMNS = tuple(f.name for f in fields(RetrievalReport)) + ("rsum",)


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(REPORT_COLUMNS)
        for rep in reports:
            row = rep.as_row()
            wr.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def write_report_jsonl(path, reports) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.as_row(), sort_keys=True) + "\n")


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
