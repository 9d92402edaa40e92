"""Pixel confusion counts, F-score and per-video/category/overall reporting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from . import network
from .datasets import SampleWindow, SplitManifest, VideoSequence, load_cdnet_video, make_window
from .network import NetworkParams

Predictor = Union[NetworkParams, Callable[[SampleWindow], np.ndarray]]


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def accumulate(conf: Confusion, pred_prob, target, ignore_mask, threshold: float = 0.5) -> Confusion:
    """Add the counts of one prediction to ``conf`` (only where ``ignore_mask`` is 1)."""
    evaluated = np.asarray(ignore_mask) > 0.5
    pred = np.asarray(pred_prob) >= threshold
    fg = np.asarray(target) > 0.5
    conf.tp += int(np.count_nonzero(pred & fg & evaluated))
    conf.fp += int(np.count_nonzero(pred & ~fg & evaluated))
    conf.fn += int(np.count_nonzero(~pred & fg & evaluated))
    conf.tn += int(np.count_nonzero(~pred & ~fg & evaluated))
    return conf


def fscore(conf: Confusion) -> float | None:
    """``2tp / (2tp + fp + fn)``, or ``None`` when there is nothing to score."""
    denom = 2 * conf.tp + conf.fp + conf.fn
    if denom == 0:
        return None
    return 2 * conf.tp / denom


def ground_truth_predictor(window: SampleWindow) -> np.ndarray:
    return window.target.copy()


def _as_callable(predictor: Predictor) -> Callable[[SampleWindow], np.ndarray]:
    if isinstance(predictor, NetworkParams):
        return lambda w: network.predict(w.history, w.current, predictor)
    return predictor


def evaluate_video(seq: VideoSequence, predictor: Predictor, threshold: float = 0.5,
                   step: int = 1) -> tuple[Confusion, float | None]:
    predict = _as_callable(predictor)
    conf = Confusion()
    for frame in seq.evaluable_frames()[::step]:
        w = make_window(seq, frame)
        accumulate(conf, predict(w), w.target, w.ignore_mask, threshold)
    return conf, fscore(conf)


@dataclass
class Metrics:
    videos: dict[tuple[str, str], Confusion] = field(default_factory=dict)

    def video_scores(self) -> dict[tuple[str, str], float | None]:
        return {k: fscore(c) for k, c in self.videos.items()}

    def category_confusion(self) -> dict[str, Confusion]:
        out: dict[str, Confusion] = {}
        for (cat, _), c in self.videos.items():
            out[cat] = out.get(cat, Confusion()) + c
        return out

    def category_scores(self) -> dict[str, float | None]:
        """Mean F over the category's test videos with a defined score."""
        scores: dict[str, list[float]] = {}
        for (cat, _), f in self.video_scores().items():
            scores.setdefault(cat, [])
            if f is not None:
                scores[cat].append(f)
        return {c: (sum(v) / len(v) if v else None) for c, v in scores.items()}

    @property
    def overall(self) -> float | None:
        defined = [f for f in self.video_scores().values() if f is not None]
        return sum(defined) / len(defined) if defined else None


def evaluate_split(manifest: SplitManifest, dataset_root, predictor: Predictor,
                   threshold: float = 0.5, step: int = 1) -> Metrics:
    metrics = Metrics()
    for row in manifest.rows("test"):
        seq = load_cdnet_video(dataset_root, row.category, row.video).load()
        conf, _ = evaluate_video(seq, predictor, threshold, step)
        metrics.videos[(row.category, row.video)] = conf
    return metrics


def _fmt(f: float | None) -> str:
    return "undefined" if f is None or math.isnan(f) else f"{f:.4f}"


def write_report(metrics: Metrics, path) -> None:
    """CSV with one row per video, per category, and a final ``overall`` row."""
    total = Confusion()
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "name", "tp", "fp", "fn", "tn", "fscore"])
        for (cat, video), c in metrics.videos.items():
            w.writerow(["video", f"{cat}/{video}", c.tp, c.fp, c.fn, c.tn, _fmt(fscore(c))])
            total = total + c
        cat_scores = metrics.category_scores()
        for cat, c in metrics.category_confusion().items():
            w.writerow(["category", cat, c.tp, c.fp, c.fn, c.tn, _fmt(cat_scores[cat])])
        w.writerow(["overall", "overall", total.tp, total.fp, total.fn, total.tn, _fmt(metrics.overall)])
