"""Metrics and diagnostics: accuracy, ROC/AUC, 2-D embeddings, eval reports.

Evaluation is frame-level: each test frame is scored independently and each
forgery is its own binary problem against the real class. The ROC sweeps
all distinct score thresholds with ties grouped into one step, and AUC is
the trapezoidal area, which with that tie handling equals Mann-Whitney pair
counting with half credit for ties.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SurfakeError

log = logging.getLogger(__name__)

FORGERY_COLORS = {
    "DF": "tab:blue", "F2F": "tab:orange", "FSH": "tab:green",
    "FS": "tab:red", "NT": "tab:purple",
}


def _to_binary(labels) -> np.ndarray:
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in ("real", "fake"):
            raise ValueError(f"unknown label {lab!r}")
        out[i] = 1 if lab == "fake" else 0
    return out


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of samples where (score >= threshold) matches label 'fake'."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("accuracy of an empty score set is undefined")
    y = _to_binary(labels)
    if scores.shape[0] != y.shape[0]:
        raise ValueError(f"{scores.shape[0]} scores vs {y.shape[0]} labels")
    predicted = (scores >= threshold).astype(np.int64)
    return float((predicted == y).mean())


def confusion(scores, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with 'fake' as the positive class."""
    scores = np.asarray(scores, dtype=np.float64)
    y = _to_binary(labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def roc_and_auc(scores, labels):
    """ROC points over all distinct thresholds plus trapezoidal AUC.

    Equal scores collapse into a single threshold step, so tied
    real/fake scores contribute diagonal segments (half credit). Points run
    monotonically from (0, 0) to (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = _to_binary(labels)
    n_fake = int(y.sum())
    n_real = int(y.size - n_fake)
    if n_fake == 0 or n_real == 0:
        raise ValueError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    y_sorted = y[order]
    s_sorted = scores[order]
    # group boundaries: last index of each run of equal scores
    boundary = np.nonzero(np.diff(s_sorted))[0]
    group_ends = np.concatenate([boundary, [y_sorted.size - 1]])
    tp_cum = np.cumsum(y_sorted)[group_ends]
    fp_cum = np.cumsum(1 - y_sorted)[group_ends]
    tpr = np.concatenate([[0.0], tp_cum / n_fake])
    fpr = np.concatenate([[0.0], fp_cum / n_real])

    auc = float(np.trapezoid(tpr, fpr))
    points = [(float(f), float(t)) for f, t in zip(fpr, tpr)]
    return points, auc


def embed_2d(activations, seed: int, perplexity: float = 30.0) -> np.ndarray:
    """Deterministic 2-D stochastic-neighbor embedding of feature vectors."""
    arr = np.asarray(activations, dtype=np.float64)
    if arr.dtype == object or arr.ndim != 2:
        raise ValueError("activations must be a rectangular 2-D array of equal-length vectors")
    n = arr.shape[0]
    if n < 2:
        raise ValueError("need at least 2 vectors to embed")
    from sklearn.manifold import TSNE

    perp = min(float(perplexity), (n - 1) / 3.0)
    method = "exact" if n <= 2000 else "barnes_hut"
    tsne = TSNE(n_components=2, random_state=seed, init="pca",
                perplexity=perp, method=method)
    return tsne.fit_transform(arr).astype(np.float64)


@dataclass
class EvalReport:
    per_forgery: dict[str, dict]
    averages: dict[str, float]
    config_fingerprint: str
    plots: list[str] = field(default_factory=list)
    video_level: dict[str, dict] | None = None

    def __post_init__(self):
        for forgery, entry in self.per_forgery.items():
            tp, fp, tn, fn = entry["confusion"]
            total = tp + fp + tn + fn
            want = (tp + tn) / total if total else float("nan")
            if total and abs(entry["accuracy"] - want) > 1e-9:
                raise ValueError(f"{forgery}: accuracy inconsistent with confusion counts")
            roc = entry["roc"]
            if tuple(roc[0]) != (0.0, 0.0) or tuple(roc[-1]) != (1.0, 1.0):
                raise ValueError(f"{forgery}: ROC must run from (0,0) to (1,1)")

    def to_dict(self) -> dict:
        payload = {
            "per_forgery": {
                forgery: {
                    "accuracy": entry["accuracy"],
                    "auc": entry["auc"],
                    "roc": [list(p) for p in entry["roc"]],
                    "confusion": {
                        k: v for k, v in zip(("tp", "fp", "tn", "fn"), entry["confusion"])
                    },
                    "n_frames": entry["n_frames"],
                }
                for forgery, entry in self.per_forgery.items()
            },
            "averages": self.averages,
            "config_fingerprint": self.config_fingerprint,
            "plots": self.plots,
        }
        if self.video_level is not None:
            payload["video_level"] = self.video_level
        return payload

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")


def _fingerprint(checkpoint, which: str) -> str:
    blob = json.dumps({"config": checkpoint.config.to_dict(), "which": which}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate(checkpoint, split, data, out_dir=None, threshold: float = 0.5,
             which: str = "best", video_level: bool = False) -> EvalReport:
    """Frame-level metrics per forgery on the test split, plus ROC plots.

    For each forgery present in the test data, the binary problem is that
    forgery's fake frames against all real test frames; confusion counts
    therefore sum to the frame count of that per-forgery problem.
    """
    from .training import predict

    test_samples = data.samples("test")
    if not test_samples:
        raise ValueError("test split is empty")
    preds = predict(checkpoint, test_samples, which=which)
    scores = np.array([p[0] for p in preds])
    labels = [s.label for s in test_samples]
    forgeries = [s.provenance[2] for s in test_samples]

    real_idx = [i for i, lab in enumerate(labels) if lab == "real"]
    fake_by_forgery: dict[str, list[int]] = {}
    for i, (lab, forgery) in enumerate(zip(labels, forgeries)):
        if lab == "fake":
            fake_by_forgery.setdefault(forgery, []).append(i)
    if not fake_by_forgery or not real_idx:
        raise SurfakeError("test split must contain both real frames and fake frames")

    per_forgery = {}
    for forgery, fake_idx in sorted(fake_by_forgery.items()):
        idx = real_idx + fake_idx
        sub_scores = scores[idx]
        sub_labels = [labels[i] for i in idx]
        roc, auc = roc_and_auc(sub_scores, sub_labels)
        per_forgery[forgery] = {
            "accuracy": accuracy(sub_scores, sub_labels, threshold),
            "auc": auc,
            "roc": roc,
            "confusion": confusion(sub_scores, sub_labels, threshold),
            "n_frames": len(idx),
        }

    averages = {
        "accuracy": float(np.mean([e["accuracy"] for e in per_forgery.values()])),
        "auc": float(np.mean([e["auc"] for e in per_forgery.values()])),
    }

    report = EvalReport(per_forgery, averages, _fingerprint(checkpoint, which))

    if video_level:
        report.video_level = _video_level_metrics(
            scores, labels, forgeries, [s.provenance[0] for s in test_samples], threshold)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for forgery, entry in per_forgery.items():
            plot_path = out_dir / f"roc_{forgery}.png"
            plot_roc(entry["roc"], entry["auc"], forgery, plot_path)
            report.plots.append(str(plot_path))
        report.save(out_dir / "report.json")
    return report


def _video_level_metrics(scores, labels, forgeries, video_ids, threshold):
    """Majority vote of frame predictions per video (off-by-default option)."""
    by_video: dict[str, dict] = {}
    for score, lab, forgery, vid in zip(scores, labels, forgeries, video_ids):
        entry = by_video.setdefault(vid, {"votes": [], "label": lab, "forgery": forgery})
        entry["votes"].append(score >= threshold)
    out: dict[str, dict] = {}
    grouped: dict[str, list] = {}
    for vid, entry in by_video.items():
        fake_votes = sum(entry["votes"])
        pred_fake = fake_votes * 2 >= len(entry["votes"])
        correct = pred_fake == (entry["label"] == "fake")
        key = entry["forgery"] if entry["label"] == "fake" else "real"
        grouped.setdefault(key, []).append(correct)
    for key, arr in sorted(grouped.items()):
        out[key] = {"accuracy": float(np.mean(arr)), "n_videos": len(arr)}
    return out


# --- plots -------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_roc(roc_points, auc: float, forgery: str, path) -> None:
    plt = _pyplot()
    fpr = [p[0] for p in roc_points]
    tpr = [p[1] for p in roc_points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, label=f"{forgery} (AUC = {auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(f"ROC, forgery {forgery}")
    ax.legend(loc="lower right")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def plot_embedding(points, labels, forgeries, path, cap: int = 500, seed: int = 0,
                   title: str = "") -> None:
    """Scatter of 2-D embedded activations: real black, fakes per-forgery color.

    Subsamples to ``cap`` points for legibility; the embedding itself is
    computed on the full set upstream.
    """
    plt = _pyplot()
    points = np.asarray(points)
    n = points.shape[0]
    idx = np.arange(n)
    if cap and n > cap:
        idx = np.random.default_rng(seed).choice(n, size=cap, replace=False)
    fig, ax = plt.subplots(figsize=(5, 5))
    for i in idx:
        if labels[i] == "real":
            ax.scatter(points[i, 0], points[i, 1], c="black", s=8)
        else:
            ax.scatter(points[i, 0], points[i, 1],
                       c=FORGERY_COLORS.get(forgeries[i], "tab:gray"), s=8)
    ax.set_title(title or "penultimate-activation embedding")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
