"""Gradient attribution and qualitative analysis of classifier decisions.

Builds the per-frame attention signal from input gradients, segments
salient acoustic units (threshold: mean + 2 std), averages features over
unit spans into embeddings, and projects collections of vectors to 2-D
with an exact t-SNE. Also the Audacity label and unit CSV exports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import tensorcore as tc
from .dsp import FeatureSequence
from .models import Model, forward_from, _check_input, extract_multiscale


class NonFinite(ValueError):
    """Gradient field contains NaN or Inf."""


class TooFewPoints(ValueError):
    """t-SNE needs at least 4 points."""


class PerplexityTooHigh(ValueError):
    """Perplexity must be smaller than the number of points."""


class ConfigMismatch(ValueError):
    """Ensemble models do not share a configuration."""


@dataclass
class AttentionSignal:
    """Non-negative per-frame weights; attention_signal() output sums to 1."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("attention signal is a 1-D vector")
        if not np.isfinite(self.weights).all():
            raise NonFinite("attention weights must be finite")
        if (self.weights < 0).any():
            raise ValueError("attention weights must be non-negative")

    def __len__(self):
        return len(self.weights)


@dataclass
class AcousticUnit:
    """A maximal run of salient frames with duration and mean-feature embedding."""

    start_frame: int
    end_frame: int
    frame_count: int
    duration_ms: float
    embedding: np.ndarray


@dataclass
class Embedding2D:
    """2-D projection of N points plus the final objective value."""

    points: np.ndarray
    kl: float


def saliency(m: Model, fs: FeatureSequence) -> np.ndarray:
    """|d logit_yhat / d input| per frame and feature, dropout disabled.

    The target is the pre-softmax logit of the predicted class.
    """
    mask = _check_input(m, fs, None)
    x = tc.Node(fs.frames.astype(np.float64).T)
    logits = forward_from(m, x, mask, training=False)
    yhat = int(np.argmax(logits.values))
    tc.backward(tc.pick(logits, yhat))
    return np.abs(x.grad).T  # [T, D]


def attention_signal(grads: np.ndarray) -> AttentionSignal:
    """Collapse a T x D gradient-magnitude field to per-frame attention.

    Three steps: softmax over time independently per feature dimension,
    sum across feature dimensions, then renormalize so the result sums
    to one over the sequence.
    """
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise ValueError("expected a T x D matrix")
    if not np.isfinite(g).all():
        raise NonFinite("gradient field must be finite")

    z = g - g.max(axis=0, keepdims=True)
    e = np.exp(z)
    per_dim = e / e.sum(axis=0, keepdims=True)  # softmax over time, per dim
    summed = per_dim.sum(axis=1)
    return AttentionSignal(summed / summed.sum())


def segment_units(a: Union[AttentionSignal, np.ndarray],
                  fs: FeatureSequence) -> list[AcousticUnit]:
    """Maximal runs where attention strictly exceeds mean + 2 std.

    Uses the population (denominator T) standard deviation, so a uniform
    signal yields no units. Duration is (c - 1) * p + f where c is the
    frame count, p the frame period, and f the receptive field.
    """
    w = a.weights if isinstance(a, AttentionSignal) else np.asarray(a, dtype=np.float64)
    if len(w) < 2:
        raise ValueError("need at least 2 frames to segment")
    if len(w) != fs.num_frames:
        raise ValueError("attention length must match frame count")

    theta = w.mean() + 2.0 * w.std()
    above = w > theta
    units: list[AcousticUnit] = []
    t = 0
    while t < len(w):
        if not above[t]:
            t += 1
            continue
        start = t
        while t + 1 < len(w) and above[t + 1]:
            t += 1
        end = t
        c = end - start + 1
        units.append(
            AcousticUnit(
                start_frame=start,
                end_frame=end,
                frame_count=c,
                duration_ms=(c - 1) * fs.frame_period_ms + fs.receptive_field_ms,
                embedding=fs.frames[start : end + 1].astype(np.float64).mean(axis=0),
            )
        )
        t += 1
    return units


def ensemble_features(models: Sequence[Model], fs: FeatureSequence) -> np.ndarray:
    """Concatenate each fold model's multiscale features in fold order."""
    if not models:
        raise ConfigMismatch("need at least one model")
    cfg = models[0].config
    for m in models[1:]:
        if m.config != cfg:
            raise ConfigMismatch("ensemble models must share a config")
    return np.concatenate([extract_multiscale(m, fs) for m in models])


def kl_per_example(pred_probs: np.ndarray, true_class: int) -> float:
    """KL(onehot(true) || pred) = -log pred[true]; +inf on zero support."""
    p = np.asarray(pred_probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("pred_probs must be a probability vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    if not 0 <= true_class < len(p):
        raise tc.BadTarget(f"class {true_class} outside [0, {len(p)})")
    if p[true_class] <= 0.0:
        return math.inf
    return float(-np.log(p[true_class]))


# ---------------------------------------------------------------------------
# Exact t-SNE


def _conditional_probs(d2_row: np.ndarray, beta: float) -> np.ndarray:
    p = np.exp(-d2_row * beta)
    s = p.sum()
    return p / s if s > 0 else np.full_like(p, 1.0 / len(p))


def _row_perplexity(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def joint_probabilities(points: np.ndarray, perplexity: float,
                        tol: float = 1e-4, max_iter: int = 200) -> np.ndarray:
    """Symmetrized high-dimensional affinities with per-point bandwidths.

    Each point's Gaussian precision is binary-searched so that the
    conditional distribution's perplexity matches the target within tol.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    sq = (x**2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)

    cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            p = _conditional_probs(row, beta)
            perp = _row_perplexity(p)
            if abs(perp - perplexity) < tol:
                break
            if perp > perplexity:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        cond[i] = np.insert(p, i, 0.0)

    joint = (cond + cond.T) / (2.0 * n)
    return np.maximum(joint, 1e-12)


def _student_t_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sq = (y**2).sum(axis=1)
    num = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2.0 * y @ y.T, 0.0))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    return q, num


def tsne(points: np.ndarray, perplexity: float = 30.0, iterations: int = 1000,
         seed: int = 0) -> Embedding2D:
    """Exact (non-approximate) t-SNE to 2-D.

    Early exaggeration x4 for the first 100 iterations, learning rate 200,
    momentum 0.5 switching to 0.8 at iteration 250. Deterministic given
    the seed; reports the final KL divergence of the objective.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 4:
        raise TooFewPoints("t-SNE needs an N x M matrix with N >= 4")
    n = x.shape[0]
    if perplexity >= n:
        raise PerplexityTooHigh(f"perplexity {perplexity} must be < N={n}")

    p = joint_probabilities(x, perplexity)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)

    for it in range(iterations):
        target = p * 4.0 if it < 100 else p
        q, num = _student_t_affinities(y)
        l = (target - q) * num
        grad = 4.0 * ((np.diag(l.sum(axis=1)) - l) @ y)
        momentum = 0.5 if it < 250 else 0.8
        velocity = momentum * velocity - 200.0 * grad
        y = y + velocity

    q, _ = _student_t_affinities(y)
    kl = float((p * np.log(p / q)).sum())
    return Embedding2D(points=y, kl=kl)


# ---------------------------------------------------------------------------
# Unit exports


def write_audacity_labels(units: Sequence[AcousticUnit], fs: FeatureSequence,
                          path: Union[str, Path],
                          labels: Optional[Sequence[str]] = None) -> None:
    """One `start<TAB>end<TAB>label` line per unit, times in seconds."""
    with open(path, "w") as f:
        for i, u in enumerate(units):
            start = u.start_frame * fs.frame_period_ms / 1000.0
            end = start + u.duration_ms / 1000.0
            label = labels[i] if labels is not None else f"unit{i}"
            f.write(f"{start:.6f}\t{end:.6f}\t{label}\n")


def write_units_csv(units: Sequence[AcousticUnit], clip_id: str,
                    path: Union[str, Path], append: bool = False) -> None:
    """Unit spans and embeddings, one row per unit."""
    if not units:
        dim = 0
    else:
        dim = len(units[0].embedding)
    mode = "a" if append else "w"
    write_header = not (append and Path(path).exists() and Path(path).stat().st_size > 0)
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if write_header:
            writer.writerow(
                ["clip_id", "start_frame", "end_frame", "duration_ms"]
                + [f"dim_{i}" for i in range(dim)]
            )
        for u in units:
            writer.writerow(
                [clip_id, u.start_frame, u.end_frame, repr(float(u.duration_ms))]
                + [repr(float(v)) for v in u.embedding]
            )


def read_units_csv(path: Union[str, Path]) -> tuple[list[str], np.ndarray]:
    """Return (clip ids, embedding matrix) from one or more concatenated rows."""
    clip_ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:4] != ["clip_id", "start_frame", "end_frame", "duration_ms"]:
            raise ValueError(f"unexpected unit CSV header in {path}")
        for row in reader:
            clip_ids.append(row[0])
            rows.append([float(v) for v in row[4:]])
    return clip_ids, np.asarray(rows, dtype=np.float64)
