"""Cross-validation machinery: manifests, stratified folds, training, reports.

The protocol is 10 independent stratified 60/40 train/validation resamples
per run. Each fold trains with Adam at 1e-3 on cross-entropy, keeps the
checkpoint with the best validation accuracy, and the run aggregates fold
accuracies as mean +/- standard error of the mean.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import tensorcore as tc
from . import models as mdl
from .attribution import kl_per_example
from .dsp import FeatureSequence, read_features

LANGUAGES = ("francais", "maninka", "pular", "susu", "language_independent")

MANIFEST_HEADER = [
    "file", "recording_session_id", "speaker_id", "device_id", "language",
    "utterance_id", "label", "speaker_age", "speaker_gender",
    "speaker_mothertongue",
]

REPORT_VERSION = 1


class HeaderMismatch(ValueError):
    """Manifest CSV header differs from the required field order."""


class BadLabel(ValueError):
    """Label outside [0, K) or otherwise invalid."""


class DuplicateFile(ValueError):
    """The same audio file appears twice in a manifest."""


class ClassTooSmall(ValueError):
    """A class has fewer than 2 records; stratified splits are impossible."""


class MissingFeature(FileNotFoundError):
    """No feature file for a manifest record."""


class TooFewFolds(ValueError):
    """Aggregation needs at least 2 fold accuracies."""


class SchemaVersionMismatch(ValueError):
    """Report JSON has the wrong version or is missing required keys."""


@dataclass
class ManifestRecord:
    file: str
    recording_session_id: str
    speaker_id: str
    device_id: str
    language: str
    utterance_id: str
    label: int
    speaker_age: int
    speaker_gender: str
    speaker_mothertongue: str


@dataclass
class FoldPlan:
    """Ten independent stratified resamples (not a partition)."""

    seed: int
    folds: list  # list of (train_ids, val_ids) tuples of record indices


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    dropout_rate: float = 0.1
    seed: int = 0
    max_steps: Optional[int] = None
    target_accuracy: Optional[float] = None

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class FoldReport:
    fold: int
    best_epoch: int
    val_accuracy: float
    groups: dict = field(default_factory=dict)


@dataclass
class RunReport:
    task: str
    model_config: mdl.ModelConfig
    train_config: TrainConfig
    folds: list
    aggregate_mean: float
    aggregate_sem: float
    kl_per_example: list

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "task": self.task,
            "model_config": {
                "input_dim": self.model_config.input_dim,
                "channels": list(self.model_config.channels),
                "num_classes": self.model_config.num_classes,
                "dropout_rate": self.model_config.dropout_rate,
            },
            "train_config": {
                "epochs": self.train_config.epochs,
                "batch_size": self.train_config.batch_size,
                "lr": self.train_config.lr,
                "dropout_rate": self.train_config.dropout_rate,
                "seed": self.train_config.seed,
            },
            "folds": [asdict(f) for f in self.folds],
            "aggregate": {"mean": self.aggregate_mean, "sem": self.aggregate_sem},
            "kl": {"per_example": self.kl_per_example},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        mc = doc["model_config"]
        tcfg = doc["train_config"]
        return cls(
            task=doc["task"],
            model_config=mdl.ModelConfig(
                mc["input_dim"], tuple(mc["channels"]), mc["num_classes"],
                mc["dropout_rate"],
            ),
            train_config=TrainConfig(
                epochs=tcfg["epochs"], batch_size=tcfg["batch_size"],
                lr=tcfg["lr"], dropout_rate=tcfg["dropout_rate"],
                seed=tcfg["seed"],
            ),
            folds=[FoldReport(**f) for f in doc["folds"]],
            aggregate_mean=doc["aggregate"]["mean"],
            aggregate_sem=doc["aggregate"]["sem"],
            kl_per_example=doc["kl"]["per_example"],
        )


# ---------------------------------------------------------------------------
# Manifests


def load_manifest(path: Union[str, Path],
                  num_classes: Optional[int] = None) -> list[ManifestRecord]:
    """Parse and validate a manifest CSV with the exact 10-column header."""
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise HeaderMismatch(
                f"expected header {','.join(MANIFEST_HEADER)}, got {header}"
            )
        for row in reader:
            if len(row) != len(MANIFEST_HEADER):
                raise HeaderMismatch(f"row has {len(row)} fields: {row}")
            try:
                label = int(row[6])
            except ValueError:
                raise BadLabel(f"label {row[6]!r} is not an integer") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise BadLabel(f"label {label} outside [0, {num_classes})")
            if row[4] not in LANGUAGES:
                raise BadLabel(f"unknown language {row[4]!r}")
            if row[0] in seen:
                raise DuplicateFile(f"duplicate file {row[0]!r}")
            seen.add(row[0])
            records.append(
                ManifestRecord(
                    file=row[0], recording_session_id=row[1], speaker_id=row[2],
                    device_id=row[3], language=row[4], utterance_id=row[5],
                    label=label, speaker_age=int(row[7]), speaker_gender=row[8],
                    speaker_mothertongue=row[9],
                )
            )
    return records


def write_manifest(records: Sequence[ManifestRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([
                r.file, r.recording_session_id, r.speaker_id, r.device_id,
                r.language, r.utterance_id, r.label, r.speaker_age,
                r.speaker_gender, r.speaker_mothertongue,
            ])


# ---------------------------------------------------------------------------
# Folds


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_folds(records: Sequence[ManifestRecord], n_folds: int = 10,
               train_frac: float = 0.6, seed: int = 0) -> FoldPlan:
    """Independent stratified random resamples; deterministic given the seed."""
    by_class: dict[int, list[int]] = {}
    for idx, r in enumerate(records):
        by_class.setdefault(r.label, []).append(idx)
    for label, idxs in sorted(by_class.items()):
        if len(idxs) < 2:
            raise ClassTooSmall(f"class {label} has only {len(idxs)} record(s)")

    rng = np.random.default_rng(seed)
    folds = []
    for _ in range(n_folds):
        train: list[int] = []
        val: list[int] = []
        for label in sorted(by_class):
            idxs = np.asarray(by_class[label])
            perm = idxs[rng.permutation(len(idxs))]
            n_train = _round_half_up(train_frac * len(idxs))
            train.extend(int(i) for i in perm[:n_train])
            val.extend(int(i) for i in perm[n_train:])
        folds.append((sorted(train), sorted(val)))
    return FoldPlan(seed=seed, folds=folds)


# ---------------------------------------------------------------------------
# Feature loading


def feature_path(features_dir: Union[str, Path], record_file: str) -> Path:
    return Path(features_dir) / Path(record_file).with_suffix(".nlf1")


def load_record_features(records: Sequence[ManifestRecord],
                         features_dir: Union[str, Path]) -> list[FeatureSequence]:
    feats = []
    for r in records:
        path = feature_path(features_dir, r.file)
        if not path.exists():
            raise MissingFeature(f"no features for {r.file} at {path}")
        fs = read_features(path)
        if fs.num_frames < mdl.MIN_FRAMES:
            raise tc.InputTooShort(
                f"{r.file}: {fs.num_frames} frames, need >= {mdl.MIN_FRAMES}"
            )
        feats.append(fs)
    return feats


# ---------------------------------------------------------------------------
# Training


def _pad_batch(feats: Sequence[FeatureSequence]) -> list[tuple[np.ndarray, tc.FrameMask]]:
    max_t = max(f.num_frames for f in feats)
    out = []
    for f in feats:
        t = f.num_frames
        frames = f.frames
        if t < max_t:
            frames = np.pad(frames, ((0, max_t - t), (0, 0)))
        out.append((frames, tc.FrameMask.prefix(t, max_t)))
    return out


def _predict(model: mdl.Model, fs: FeatureSequence) -> int:
    return int(np.argmax(mdl.forward(model, fs).values))


def _accuracy(model: mdl.Model, feats, labels) -> float:
    correct = sum(1 for fs, y in zip(feats, labels) if _predict(model, fs) == y)
    return 100.0 * correct / len(labels)


def train_fold(records: Sequence[ManifestRecord], fold, model_config: mdl.ModelConfig,
               train_config: TrainConfig, features_dir: Union[str, Path],
               fold_seed: Optional[int] = None,
               on_step: Optional[Callable[[int, float], None]] = None,
               ) -> tuple[mdl.Model, FoldReport]:
    """Train one fold; return the best-validation-accuracy checkpoint.

    Variable-length sequences in a mini-batch are padded to the batch max
    and masked. Ties in validation accuracy keep the earliest epoch.
    Fully deterministic given the seeds. `on_step` observes (step, loss).
    """
    train_config.validate()
    train_ids, val_ids = fold
    seed = train_config.seed if fold_seed is None else fold_seed
    cfg = mdl.with_dropout(model_config, train_config.dropout_rate)

    by_idx = {i: r for i, r in enumerate(records)}
    train_feats = load_record_features([by_idx[i] for i in train_ids], features_dir)
    val_feats = load_record_features([by_idx[i] for i in val_ids], features_dir)
    train_labels = [by_idx[i].label for i in train_ids]
    val_labels = [by_idx[i].label for i in val_ids]

    model = mdl.build(cfg, seed=seed)
    state = tc.AdamState(lr=train_config.lr)
    shuffle_rng = np.random.default_rng([seed, 2])

    best_model = mdl.clone(model)
    best_acc = -1.0
    best_epoch = 0
    steps = 0
    stop = False

    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(train_ids))
        for lo in range(0, len(order), train_config.batch_size):
            batch = order[lo : lo + train_config.batch_size]
            padded = _pad_batch([train_feats[i] for i in batch])
            logits = []
            for frames, mask in padded:
                x = tc.Node(frames.astype(np.float64).T)
                logits.append(mdl.forward_from(model, x, mask, training=True))
            loss = tc.softmax_cross_entropy(
                tc.stack(logits), [train_labels[i] for i in batch]
            )
            tc.backward(loss)
            tc.adam_step(model.groups, state)
            steps += 1
            if on_step is not None:
                on_step(steps, float(loss.values))
            if train_config.max_steps is not None and steps >= train_config.max_steps:
                stop = True
                break

        acc = _accuracy(model, val_feats, val_labels)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_model = mdl.clone(model)
        if train_config.target_accuracy is not None and acc >= train_config.target_accuracy:
            stop = True
        if stop:
            break

    return best_model, FoldReport(fold=0, best_epoch=best_epoch, val_accuracy=best_acc)


# ---------------------------------------------------------------------------
# Evaluation


def default_groupings() -> dict[str, Callable[[ManifestRecord], bool]]:
    groups: dict[str, Callable[[ManifestRecord], bool]] = {
        "overall": lambda r: True,
        "names": lambda r: r.utterance_id.startswith("5"),
        "native_language": lambda r: r.language == r.speaker_mothertongue,
    }
    for lang in LANGUAGES[:4]:
        groups[lang] = (lambda l: lambda r: r.language == l)(lang)
    return groups


def evaluate(model: mdl.Model, records: Sequence[ManifestRecord],
             features_dir: Union[str, Path],
             groupings: Optional[dict] = None) -> dict[str, float]:
    """Percent accuracy per named group; empty groups are absent, not zero."""
    groupings = groupings if groupings is not None else default_groupings()
    feats = load_record_features(records, features_dir)
    preds = [_predict(model, fs) for fs in feats]

    out: dict[str, float] = {}
    for name, predicate in groupings.items():
        hits = [p == r.label for p, r in zip(preds, records) if predicate(r)]
        if hits:
            out[name] = 100.0 * sum(hits) / len(hits)
    return out


def aggregate(fold_accuracies: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std over sqrt n) of fold accuracies."""
    accs = np.asarray(fold_accuracies, dtype=np.float64)
    if accs.size < 2:
        raise TooFewFolds("need at least 2 fold accuracies")
    mean = float(accs.mean())
    sem = float(accs.std(ddof=1) / math.sqrt(accs.size))
    return mean, sem


def format_aggregate(mean: float, sem: float) -> str:
    return f"{mean:.2f} ± {sem:.2f}"


# ---------------------------------------------------------------------------
# Full runs


def run_cv(records: Sequence[ManifestRecord], model_config: mdl.ModelConfig,
           train_config: TrainConfig, features_dir: Union[str, Path],
           task: str = "langid", n_folds: int = 10,
           models_dir: Optional[Union[str, Path]] = None,
           jobs: int = 1) -> tuple[RunReport, list[mdl.Model]]:
    """Train all folds, aggregate, and compute per-example mean KL divergence."""
    plan = make_folds(records, n_folds=n_folds, seed=train_config.seed)
    fold_seeds = [int(s) for s in np.random.SeedSequence(train_config.seed).generate_state(n_folds)]

    def run_one(k):
        model, report = train_fold(
            records, plan.folds[k], model_config, train_config, features_dir,
            fold_seed=fold_seeds[k],
        )
        report.fold = k
        val_records = [records[i] for i in plan.folds[k][1]]
        report.groups = evaluate(model, val_records, features_dir)
        return model, report

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, range(n_folds)))
    else:
        results = [run_one(k) for k in range(n_folds)]

    fold_models = [m for m, _ in results]
    fold_reports = [r for _, r in results]
    mean, sem = aggregate([r.val_accuracy for r in fold_reports])

    feats = load_record_features(records, features_dir)
    kls = []
    for fs, record in zip(feats, records):
        vals = []
        for m in fold_models:
            probs = tc.softmax(mdl.forward(m, fs).values)
            vals.append(kl_per_example(probs, record.label))
        kls.append(float(np.mean(vals)))

    if models_dir is not None:
        models_dir = Path(models_dir)
        models_dir.mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(fold_models):
            mdl.save(m, models_dir / f"fold_{k:02d}.nlm1")

    report = RunReport(
        task=task,
        model_config=mdl.with_dropout(model_config, train_config.dropout_rate),
        train_config=train_config,
        folds=fold_reports,
        aggregate_mean=mean,
        aggregate_sem=sem,
        kl_per_example=kls,
    )
    return report, fold_models


# ---------------------------------------------------------------------------
# Report persistence


def write_report(run: RunReport, path: Union[str, Path]) -> None:
    with open(path, "w") as f:
        json.dump(run.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: Union[str, Path]) -> RunReport:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != REPORT_VERSION:
        raise SchemaVersionMismatch(f"report version {doc.get('version')!r}")
    for key in ("task", "model_config", "train_config", "folds", "aggregate", "kl"):
        if key not in doc:
            raise SchemaVersionMismatch(f"report missing key {key!r}")
    return RunReport.from_dict(doc)
