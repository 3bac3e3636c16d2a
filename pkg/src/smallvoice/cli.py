"""Command-line workflows.

Subcommands: featurize, train, evaluate, segment-units, embed, assistant.
Every run with identical flags and inputs produces identical outputs.
Exit codes: 2 usage, 3 data, 4 runtime; errors print one line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import assistant as asst
from . import attribution as attr
from . import dsp
from . import experiments as xp
from . import models as mdl
from . import tensorcore as tc

DATA_ERRORS = (
    dsp.UnsupportedFormat, dsp.CorruptHeader, dsp.EmptyAudio, dsp.AudioTooShort,
    dsp.BadMagic, dsp.VersionUnsupported, dsp.TruncatedFile,
    mdl.InvalidConfig, mdl.DimMismatch, mdl.VersionUnsupported, mdl.ChecksumMismatch,
    xp.HeaderMismatch, xp.BadLabel, xp.DuplicateFile, xp.ClassTooSmall,
    xp.MissingFeature, xp.TooFewFolds, xp.SchemaVersionMismatch,
    tc.InputTooShort, FileNotFoundError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallvoice")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="wav -> NLF1 feature file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["mel"], default="mel")

    p = sub.add_parser("train", help="cross-validation training run")
    p.add_argument("--task", choices=["langid", "asr"], required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--models-dir", default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("evaluate", help="grouped accuracies of a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--groups", choices=["default"], default="default")
    p.add_argument("--out", default=None)

    p = sub.add_parser("segment-units", help="attention-based acoustic units")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--units", required=True)

    p = sub.add_parser("embed", help="t-SNE projection of unit embeddings")
    p.add_argument("--units", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)

    p = sub.add_parser("assistant", help="interactive dialog or HTTP service")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--repl", action="store_true")
    mode.add_argument("--serve", action="store_true")
    p.add_argument("--addr", default="127.0.0.1:8765")
    p.add_argument("--contacts", default=None)
    p.add_argument("--asr-model", default=None)
    p.add_argument("--langid-model", default=None)
    p.add_argument("--number-length", type=int, default=asst.DEFAULT_NUMBER_LENGTH)
    p.add_argument("--static-dir", default=None)

    return parser


def cmd_featurize(args) -> int:
    w = dsp.preprocess(dsp.load_wav(args.infile))
    fs = dsp.mel_spectrogram(w)
    dsp.write_features(fs, args.out)
    if not args.quiet:
        print(f"wrote {args.out}: T={fs.num_frames} D={fs.dim}")
    return 0


def _task_config(task: str, input_dim: int, dropout: float) -> mdl.ModelConfig:
    if task == "langid":
        return mdl.langid_config(input_dim, dropout)
    return mdl.asr_config(input_dim, dropout)


def cmd_train(args) -> int:
    num_classes = mdl.LANGID_CLASSES if args.task == "langid" else mdl.ASR_CLASSES
    records = xp.load_manifest(args.manifest, num_classes=num_classes)
    first = xp.feature_path(args.features_dir, records[0].file)
    if not first.exists():
        raise xp.MissingFeature(f"no features for {records[0].file} at {first}")
    input_dim = dsp.read_features(first).dim

    config = _task_config(args.task, input_dim, args.dropout)
    train_config = xp.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        dropout_rate=args.dropout, seed=args.seed,
    )
    report, _ = xp.run_cv(
        records, config, train_config, args.features_dir, task=args.task,
        n_folds=args.folds, models_dir=args.models_dir, jobs=args.jobs,
    )
    xp.write_report(report, args.out)
    if not args.quiet:
        for f in report.folds:
            print(f"fold {f.fold}: best epoch {f.best_epoch}, "
                  f"val accuracy {f.val_accuracy:.2f}")
    print(f"accuracy: {xp.format_aggregate(report.aggregate_mean, report.aggregate_sem)}")
    return 0


def cmd_evaluate(args) -> int:
    model = mdl.load(args.model)
    records = xp.load_manifest(args.manifest, num_classes=model.config.num_classes)
    groups = xp.evaluate(model, records, args.features_dir)
    doc = json.dumps(groups, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(doc + "\n")
    print(doc)
    return 0


def cmd_segment_units(args) -> int:
    model = mdl.load(args.model)
    fs = dsp.read_features(args.features)
    grads = attr.saliency(model, fs)
    signal = attr.attention_signal(grads)
    units = attr.segment_units(signal, fs)
    attr.write_audacity_labels(units, fs, args.labels)
    attr.write_units_csv(units, Path(args.features).stem, args.units)
    if not args.quiet:
        print(f"{len(units)} unit(s) -> {args.labels}, {args.units}")
    return 0


def cmd_embed(args) -> int:
    clip_ids: list[str] = []
    matrices = []
    for path in args.units:
        ids, mat = attr.read_units_csv(path)
        clip_ids.extend(ids)
        if len(ids):
            matrices.append(mat)
    if not matrices:
        raise ValueError("no units found in the given CSV files")
    points = np.vstack(matrices)
    emb = attr.tsne(points, perplexity=args.perplexity,
                    iterations=args.iterations, seed=args.seed)
    with open(args.out, "w") as f:
        f.write("clip_id,x,y\n")
        for cid, (x, y) in zip(clip_ids, emb.points):
            f.write(f"{cid},{x!r},{y!r}\n")
    if not args.quiet:
        print(f"embedded {len(clip_ids)} units, final KL {emb.kl:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Assistant REPL


def parse_mnemonic(token: str, session: asst.DialogSession):
    """Map tokens like susu:add, digit:6, name:fatoumata to classes.

    An optional @0.6 suffix carries a synthetic classifier confidence.
    """
    confidence = None
    if "@" in token:
        token, conf_text = token.rsplit("@", 1)
        confidence = float(conf_text)
    kind, _, value = token.partition(":")
    if kind == "digit":
        if session.language is None:
            raise ValueError("no session language; say a wake word first")
        cls = asst.find_class(f"digit_{int(value)}", session.language)
    elif kind == "name":
        cls = asst.name_class(value)
    elif kind in asst.LANGUAGES:
        category = "wake_word" if value in ("wake", "wake_word") else value
        cls = asst.find_class(category, kind)
    else:
        raise ValueError(f"cannot parse utterance token {token!r}")
    return cls, confidence


def cmd_assistant(args) -> int:
    if args.serve:
        import uvicorn

        from .service import ServiceSettings, create_app

        host, _, port = args.addr.rpartition(":")
        app = create_app(ServiceSettings(
            contacts_path=args.contacts,
            asr_model_path=args.asr_model,
            langid_model_path=args.langid_model,
            number_length=args.number_length,
            static_dir=args.static_dir,
        ))
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port),
                    log_level="warning")
        return 0

    store = asst.ContactStore(args.contacts, number_length=args.number_length)
    session = asst.DialogSession(number_length=args.number_length)
    print(f"[state {int(session.state)}] {session.last_prompt}")
    for line in sys.stdin:
        token = line.strip()
        if not token or token.startswith("#"):
            continue
        if token in ("quit", "exit"):
            break
        try:
            cls, confidence = parse_mnemonic(token, session)
            result = asst.transition(session, cls, store, confidence=confidence)
        except (ValueError, KeyError) as exc:
            print(f"! {exc}")
            continue
        print(f"[state {int(result.state)}] {result.prompt}")
        if result.side_effect is not None:
            effect = result.side_effect
            phone = effect.phone or ""
            print(f"side-effect: {effect.type} {effect.name} {phone}".rstrip())
    return 0


COMMANDS = {
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "segment-units": cmd_segment_units,
    "embed": cmd_embed,
    "assistant": cmd_assistant,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
