"""Command-line surface for the end-to-end workflow.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 64 bad usage.
Every source of randomness is governed by --seed (or the seed in the
config file), so identical invocations produce identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys

from .baselines import (
    cluster_responses,
    discrete_semantic_entropy,
    exact_match_oracle,
    ExternalProcessOracle,
    fit_threshold,
    normalized_match_oracle,
    ClusterPartition,
    save_probe,
    train_linear_probe,
)
from .data import (
    SynthConfig,
    generate_synthetic,
    parse_records,
    write_labeled_records,
    LabeledRecord,
    _parse_jsonl,
    _require,
)
from .entropy import build_entropy_sequence
from .errors import (
    OracleError,
    TrainingDivergedError,
    UsageError,
    ValidationError,
)
from .metrics import (
    attention_profile,
    evaluate,
    metrics_csv_row,
    model_predictor,
    write_attention_csv,
    write_metrics_csv,
)
from .model import EntropyClassifier, ModelConfig, load_model, save_model
from .nn import RngStream
from .trainer import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entrodetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract-entropy", help="logit dump -> labeled entropy records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=_cmd_extract_entropy)

    p = sub.add_parser("gen-synth", help="generate a synthetic labeled dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train the sequence classifier")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on labeled records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--split", default="all", choices=("all", "train", "test", "unspecified"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="per-record probabilities and attention")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("baseline-se", help="discrete semantic entropy per question")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", default="exact", choices=("exact", "normalized"))
    p.add_argument("--oracle-cmd", help="external oracle command (overrides --oracle)")
    p.add_argument("--threshold", type=float, help="binarize: entropy > threshold -> 1")
    p.set_defaults(func=_cmd_baseline_se)

    p = sub.add_parser("fit-threshold", help="fit gamma* on scored, labeled records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_fit_threshold)

    p = sub.add_parser("train-probe", help="train a linear probe on feature records")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train_probe)

    p = sub.add_parser("attention-export", help="per-position mean attention CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attention_export)

    return parser


def _train_config(args) -> TrainConfig:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**overrides)


def _cmd_extract_entropy(args) -> int:
    dumps = parse_records(args.infile, "logit-dump")
    records = []
    for d in dumps:
        seq = build_entropy_sequence(d.token_probs, max_len=args.max_len)
        records.append(
            LabeledRecord(
                id=d.id,
                entropies=seq.values,
                label=d.label,
                dataset=d.dataset,
                group=d.group,
                split=d.split,
            )
        )
    write_labeled_records(args.out, records)
    print(f"extracted {len(records)} entropy records -> {args.out}")
    return 0


def _cmd_gen_synth(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        config = SynthConfig.from_file(args.config, **overrides)
    else:
        config = SynthConfig(**overrides)
    records = generate_synthetic(config)
    write_labeled_records(args.out, records)
    n_test = sum(1 for r in records if r.split == "test")
    print(f"generated {len(records)} records ({n_test} tagged test) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    records = parse_records(args.infile, "labeled")
    config = _train_config(args)
    train_records = [r for r in records if r.split != "test"]
    if not train_records:
        raise ValidationError("every record is tagged split=test; nothing to train on")
    model = EntropyClassifier(ModelConfig(), RngStream(config.seed))
    model, report = train(model, train_records, config)
    save_model(model, args.model)
    if args.report:
        report.write_csv(args.report)
    print(
        f"best_epoch={report.best_epoch} best_val_macro_f1={report.best_val_f1!r} "
        f"epochs_run={len(report.epochs)} stopped_early={report.stopped_early}"
    )
    return 0


def _check_lengths(model, records) -> None:
    longest = max(len(r.entropies) for r in records)
    limit = model.config.max_seq_len
    if longest > limit:
        raise ValidationError(
            f"file holds sequences up to {longest} values but the model reads at "
            f"most {limit}; re-extract with --max-len {limit}"
        )


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    records = parse_records(args.infile, "labeled")
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
        if not records:
            raise ValidationError(f"no records with split={args.split!r}")
    _check_lengths(model, records)
    predictor = model_predictor(model)
    rows = []
    for ds in sorted({r.dataset for r in records}):
        subset = [r for r in records if r.dataset == ds]
        rows.append(metrics_csv_row("entropy-classifier", ds or "(untagged)", evaluate(predictor, subset)))
    overall = evaluate(predictor, records)
    rows.append(metrics_csv_row("entropy-classifier", "all", overall))
    if args.out:
        write_metrics_csv(args.out, rows)
    print(f"macro_f1={overall.macro_f1!r} n={len(records)}")
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    records = parse_records(args.infile, "labeled")
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(0, len(records), 64):
            chunk = records[i : i + 64]
            preds = model.predict_batch([r.entropies for r in chunk])
            for r, p in zip(chunk, preds):
                fh.write(
                    json.dumps(
                        {
                            "id": r.id,
                            "probs": [float(v) for v in p.probs],
                            "predicted_class": p.predicted_class,
                            "attention": [float(v) for v in p.attention],
                        }
                    )
                    + "\n"
                )
    print(f"wrote {len(records)} predictions -> {args.out}")
    return 0


def _cmd_baseline_se(args) -> int:
    rsets = parse_records(args.infile, "responses")
    if args.oracle_cmd:
        oracle = ExternalProcessOracle(args.oracle_cmd.split())
    else:
        oracle = exact_match_oracle if args.oracle == "exact" else normalized_match_oracle
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            for rs in rsets:
                if rs.cluster_labels is not None:
                    partition = ClusterPartition.from_labels(rs.cluster_labels)
                else:
                    partition = cluster_responses(rs, oracle)
                h = discrete_semantic_entropy(partition, len(rs.responses))
                obj = {
                    "id": rs.question_id,
                    "n_responses": len(rs.responses),
                    "n_clusters": len(partition.clusters),
                    "semantic_entropy": h,
                }
                if args.threshold is not None:
                    obj["predicted"] = 1 if h > args.threshold else 0
                fh.write(json.dumps(obj) + "\n")
    finally:
        if isinstance(oracle, ExternalProcessOracle):
            oracle.close()
    print(f"scored {len(rsets)} questions -> {args.out}")
    return 0


def _cmd_fit_threshold(args) -> int:
    scores, labels = [], []
    for lineno, obj in _parse_jsonl(args.infile):
        _require(obj, lineno, {"id", "score", "label"}, {"id", "score", "label"})
        scores.append(float(obj["score"]))
        labels.append(int(obj["label"]))
    fit = fit_threshold(scores, labels)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"gamma": fit.gamma, "macro_f1": fit.macro_f1}, fh)
            fh.write("\n")
    print(f"gamma={fit.gamma!r} macro_f1={fit.macro_f1!r}")
    return 0


def _cmd_train_probe(args) -> int:
    records = parse_records(args.infile, "features")
    config = _train_config(args)
    probe, report = train_linear_probe(records, config)
    save_probe(probe, args.model)
    if args.report:
        report.write_csv(args.report)
    print(f"best_epoch={report.best_epoch} best_val_macro_f1={report.best_val_f1!r}")
    return 0


def _cmd_attention_export(args) -> int:
    model = load_model(args.model)
    records = parse_records(args.infile, "labeled")
    _check_lengths(model, records)
    profiles = attention_profile(model, records)
    write_attention_csv(args.out, profiles)
    print(f"wrote {len(profiles)} positions -> {args.out}")
    return 0


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 64
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValidationError, TrainingDivergedError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
