"""Operator entry point: ingest, train, evaluate, predict, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every
randomized step takes --seed, so identical command lines reproduce
byte-identical model files and reports.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import timedelta

from . import corpus, textproc
from .classifier import (BACKEND_LINEAR, BACKEND_TRANSFORMER, DEFAULT_LR,
                         TASK_MULTILABEL, EncoderConfig, LinearConfig,
                         TaskConfig, TrainConfig, encode_for_model, init_model,
                         load_model, save_model, train)
from .errors import TriageError
from .evaluation import evaluate_model, render_report
from .tracker import TrackerClient
from .triage import TriagePolicy, decision_to_dict, triage_issue

logger = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1, not argparse's default 2
        raise _UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text} is negative")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return value


def _dropout(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1)")
    return value


def build_parser() -> _Parser:
    parser = _Parser(prog="issuetriage",
                     description="Issue labelling/assignment triage engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="crawl issues into a JSONL dataset")
    p.add_argument("--languages", required=True,
                   help="comma-separated primary languages, e.g. python,rust")
    p.add_argument("--repos-per-language", type=_positive_int, default=200)
    p.add_argument("--max-issues-per-repo", type=_nonneg_int, default=0,
                   help="0 = no cap")
    p.add_argument("--api-base", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a label or assignment model")
    p.add_argument("--task", choices=("labels", "assign"), required=True)
    p.add_argument("--backend", choices=(BACKEND_LINEAR, BACKEND_TRANSFORMER),
                   default=BACKEND_LINEAR)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=_positive_int, default=5)
    p.add_argument("--lr", type=_positive_float, default=None,
                   help=f"default {DEFAULT_LR[BACKEND_TRANSFORMER]} for the "
                        f"transformer, {DEFAULT_LR[BACKEND_LINEAR]} for linear")
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--max-seq-len", type=_positive_int, default=128)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--split", type=_fraction, default=0.8,
                   help="train fraction; 1.0 trains on everything")
    p.add_argument("--test-out", default=None,
                   help="write the held-out split to this JSONL file")
    p.add_argument("--sample", type=_nonneg_int, default=0,
                   help="sample this many records first (0 = all)")
    p.add_argument("--vocab-min-freq", type=_positive_int, default=2)
    p.add_argument("--vocab-max-size", type=_positive_int, default=30_000)
    # transformer shape
    p.add_argument("--layers", type=_positive_int, default=2)
    p.add_argument("--hidden-dim", type=_positive_int, default=64)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--ff-dim", type=_positive_int, default=256)
    p.add_argument("--dropout", type=_dropout, default=0.1)
    # linear features
    p.add_argument("--dim", type=_positive_int, default=32)
    p.add_argument("--buckets", type=_positive_int, default=1 << 16)
    p.add_argument("--ngram-min", type=_positive_int, default=2)
    p.add_argument("--ngram-max", type=_positive_int, default=4)
    # assignment roster
    p.add_argument("--min-assigned", type=_positive_int, default=50)
    p.add_argument("--window-days", type=_positive_int, default=365)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a test JSONL file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--threshold", type=_fraction, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="triage one issue from the command line")
    p.add_argument("--model", required=True, help="label model (.momb)")
    p.add_argument("--assign-model", default=None)
    p.add_argument("--policy", default=None, help="policy JSON file")
    p.add_argument("--threshold", type=_fraction, default=None)
    p.add_argument("--title", required=True)
    p.add_argument("--body", default="")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the webhook service")
    p.add_argument("--label-model", required=True)
    p.add_argument("--assign-model", default=None)
    p.add_argument("--policy", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=_positive_int, default=8080)
    p.add_argument("--dry-run", action="store_true",
                   help="compute decisions but never call the tracker")
    p.set_defaults(func=cmd_serve)
    return parser


def cmd_ingest(args) -> int:
    client = (TrackerClient(base_url=args.api_base) if args.api_base
              else TrackerClient())
    languages = [lang.strip() for lang in args.languages.split(",") if lang.strip()]
    if not languages:
        raise _UsageError("--languages must name at least one language")
    tally = corpus.IngestTally()
    records: list[corpus.IssueRecord] = []
    seen: set[int] = set()
    for language in languages:
        repos = corpus.search_top_repos(language, args.repos_per_language, client)
        print(f"{language}: {len(repos)} repositories")
        for repo in repos:
            issues = corpus.fetch_issues(repo, client, language=language,
                                         tally=tally)
            if args.max_issues_per_repo:
                issues = issues[:args.max_issues_per_repo]
            fresh = [r for r in issues if r.id not in seen]
            seen.update(r.id for r in fresh)
            records.extend(fresh)
            print(f"  {repo}: {len(fresh)} issues")
    corpus.write_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out} "
          f"(skipped {tally.pull_requests} pull requests, "
          f"{tally.malformed} malformed items)")
    return 0


def _texts(records) -> list[str]:
    return [textproc.concat_title_body(r.title, r.body) for r in records]


def _encode_all(records, model):
    return [encode_for_model(model, r.title, r.body) for r in records]


def cmd_train(args) -> int:
    records = corpus.read_dataset(args.data)
    if args.sample:
        records = corpus.sample_dataset(records, args.sample, args.seed)

    if args.task == "labels":
        usable = [r for r in records if r.labels.any()]
        if not usable:
            raise TriageError("no labelled records in the dataset")
        task_config = TaskConfig.multilabel()
        roster = None
    else:
        assigned = [r for r in records if r.assignee is not None]
        if not assigned:
            raise TriageError("no assigned records in the dataset")
        newest = max(corpus.parse_rfc3339(r.created_at) for r in assigned)
        window_end = newest + timedelta(seconds=1)
        window = (window_end - timedelta(days=args.window_days), window_end)
        usable, roster = corpus.filter_candidates(assigned, args.min_assigned,
                                                  window)
        task_config = TaskConfig.multiclass(roster)
        print(f"roster ({len(roster)}): {', '.join(roster)}")

    if args.split < 1.0:
        split = corpus.split_dataset(usable, args.split, args.seed)
        train_records, test_records = split.train, split.test
    else:
        train_records, test_records = list(usable), []
    if args.test_out and test_records:
        corpus.write_dataset(sorted(test_records, key=lambda r: r.id),
                             args.test_out)
        print(f"wrote {len(test_records)} test records to {args.test_out}")

    vocab = textproc.build_vocab(_texts(train_records), args.vocab_min_freq,
                                 args.vocab_max_size)
    encoder_config = EncoderConfig(layers=args.layers, hidden_dim=args.hidden_dim,
                                   heads=args.heads, ff_dim=args.ff_dim,
                                   dropout=args.dropout)
    linear_config = LinearConfig(dim=args.dim, buckets=args.buckets,
                                 ngram_min=args.ngram_min, ngram_max=args.ngram_max)
    model = init_model(args.backend, task_config, vocab, seed=args.seed,
                       encoder_config=encoder_config, linear_config=linear_config)
    lr = args.lr if args.lr is not None else DEFAULT_LR[args.backend]
    train_config = TrainConfig(epochs=args.epochs, learning_rate=lr,
                               batch_size=args.batch,
                               max_seq_len=args.max_seq_len, seed=args.seed)
    model.train_config = train_config  # encode with the right max_seq_len

    inputs = _encode_all(train_records, model)
    if args.task == "labels":
        truths = [r.labels for r in train_records]
    else:
        index = {login: i for i, login in enumerate(roster)}
        truths = [index[r.assignee] for r in train_records]

    trained, history = train(model, list(zip(inputs, truths)), train_config)
    for epoch, loss in enumerate(history, start=1):
        print(f"epoch {epoch}: loss {loss:.6f}")
    save_model(trained, args.out)
    print(f"wrote model to {args.out} ({trained.fingerprint()})")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    records = corpus.read_dataset(args.data)
    policy = TriagePolicy(label_threshold=args.threshold)
    report = evaluate_model(model, records, policy)
    print(render_report(report, format=args.format))
    return 0


def _load_policy(args, assign_model) -> TriagePolicy:
    if args.policy:
        return TriagePolicy.load(args.policy)
    if assign_model is not None:
        return TriagePolicy(assign_enabled=True,
                            roster=list(assign_model.task_config.label_names))
    return TriagePolicy()


def cmd_predict(args) -> int:
    model = load_model(args.model)
    if model.task_config.task != TASK_MULTILABEL:
        raise TriageError(
            f"task mismatch: {args.model} is a {model.task_config.task} model; "
            "predict needs a label model (pass the assignment model via "
            "--assign-model)")
    assign_model = load_model(args.assign_model) if args.assign_model else None
    policy = _load_policy(args, assign_model)
    if args.threshold is not None:
        policy.label_threshold = args.threshold
    decision = triage_issue(args.title, args.body, model, assign_model, policy)
    print(json.dumps(decision_to_dict(decision), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .ghservice import ServiceConfig, TriageService, build_app

    label_model = load_model(args.label_model)
    assign_model = load_model(args.assign_model) if args.assign_model else None
    policy = _load_policy(args, assign_model)
    config = ServiceConfig.from_env()
    if args.dry_run:
        config.dry_run = True
    service = TriageService(label_model, assign_model, policy, config)
    uvicorn.run(build_app(service), host=args.host, port=args.port)
    return 0


def run(argv) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TriageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
