"""Acceptance gate: one test per criterion, each printing a PASS line
(run with `pytest tests/test_acceptance.py -v -s`).
"""

import functools
import threading
import time

import numpy as np
import pytest

from issuetriage import corpus, textproc
from issuetriage.classifier import (EncoderConfig, LinearConfig, TaskConfig,
                                    TrainConfig, encode_for_model,
                                    featurize_text, forward, from_bytes,
                                    init_model, to_bytes, train)
from issuetriage.classifier.bundle import stable_softmax
from issuetriage.classifier.training import batch_loss_and_grads
from issuetriage.classifier.transformer import masked_softmax
from issuetriage.corpus import CATEGORIES, LabelVector
from issuetriage.errors import (BadMagicError, ChecksumMismatchError,
                                TruncatedFileError)
from issuetriage.evaluation import (confusion_multiclass, confusion_multilabel,
                                    evaluate_model, metrics_from_counts,
                                    percent)
from issuetriage.ghservice import ServiceConfig, TriageService
from issuetriage.tracker import TrackerClient
from issuetriage.triage import TriagePolicy

from conftest import TEST_SECRET, issue_opened_body, make_delivery, sign_body
from fakes import FakeResponse, FakeSession
from oracles import (brute_force_counts_multiclass,
                     brute_force_counts_multilabel, prf_reference)
from synthdata import synthetic_label_corpus

# The transformer's stock learning rate (4e-5) is sized for fine-tuning
# a large pretrained encoder; training this toy encoder from scratch for
# 5 epochs on 480 documents needs a bigger step. This override is the
# value actually used for the gate.
TRANSFORMER_LR_OVERRIDE = 3e-3
LINEAR_LR = 0.1  # linear backend's stock default

ACCEPT_SEED = 42


def criterion(num, name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {num} ({name}): FAIL")
                raise
            print(f"ACCEPTANCE {num} ({name}): PASS")
        return wrapper
    return decorate


@criterion(1, "macro-average reproduction")
def test_criterion_1_macro_average_matches_published_row():
    started = time.monotonic()
    per_class_percent = {
        "precision": (81, 78, 79),
        "recall": (81, 72, 81),
        "f1": (81, 74, 80),
    }
    rendered = []
    for metric in ("precision", "recall", "f1"):
        macro = sum(v / 100 for v in per_class_percent[metric]) / 3
        rendered.append(f"{percent(macro)}%")
    assert " ".join(rendered) == "79% 78% 78%"
    assert time.monotonic() - started < 1.0


def _train_and_score(backend, records, seed):
    split = corpus.split_dataset(records, 0.8, seed)
    texts = [textproc.concat_title_body(r.title, r.body) for r in split.train]
    vocab = textproc.build_vocab(texts, min_frequency=2, max_size=30_000)
    if backend == "linear":
        model = init_model("linear", TaskConfig.multilabel(), vocab, seed=seed,
                           linear_config=LinearConfig(dim=32, buckets=4096))
        cfg = TrainConfig(epochs=5, learning_rate=LINEAR_LR, batch_size=8,
                          max_seq_len=64, seed=seed)
    else:
        model = init_model("transformer", TaskConfig.multilabel(), vocab,
                           seed=seed, encoder_config=EncoderConfig())
        cfg = TrainConfig(epochs=5, learning_rate=TRANSFORMER_LR_OVERRIDE,
                          batch_size=8, max_seq_len=64, seed=seed)
    model.train_config = cfg
    data = [(encode_for_model(model, r.title, r.body), r.labels)
            for r in split.train]
    trained, history = train(model, data, cfg)
    report = evaluate_model(trained, split.test,
                            TriagePolicy(label_threshold=0.5))
    return trained, history, report


@criterion(2, "synthetic-corpus training, both backends")
def test_criterion_2_both_backends_reach_macro_f1():
    started = time.monotonic()
    records = synthetic_label_corpus(600, seed=ACCEPT_SEED)
    assert len(records) == 600
    _, _, linear_report = _train_and_score("linear", records, ACCEPT_SEED)
    _, _, tf_report = _train_and_score("transformer", records, ACCEPT_SEED)
    elapsed = time.monotonic() - started
    print(f"  linear macro-F1 {linear_report.macro.f1:.4f}, "
          f"transformer macro-F1 {tf_report.macro.f1:.4f} "
          f"(lr override {TRANSFORMER_LR_OVERRIDE}), {elapsed:.1f}s")
    assert linear_report.macro.f1 >= 0.90
    assert tf_report.macro.f1 >= 0.90
    assert elapsed < 60.0


@criterion(3, "gradient correctness vs finite differences")
def test_criterion_3_gradients_match_finite_differences():
    started = time.monotonic()
    vocab = textproc.build_vocab(
        ["crash error fails segfault", "feature improve request",
         "how why usage question", "build version code"], 1, 200)

    def check(model, inputs, truths, n_samples, seed):
        params = {k: v.astype(np.float64) for k, v in model.weights.items()}
        _, grads = batch_loss_and_grads(model, params, inputs, truths)
        rng = np.random.default_rng(seed)
        names = sorted(params)
        h = 1e-4
        for _ in range(n_samples):
            name = names[rng.integers(len(names))]
            flat = params[name].reshape(-1)
            idx = int(rng.integers(flat.size))
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = batch_loss_and_grads(model, params, inputs, truths)
            flat[idx] = orig - h
            lm, _ = batch_loss_and_grads(model, params, inputs, truths)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            analytic = grads[name].reshape(-1)[idx]
            diff = abs(fd - analytic)
            rel = diff / max(abs(fd) + abs(analytic), 1e-8)
            # differences below 1e-9 are central-difference noise on
            # structurally-zero gradients (softmax shift invariance)
            assert diff <= 1e-9 or rel <= 1e-4, f"{name}[{idx}] rel={rel:.3g}"
        return n_samples

    enc = EncoderConfig(layers=1, hidden_dim=8, heads=2, ff_dim=16, dropout=0.0)
    tf_model = init_model("transformer", TaskConfig.multilabel(), vocab,
                          seed=3, encoder_config=enc)
    tf_inputs = [textproc.encode_sequence("crash error feature", vocab, 10),
                 textproc.encode_sequence("how why", vocab, 10)]
    tf_truths = [LabelVector(bug=True), LabelVector(question=True)]
    checked = check(tf_model, tf_inputs, tf_truths, 120, seed=0)

    lin_cfg = LinearConfig(dim=8, buckets=64)
    lin_model = init_model("linear", TaskConfig.multilabel(), vocab, seed=6,
                           linear_config=lin_cfg)
    lin_inputs = [featurize_text("crash error fails", vocab, lin_cfg),
                  featurize_text("how why usage", vocab, lin_cfg)]
    lin_truths = [LabelVector(bug=True), LabelVector(question=True)]
    checked += check(lin_model, lin_inputs, lin_truths, 120, seed=1)

    elapsed = time.monotonic() - started
    assert checked >= 200
    assert elapsed < 30.0


@criterion(4, "normalization invariants")
def test_criterion_4_softmax_attention_and_encoding():
    rng = np.random.default_rng(ACCEPT_SEED)
    for _ in range(1000):
        k = int(rng.integers(2, 12))
        probs = stable_softmax(rng.normal(scale=10.0, size=k))
        assert abs(probs.sum() - 1.0) < 1e-6

    for _ in range(200):
        b, heads, t = 2, 2, 8
        scores = rng.normal(scale=8.0, size=(b, heads, t, t))
        key_mask = (rng.random((b, t)) < 0.7).astype(np.float64)
        key_mask[:, 0] = 1.0
        attn = masked_softmax(scores, key_mask)
        masked = np.broadcast_to(key_mask[:, None, None, :] == 0.0, attn.shape)
        assert (attn[masked] == 0.0).all()
        assert np.abs(attn.sum(axis=-1) - 1.0).max() < 1e-6

    vocab = textproc.build_vocab(["alpha beta gamma delta"], 1, 100)
    words = ["alpha", "beta", "gamma", "delta", "zzz"]
    for _ in range(300):
        n_words = int(rng.integers(0, 40))
        text = " ".join(rng.choice(words, size=n_words))
        max_len = int(rng.integers(1, 24))
        seq = textproc.encode_sequence(text, vocab, max_len)
        assert len(seq.ids) == max_len
        assert len(seq.mask) == max_len
        assert seq.n_tokens == min(n_words, max_len)


@criterion(5, "serialization round-trip and format errors")
def test_criterion_5_serialization():
    vocab = textproc.build_vocab(
        ["crash error fails", "feature improve", "how why question"], 1, 100)
    enc = EncoderConfig(layers=1, hidden_dim=8, heads=2, ff_dim=16, dropout=0.1)
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=4,
                      max_seq_len=10, seed=0)
    model = init_model("transformer", TaskConfig.multilabel(), vocab, seed=1,
                       encoder_config=enc)
    model.train_config = cfg
    data = [(encode_for_model(model, "crash error", ""), LabelVector(bug=True)),
            (encode_for_model(model, "feature improve", ""),
             LabelVector(enhancement=True))]
    trained, _ = train(model, data, cfg)

    blob = to_bytes(trained)
    loaded = from_bytes(blob)
    rng = np.random.default_rng(ACCEPT_SEED)
    words = ["crash", "error", "feature", "how", "why", "improve", "zzz"]
    for _ in range(100):
        text = " ".join(rng.choice(words, size=int(rng.integers(1, 9))))
        seq = encode_for_model(trained, text, "")
        assert (forward(trained, seq).probs == forward(loaded, seq).probs).all()

    with pytest.raises(BadMagicError):
        from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(TruncatedFileError):
        from_bytes(blob[:len(blob) - 37])
    tampered = bytearray(blob)
    tampered[-60] ^= 0x5A
    with pytest.raises(ChecksumMismatchError):
        from_bytes(bytes(tampered))
    # the three failures are distinct types
    assert len({BadMagicError, TruncatedFileError, ChecksumMismatchError}) == 3


@criterion(6, "metric oracle equivalence")
def test_criterion_6_brute_force_recount_agreement():
    rng = np.random.default_rng(ACCEPT_SEED)
    for trial in range(100):
        n = int(rng.integers(1, 21))
        preds = [LabelVector(*map(bool, rng.integers(0, 2, size=3)))
                 for _ in range(n)]
        truths = [LabelVector(*map(bool, rng.integers(0, 2, size=3)))
                  for _ in range(n)]
        counts = confusion_multilabel(preds, truths)
        expected = brute_force_counts_multilabel(preds, truths, CATEGORIES)
        report = metrics_from_counts(counts)
        for cat in CATEGORIES:
            c = counts.per_class[cat]
            assert (c.tp, c.fp, c.fn, c.tn) == expected[cat]
            m = report.per_class[cat]
            assert (m.precision, m.recall, m.f1) == prf_reference(
                c.tp, c.fp, c.fn)

    for trial in range(100):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 21))
        preds = rng.integers(0, k, size=n).tolist()
        truths = rng.integers(0, k, size=n).tolist()
        counts = confusion_multiclass(preds, truths, k)
        expected = brute_force_counts_multiclass(preds, truths, k)
        report = metrics_from_counts(counts)
        for i in range(k):
            c = counts.per_class[str(i)]
            assert (c.tp, c.fp, c.fn, c.tn) == expected[i]
            m = report.per_class[str(i)]
            assert (m.precision, m.recall, m.f1) == prf_reference(
                c.tp, c.fp, c.fn)


LABELS_URL = "https://tracker.test/repos/octo/widgets/issues/7/labels"


def _service(label_model, session, dry_run=False):
    config = ServiceConfig(webhook_secret=TEST_SECRET,
                           api_base_url="https://tracker.test",
                           auth_token="t", dry_run=dry_run)
    api = TrackerClient(base_url="https://tracker.test", token="t",
                        session=session, sleeper=lambda s: None)
    return TriageService(label_model, None, TriagePolicy(), config, api=api)


@criterion(7, "service end-to-end against a mocked tracker")
def test_criterion_7_service_end_to_end(tiny_label_model):
    started = time.monotonic()

    # exactly one add-labels call carrying decide_labels output
    session = FakeSession()
    session.add("POST", LABELS_URL, FakeResponse(200, json_body=[]))
    service = _service(tiny_label_model, session)
    outcome = service.handle_delivery(make_delivery(issue_opened_body(),
                                                    delivery_id="a-1"))
    assert outcome.status == "processed"
    posts = session.transcript("POST")
    assert len(posts) == 1
    assert posts[0][3] == {"labels": [n for n, _ in outcome.decision.labels]}

    # tampered signature: 401 and empty transcript
    session = FakeSession()
    service = _service(tiny_label_model, session)
    raw = issue_opened_body()
    bad = make_delivery(raw, delivery_id="a-2",
                        signature=sign_body(raw)[:-1] + "f")
    outcome = service.handle_delivery(bad)
    assert outcome.http_status == 401
    assert session.transcript() == []

    # duplicate delivery id, sequential and concurrent: one transcript entry
    session = FakeSession()
    session.add("POST", LABELS_URL, FakeResponse(200, json_body=[]))
    service = _service(tiny_label_model, session)
    dup = make_delivery(issue_opened_body(), delivery_id="a-3")
    service.handle_delivery(dup)
    assert service.handle_delivery(dup).status == "duplicate"
    assert len(session.transcript("POST")) == 1

    session = FakeSession()
    session.add("POST", LABELS_URL, FakeResponse(200, json_body=[]))
    service = _service(tiny_label_model, session)
    race = make_delivery(issue_opened_body(), delivery_id="a-4")
    barrier = threading.Barrier(2)
    statuses = []

    def worker():
        barrier.wait()
        statuses.append(service.handle_delivery(race).status)

    threads = [threading.Thread(target=worker) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(session.transcript("POST")) == 1
    assert sorted(statuses) == ["duplicate", "processed"]

    # dry run: decision produced, transcript empty
    session = FakeSession()
    service = _service(tiny_label_model, session, dry_run=True)
    outcome = service.handle_delivery(make_delivery(issue_opened_body(),
                                                    delivery_id="a-5"))
    assert outcome.decision is not None and outcome.decision.labels
    assert session.transcript() == []

    assert time.monotonic() - started < 10.0


@criterion(8, "determinism across runs")
def test_criterion_8_identical_seeds_identical_artifacts():
    records = synthetic_label_corpus(120, seed=ACCEPT_SEED)

    # split membership
    s1 = corpus.split_dataset(records, 0.8, seed=7)
    s2 = corpus.split_dataset(records, 0.8, seed=7)
    assert [r.id for r in s1.train] == [r.id for r in s2.train]
    assert [r.id for r in s1.test] == [r.id for r in s2.test]

    def run_once(backend):
        texts = [textproc.concat_title_body(r.title, r.body) for r in s1.train]
        vocab = textproc.build_vocab(texts, 1, 10_000)
        if backend == "linear":
            model = init_model("linear", TaskConfig.multilabel(), vocab,
                               seed=9, linear_config=LinearConfig(dim=16,
                                                                  buckets=512))
            cfg = TrainConfig(epochs=3, learning_rate=LINEAR_LR, batch_size=8,
                              max_seq_len=32, seed=9)
        else:
            model = init_model("transformer", TaskConfig.multilabel(), vocab,
                               seed=9, encoder_config=EncoderConfig(
                                   layers=1, hidden_dim=16, heads=2, ff_dim=32,
                                   dropout=0.1))
            cfg = TrainConfig(epochs=2, learning_rate=TRANSFORMER_LR_OVERRIDE,
                              batch_size=8, max_seq_len=32, seed=9)
        model.train_config = cfg
        data = [(encode_for_model(model, r.title, r.body), r.labels)
                for r in s1.train]
        trained, history = train(model, data, cfg)
        return to_bytes(trained), history

    for backend in ("linear", "transformer"):
        bytes1, hist1 = run_once(backend)
        bytes2, hist2 = run_once(backend)
        assert hist1 == hist2, backend
        assert bytes1 == bytes2, backend
