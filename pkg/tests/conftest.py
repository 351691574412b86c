import hashlib
import hmac
import json

import pytest

from issuetriage import textproc
from issuetriage.classifier import (LinearConfig, TaskConfig, TrainConfig,
                                    encode_for_model, init_model, train)
from issuetriage.ghservice import WebhookDelivery

from synthdata import synthetic_assignment_corpus, synthetic_label_corpus

TEST_SECRET = b"test-webhook-secret"


def _fit(records, task_config, truth_of, seed=11):
    texts = [textproc.concat_title_body(r.title, r.body) for r in records]
    vocab = textproc.build_vocab(texts, min_frequency=1, max_size=5000)
    cfg = TrainConfig(epochs=5, learning_rate=0.1, batch_size=8,
                      max_seq_len=32, seed=seed)
    model = init_model("linear", task_config, vocab, seed=seed,
                       linear_config=LinearConfig(dim=16, buckets=1024))
    model.train_config = cfg
    data = [(encode_for_model(model, r.title, r.body), truth_of(r))
            for r in records]
    trained, _ = train(model, data, cfg)
    return trained


@pytest.fixture(scope="session")
def tiny_label_model():
    """Linear multilabel model trained on a small keyword corpus."""
    records = synthetic_label_corpus(120, seed=5)
    return _fit(records, TaskConfig.multilabel(), lambda r: r.labels)


@pytest.fixture(scope="session")
def tiny_assign_model():
    records = synthetic_assignment_corpus(90, seed=6)
    roster = ["alice", "bob", "carol"]
    index = {d: i for i, d in enumerate(roster)}
    return _fit(records, TaskConfig.multiclass(roster),
                lambda r: index[r.assignee])


def sign_body(body: bytes, secret: bytes = TEST_SECRET) -> str:
    return "sha256=" + hmac.new(secret, body, hashlib.sha256).hexdigest()


def issue_opened_body(repo="octo/widgets", number=7,
                      title="app crashes with segfault on start",
                      body="stack trace shows a crash error") -> bytes:
    return json.dumps({
        "action": "opened",
        "repository": {"full_name": repo},
        "issue": {"number": number, "title": title, "body": body},
    }).encode("utf-8")


def make_delivery(raw: bytes, delivery_id="d-1", event="issues",
                  secret: bytes = TEST_SECRET,
                  signature: str | None = None) -> WebhookDelivery:
    return WebhookDelivery(
        delivery_id=delivery_id, event=event,
        signature_header=signature if signature is not None else sign_body(raw, secret),
        raw_body=raw)
