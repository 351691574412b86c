"""Webhook surface: verify deliveries for newly opened issues, run
triage, and write labels/assignees back to the tracker exactly once
per delivery id.

Nothing acts on an untrusted field before the HMAC signature checks
out, and the dedup cache is the linearization point that decides which
of two racing duplicate deliveries does the work.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from starlette.concurrency import run_in_threadpool

from .classifier import ModelBundle
from .errors import ApiError, ConfigError, IngestionError, ProtocolError
from .tracker import DEFAULT_BASE_URL, TrackerClient
from .triage import (TriageDecision, TriagePolicy, decision_to_dict,
                     triage_issue)

logger = logging.getLogger(__name__)

SECRET_ENV_VAR = "TRIAGE_WEBHOOK_SECRET"
API_BASE_ENV_VAR = "TRIAGE_API_BASE"
DRY_RUN_ENV_VAR = "TRIAGE_DRY_RUN"


def verify_signature(raw_body: bytes, signature_header: str, secret: bytes) -> bool:
    """Constant-time check of the sha256= HMAC header."""
    expected = "sha256=" + hmac.new(secret, raw_body, hashlib.sha256).hexdigest()
    return hmac.compare_digest(signature_header.encode("utf-8"),
                               expected.encode("utf-8"))


@dataclass
class WebhookDelivery:
    delivery_id: str
    event: str
    signature_header: str
    raw_body: bytes


@dataclass
class IssuePayload:
    repo: str
    number: int
    title: str
    body: str
    action: str


@dataclass
class SkipVerdict:
    reason: str
    ack: bool = False


def parse_event(delivery: WebhookDelivery):
    """Extract the issue payload, or a skip verdict for everything that
    is not a newly opened issue."""
    if delivery.event == "ping":
        return SkipVerdict("ping", ack=True)
    if delivery.event != "issues":
        return SkipVerdict(f"ignored event {delivery.event!r}")
    try:
        obj = json.loads(delivery.raw_body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed webhook body: {exc}")
    action = obj.get("action")
    if action != "opened":
        return SkipVerdict(f"ignored action {action!r}")
    try:
        issue = obj["issue"]
        return IssuePayload(
            repo=obj["repository"]["full_name"],
            number=int(issue["number"]),
            title=issue.get("title") or "",
            body=issue.get("body") or "",
            action=action,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"issue payload missing fields: {exc}")


class DedupCache:
    """Bounded LRU of delivery ids, safe under concurrent insert-if-absent."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("dedup capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict[str, None] = OrderedDict()
        self._lock = threading.Lock()

    def add_if_absent(self, key: str) -> bool:
        """True when the caller owns processing for `key`."""
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return False
            self._entries[key] = None
            if len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
            return True

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


@dataclass
class ServiceConfig:
    webhook_secret: bytes
    api_base_url: str = DEFAULT_BASE_URL
    auth_token: str | None = None
    dry_run: bool = False
    dedup_capacity: int = 10_000

    def __post_init__(self):
        if not self.webhook_secret:
            raise ConfigError("webhook secret must be nonempty")
        if self.dedup_capacity < 1:
            raise ConfigError("dedup capacity must be >= 1")

    @classmethod
    def from_env(cls, environ=os.environ) -> "ServiceConfig":
        secret = environ.get(SECRET_ENV_VAR, "")
        if not secret:
            raise ConfigError(f"{SECRET_ENV_VAR} is not set")
        return cls(
            webhook_secret=secret.encode("utf-8"),
            api_base_url=environ.get(API_BASE_ENV_VAR, DEFAULT_BASE_URL),
            auth_token=environ.get("TRIAGE_GH_TOKEN"),
            dry_run=environ.get(DRY_RUN_ENV_VAR, "").lower() in ("1", "true", "yes", "on"),
        )


def apply_labels(repo: str, issue_number: int, labels, api) -> dict:
    """POST the decided label names onto the issue. Labels must be nonempty."""
    if not labels:
        raise ValueError("apply_labels requires at least one label")
    return api.post_with_retry(f"/repos/{repo}/issues/{issue_number}/labels",
                               {"labels": list(labels)})


def apply_assignee(repo: str, issue_number: int, login: str, api,
                   roster=None) -> dict:
    """POST one assignee onto the issue; login must come from the roster."""
    if roster is not None and login not in roster:
        raise ValueError(f"assignee {login!r} is not in the roster")
    return api.post_with_retry(f"/repos/{repo}/issues/{issue_number}/assignees",
                               {"assignees": [login]})


@dataclass
class DeliveryOutcome:
    delivery_id: str
    status: str  # rejected | duplicate | malformed | acked | skipped | processed | failed
    http_status: int
    decision: TriageDecision | None = None
    api_results: list = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


class TriageService:
    """Holds the immutable models/policy and processes deliveries."""

    def __init__(self, label_model: ModelBundle,
                 assign_model: ModelBundle | None,
                 policy: TriagePolicy, config: ServiceConfig,
                 api: TrackerClient | None = None):
        if policy.assign_enabled and assign_model is None:
            logger.warning("assignment enabled but no model loaded; "
                           "running label-only (cold start)")
        self.label_model = label_model
        self.assign_model = assign_model
        self.policy = policy
        self.config = config
        self.api = api if api is not None else TrackerClient(
            base_url=config.api_base_url, token=config.auth_token)
        self._dedup = DedupCache(config.dedup_capacity)

    def handle_delivery(self, delivery: WebhookDelivery) -> DeliveryOutcome:
        if not verify_signature(delivery.raw_body, delivery.signature_header,
                                self.config.webhook_secret):
            return DeliveryOutcome(delivery.delivery_id, "rejected", 401)
        if not self._dedup.add_if_absent(delivery.delivery_id):
            return DeliveryOutcome(delivery.delivery_id, "duplicate", 202)
        try:
            verdict = parse_event(delivery)
        except ProtocolError as exc:
            return DeliveryOutcome(delivery.delivery_id, "malformed", 400,
                                   errors=[str(exc)])
        if isinstance(verdict, SkipVerdict):
            if verdict.ack:
                return DeliveryOutcome(delivery.delivery_id, "acked", 200)
            logger.info("skipping delivery %s: %s", delivery.delivery_id,
                        verdict.reason)
            return DeliveryOutcome(delivery.delivery_id, "skipped", 202)

        decision = triage_issue(verdict.title, verdict.body, self.label_model,
                                self.assign_model, self.policy,
                                allow_cold_start=True)
        outcome = DeliveryOutcome(delivery.delivery_id, "processed", 202,
                                  decision=decision)
        if self.config.dry_run:
            logger.info("dry run: would label %s#%s with %s", verdict.repo,
                        verdict.number, [n for n, _ in decision.labels])
            return outcome

        label_names = [name for name, _ in decision.labels]
        if label_names:
            try:
                outcome.api_results.append(
                    ("labels", apply_labels(verdict.repo, verdict.number,
                                            label_names, self.api)))
            except (ApiError, IngestionError) as exc:
                outcome.errors.append(f"labels: {exc}")
        if decision.assignee is not None:
            login, _ = decision.assignee
            try:
                outcome.api_results.append(
                    ("assignee", apply_assignee(verdict.repo, verdict.number,
                                                login, self.api,
                                                roster=self.policy.roster)))
            except (ApiError, IngestionError) as exc:
                outcome.errors.append(f"assignee: {exc}")
        if outcome.errors:
            outcome.status = "failed"
        return outcome


def build_app(service: TriageService) -> FastAPI:
    app = FastAPI(title="issuetriage webhook")

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.post("/webhook")
    async def webhook(request: Request):
        delivery = WebhookDelivery(
            delivery_id=request.headers.get("X-GitHub-Delivery", ""),
            event=request.headers.get("X-GitHub-Event", ""),
            signature_header=request.headers.get("X-Hub-Signature-256", ""),
            raw_body=await request.body(),
        )
        outcome = await run_in_threadpool(service.handle_delivery, delivery)
        return JSONResponse(
            {"delivery_id": outcome.delivery_id, "status": outcome.status,
             "decision": (None if outcome.decision is None
                          else decision_to_dict(outcome.decision)),
             "errors": outcome.errors},
            status_code=outcome.http_status)

    return app
