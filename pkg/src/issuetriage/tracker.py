"""Minimal REST client for a GitHub-compatible issue tracker.

Reads (search, issue listing) raise typed errors immediately so the
ingestion orchestrator can decide what to do; writes (labels,
assignees) retry with exponential backoff on 5xx and rate-limit 403.
The HTTP session and the sleep function are injectable for tests.
"""

from __future__ import annotations

import logging
import os
import re
import time

import requests

from .errors import ApiError, IngestionError, RateLimitError, UnknownRepoError

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.github.com"
TOKEN_ENV_VAR = "TRIAGE_GH_TOKEN"

_LINK_NEXT_RE = re.compile(r'<([^>]+)>\s*;\s*rel="next"')


def parse_link_next(link_header: str | None) -> str | None:
    """Extract the rel="next" URL from an RFC 5988 Link header."""
    if not link_header:
        return None
    m = _LINK_NEXT_RE.search(link_header)
    return m.group(1) if m else None


def _is_rate_limited(resp) -> bool:
    return (resp.status_code == 403
            and resp.headers.get("X-RateLimit-Remaining") == "0")


def _reset_time(resp) -> int | None:
    raw = resp.headers.get("X-RateLimit-Reset")
    try:
        return int(raw) if raw is not None else None
    except ValueError:
        return None


class TrackerClient:
    """Thin wrapper over an HTTP session with tracker error semantics."""

    def __init__(self, base_url: str = DEFAULT_BASE_URL, token: str | None = None,
                 session=None, sleeper=time.sleep, max_attempts: int = 3,
                 timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self._session = session if session is not None else requests.Session()
        self._sleeper = sleeper
        self.max_attempts = max_attempts
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": "application/vnd.github+json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _url(self, path: str) -> str:
        if path.startswith(("http://", "https://")):
            return path
        return self.base_url + path

    def _request(self, method: str, path: str, params=None, json_body=None):
        try:
            return self._session.request(
                method, self._url(path), headers=self._headers(),
                params=params, json=json_body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise IngestionError(f"transport failure: {exc}", retryable=True) from exc

    # ---- reads ----

    def get_json(self, path: str, params=None):
        """Single GET; returns (parsed json, headers)."""
        resp = self._request("GET", path, params=params)
        if _is_rate_limited(resp):
            raise RateLimitError(_reset_time(resp))
        if resp.status_code == 404:
            raise UnknownRepoError(f"not found: {path}")
        if resp.status_code >= 400:
            raise IngestionError(
                f"GET {path} failed with status {resp.status_code}",
                retryable=resp.status_code >= 500)
        return resp.json(), resp.headers

    def paginate(self, path: str, params=None):
        """Yield JSON pages, following Link rel="next" until exhaustion."""
        url: str | None = path
        while url is not None:
            payload, headers = self.get_json(url, params=params)
            yield payload
            params = None  # the next-link already carries the query
            url = parse_link_next(headers.get("Link"))

    # ---- writes ----

    def post_with_retry(self, path: str, json_body) -> dict:
        """POST with backoff (1 s, 2 s, ...) on 5xx and rate-limit 403.

        Other 4xx outcomes (404 unknown target, 422 unprocessable) are
        surfaced immediately without retrying.
        """
        last_status = None
        for attempt in range(self.max_attempts):
            resp = self._request("POST", path, json_body=json_body)
            status = resp.status_code
            if status < 300:
                try:
                    return resp.json()
                except ValueError:
                    return {}
            if status == 404:
                raise ApiError(f"unknown target: POST {path}", status=404)
            retryable = status >= 500 or _is_rate_limited(resp)
            if not retryable:
                raise ApiError(f"POST {path} failed with status {status}",
                               status=status)
            last_status = status
            if attempt < self.max_attempts - 1:
                delay = float(1 << attempt)
                logger.warning("POST %s got %s, retrying in %.0fs", path, status, delay)
                self._sleeper(delay)
        raise ApiError(
            f"POST {path} failed with status {last_status} "
            f"after {self.max_attempts} attempts", status=last_status)
