"""Shared HTTP plumbing for the remote model and encoder clients.

Requests are serialized with :func:`ufid.types.canonical_json` so that a
request built from the same inputs is byte-identical everywhere, which is
what the recorded protocol fixtures assert. Transport failures are retried
with exponential backoff; HTTP error statuses are not retried.
"""

from __future__ import annotations

import json
import time
from typing import Any

import httpx

from .errors import ProtocolError, TransportError
from .types import canonical_json

DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 0.2
DEFAULT_TIMEOUT_S = 30.0


def post_json(client: httpx.Client, url: str, payload: dict[str, Any], *,
              attempts: int = DEFAULT_ATTEMPTS,
              backoff_s: float = DEFAULT_BACKOFF_S) -> dict[str, Any]:
    """POST canonical JSON, retrying transport errors only.

    Returns the decoded JSON body on 2xx. Raises :class:`TransportError`
    after the last failed attempt, :class:`ProtocolError` on an HTTP error
    status or an undecodable body.
    """
    body = canonical_json(payload)
    last_exc: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            resp = client.post(url, content=body,
                               headers={"content-type": "application/json"})
        except httpx.TransportError as exc:
            last_exc = exc
            if attempt < attempts:
                time.sleep(backoff_s * (2 ** (attempt - 1)))
            continue
        if resp.status_code >= 400:
            detail = _error_detail(resp)
            raise ProtocolError(f"{url} answered {resp.status_code}: {detail}")
        try:
            decoded = resp.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"{url} answered undecodable JSON: {exc}") from exc
        if not isinstance(decoded, dict):
            raise ProtocolError(f"{url} answered non-object JSON")
        return decoded
    raise TransportError(f"{url} unreachable after {attempts} attempts: {last_exc}",
                         attempts=attempts)


def _error_detail(resp: httpx.Response) -> str:
    try:
        obj = resp.json()
        if isinstance(obj, dict) and "error" in obj:
            return str(obj["error"])
    except json.JSONDecodeError:
        pass
    return resp.text[:200]
