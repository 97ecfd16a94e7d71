"""HTTP client for the S3M gateway.

The client owns exactly three jobs: resolve configuration (explicit
arguments beat environment variables), attach the bearer token to every
request, and translate error responses into typed exceptions.  Anything
resembling business logic lives server-side; the client never inspects
or post-processes payloads beyond JSON decoding.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Any, Mapping

import requests

from .errors import (
    S3MClientError,
    S3MConfigurationError,
    S3MConnectionError,
    error_for_response,
)

ENV_TOKEN = "S3M_TOKEN"
ENV_BASE_URL = "S3M_BASE_URL"
DEFAULT_BASE_URL = "http://127.0.0.1:8080"

logger = logging.getLogger("olcf_s3m_api")


class OLCFAPIClient:
    """Authenticated session against one S3M gateway.

    Parameters
    ----------
    token:
        Bearer token.  Falls back to the ``S3M_TOKEN`` environment
        variable when omitted.
    base_url:
        Gateway root, e.g. ``http://127.0.0.1:8080``.  Falls back to
        ``S3M_BASE_URL``, then to the local default.
    timeout:
        Per-request timeout in seconds, applied to every call.
    session:
        Optional preconfigured ``requests.Session`` (connection pooling,
        custom TLS trust).  The client closes it on ``close()``.
    """

    def __init__(
        self,
        token: str | None = None,
        base_url: str | None = None,
        *,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ) -> None:
        resolved = token if token is not None else os.environ.get(ENV_TOKEN, "")
        if not resolved:
            raise S3MConfigurationError(
                "no API token: pass token= or set the S3M_TOKEN environment variable"
            )
        resolved_url = base_url if base_url is not None else os.environ.get(ENV_BASE_URL, "")
        if not resolved_url:
            resolved_url = DEFAULT_BASE_URL
        self._token = resolved
        self.base_url = resolved_url.rstrip("/")
        self.timeout = timeout
        self._session = session if session is not None else requests.Session()

    # The token stays out of repr, logs, and exception text.
    def __repr__(self) -> str:
        return f"OLCFAPIClient(base_url={self.base_url!r}, token=***)"

    def request(
        self,
        method: str,
        path: str,
        *,
        body: Mapping[str, Any] | None = None,
        params: Mapping[str, Any] | None = None,
        timeout: float | None = None,
    ) -> Any:
        """Issue one request and return the decoded JSON body.

        Raises a typed subclass of S3MClientError for any non-2xx
        response, and S3MConnectionError when the gateway cannot be
        reached at all.
        """
        if not path.startswith("/"):
            path = "/" + path
        url = self.base_url + path
        headers = {"Authorization": f"Bearer {self._token}"}
        data = None
        if body is not None:
            headers["Content-Type"] = "application/json"
            data = json.dumps(body).encode("utf-8")
        try:
            response = self._session.request(
                method,
                url,
                data=data,
                params=dict(params) if params else None,
                headers=headers,
                timeout=timeout if timeout is not None else self.timeout,
            )
        except requests.RequestException as exc:
            # Repr of the underlying exception never includes headers.
            raise S3MConnectionError(
                f"could not reach gateway at {self.base_url}: {exc.__class__.__name__}"
            ) from None
        logger.debug("%s %s -> %d", method, path, response.status_code)
        payload = self._decode(response)
        if response.status_code >= 400:
            raise error_for_response(response.status_code, payload)
        return payload

    @staticmethod
    def _decode(response: requests.Response) -> Any:
        content_type = response.headers.get("Content-Type", "")
        if "json" in content_type:
            try:
                return response.json()
            except ValueError:
                return {}
        return response.text

    def get(self, path: str, *, params: Mapping[str, Any] | None = None,
            timeout: float | None = None) -> Any:
        return self.request("GET", path, params=params, timeout=timeout)

    def post(self, path: str, body: Mapping[str, Any] | None = None, *,
             params: Mapping[str, Any] | None = None) -> Any:
        return self.request("POST", path, body=body, params=params)

    def delete(self, path: str) -> Any:
        return self.request("DELETE", path)

    def close(self) -> None:
        self._session.close()

    def __enter__(self) -> "OLCFAPIClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


__all__ = [
    "OLCFAPIClient",
    "ENV_TOKEN",
    "ENV_BASE_URL",
    "DEFAULT_BASE_URL",
    "S3MClientError",
    "S3MConfigurationError",
    "S3MConnectionError",
]
