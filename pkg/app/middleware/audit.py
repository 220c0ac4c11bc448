import json
import time
import uuid
from typing import Callable

import structlog
from fastapi import Request, Response
from fastapi.responses import FileResponse, StreamingResponse
from starlette.middleware.base import BaseHTTPMiddleware

from app.config import settings

logger = structlog.get_logger()


class AuditMiddleware(BaseHTTPMiddleware):
    """Logs every request/response pair under one request id."""

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        start_time = time.perf_counter()
        request_id = await self._request_id(request)
        structlog.contextvars.bind_contextvars(request_id=request_id)

        await self._log_inbound(request)
        try:
            response = await call_next(request)
        except Exception as e:
            await logger.aerror(
                "request_error",
                method=request.method,
                path=request.url.path,
                error=str(e),
                latency_ms=int((time.perf_counter() - start_time) * 1000)
            )
            raise
        finally:
            structlog.contextvars.unbind_contextvars("request_id")

        response.headers["X-Request-ID"] = request_id
        await self._log_outbound(response, request_id, int((time.perf_counter() - start_time) * 1000))
        return response

    async def _log_inbound(self, request: Request):
        body_size = 0
        body_preview = None
        if request.method in ("POST", "PUT", "PATCH"):
            body = await request.body()
            body_size = len(body)
            body_preview = body.decode("utf-8", errors="ignore")[:settings.LOG_BODY_LIMIT] or None

        await logger.ainfo(
            "inbound_request",
            method=request.method,
            path=request.url.path,
            body_size=body_size,
            body_preview=body_preview
        )

    async def _log_outbound(self, response: Response, request_id: str, latency_ms: int):
        if isinstance(response, (StreamingResponse, FileResponse)) or not hasattr(response, "body"):
            body_size = 0
        else:
            body_size = len(response.body) if response.body else 0

        await logger.ainfo(
            "outbound_response",
            request_id=request_id,
            status_code=response.status_code,
            body_size=body_size,
            latency_ms=latency_ms
        )

    async def _request_id(self, request: Request) -> str:
        request_id = request.headers.get("X-Request-ID")
        if request_id:
            return request_id

        if request.method == "POST":
            try:
                data = json.loads(await request.body() or b"null")
            except (json.JSONDecodeError, UnicodeDecodeError):
                data = None
            if isinstance(data, dict) and isinstance(data.get("requestId"), str):
                return data["requestId"]

        return str(uuid.uuid4())
