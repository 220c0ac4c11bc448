import structlog
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from app.config import settings
from app.middleware.audit import AuditMiddleware
from app.models.responses import ErrorResponse
from app.routes.jobs import router as jobs_router
from app.utils.log_setup import configure_logging
from app.utils.validators import validation_errors

configure_logging(settings.LOG_LEVEL, settings.LOG_FORMAT)

logger = structlog.get_logger()

app = FastAPI(
    title="PWA Abstraction Toolkit",
    description="Certified state-feedback transitions for noisy piecewise-affine systems",
    version="0.1.0",
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json"
)

app.add_middleware(AuditMiddleware)

@app.get("/health")
async def health_check():
    return {
        "status": "ok",
        "service": "pwa-abstraction-toolkit",
        "version": "0.1.0"
    }

app.include_router(jobs_router)

@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    """Handle HTTP exceptions with structured response."""

    # If detail is already a dict (from our code), use it
    if isinstance(exc.detail, dict):
        return JSONResponse(
            status_code=exc.status_code,
            content=exc.detail
        )

    return JSONResponse(
        status_code=exc.status_code,
        content=ErrorResponse.body(request.headers.get("X-Request-ID", "unknown"), "HTTP_ERROR", str(exc.detail))
    )


@app.exception_handler(RequestValidationError)
async def request_validation_handler(request, exc):
    """Malformed envelopes (unknown operationType, missing payload) use the same error shape."""
    return JSONResponse(
        status_code=400,
        content=ErrorResponse.body(request.headers.get("X-Request-ID", "unknown"), "VALIDATION_ERROR",
                                   "Request validation failed", validation_errors(exc))
    )


@app.exception_handler(Exception)
async def general_exception_handler(request, exc):
    """Handle unexpected exceptions."""
    await logger.aerror(
        "unhandled_exception",
        path=request.url.path,
        error=str(exc),
        error_type=type(exc).__name__
    )

    return JSONResponse(
        status_code=500,
        content=ErrorResponse.body(request.headers.get("X-Request-ID", "unknown"), "INTERNAL_ERROR",
                                   "Internal server error")
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        app,
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.DEBUG
    )
