import time

import structlog
from fastapi import APIRouter, HTTPException, status
from fastapi.concurrency import run_in_threadpool

from app.decision_mapper import DecisionMapper
from app.errors import AbstractionToolkitError, NumericalFailure
from app.models.requests import JobRequest
from app.models.responses import ErrorResponse, ResponseMetadata, SuccessResponse
from app.utils.validators import validate_operation_type, validate_payload


logger = structlog.get_logger()
router = APIRouter(prefix="/jobs", tags=["jobs"])

_mapper = None


def get_mapper() -> DecisionMapper:
    """Get or initialize the decision mapper."""
    global _mapper
    if _mapper is None:
        _mapper = DecisionMapper()
    return _mapper


def _error(status_code: int, request_id: str, code: str, message: str, details=None,
           metadata: ResponseMetadata | None = None) -> HTTPException:
    return HTTPException(status_code=status_code,
                         detail=ErrorResponse.body(request_id, code, message, details, metadata))


@router.post(
    "/execute",
    response_model=SuccessResponse | ErrorResponse,
    status_code=200
)
async def execute_job(request: JobRequest):
    """
    Run one toolkit operation synchronously and return its result.
    """
    request_id = request.requestId
    operation_type = request.operationType

    await logger.ainfo(
        "job_request_received",
        request_id=request_id,
        operation_type=operation_type
    )

    is_valid, validation_error = validate_operation_type(operation_type)
    if not is_valid:
        await logger.awarning(
            "validation_failed",
            request_id=request_id,
            operation_type=operation_type,
            error_type="unknown_operation_type",
            error_message=validation_error
        )
        raise _error(status.HTTP_400_BAD_REQUEST, request_id, "UNKNOWN_OPERATION", validation_error)

    is_valid, validation_error, error_details, validated_payload = validate_payload(operation_type, request.payload)
    if not is_valid:
        await logger.awarning(
            "validation_failed",
            request_id=request_id,
            operation_type=operation_type,
            error_type="payload_validation_error",
            error_message=validation_error,
            error_details=error_details
        )
        raise _error(status.HTTP_400_BAD_REQUEST, request_id, "VALIDATION_ERROR", validation_error, error_details)

    start_time = time.perf_counter()
    try:
        data = await run_in_threadpool(get_mapper().execute, operation_type, validated_payload)

    except AbstractionToolkitError as e:
        await logger.awarning(
            "job_rejected",
            request_id=request_id,
            operation_type=operation_type,
            error_code=e.code,
            error=e.message
        )
        status_code = (status.HTTP_500_INTERNAL_SERVER_ERROR if isinstance(e, NumericalFailure)
                       else status.HTTP_422_UNPROCESSABLE_ENTITY)
        elapsed_ms = int((time.perf_counter() - start_time) * 1000)
        raise _error(status_code, request_id, e.code, e.message, e.details or None,
                     ResponseMetadata(operation=operation_type, elapsedMs=elapsed_ms))

    except Exception as e:
        await logger.aerror(
            "job_request_error",
            request_id=request_id,
            operation_type=operation_type,
            error=str(e),
            error_type=type(e).__name__
        )
        raise _error(status.HTTP_500_INTERNAL_SERVER_ERROR, request_id, "INTERNAL_ERROR", "Internal server error")

    elapsed_ms = int((time.perf_counter() - start_time) * 1000)
    await logger.ainfo(
        "job_request_success",
        request_id=request_id,
        operation_type=operation_type,
        elapsed_ms=elapsed_ms
    )

    return SuccessResponse(
        requestId=request_id,
        success=True,
        data=data,
        metadata=ResponseMetadata(operation=operation_type, elapsedMs=elapsed_ms)
    )
