from datetime import datetime, timezone
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field


class ErrorDetail(BaseModel):
    code: str = Field(..., description="Toolkit error code, e.g. DIMENSION_MISMATCH")
    message: str
    details: Optional[Dict[str, Any]] = None


class ResponseMetadata(BaseModel):
    operation: str
    elapsedMs: int = Field(..., ge=0, description="Time spent in the toolkit call")
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class SuccessResponse(BaseModel):
    requestId: str
    success: bool = True
    data: Any
    metadata: ResponseMetadata


class ErrorResponse(BaseModel):
    """Envelope for rejected jobs; metadata is set once the toolkit call has run."""

    requestId: str
    success: bool = False
    error: ErrorDetail
    metadata: Optional[ResponseMetadata] = None

    @classmethod
    def body(cls, request_id: str, code: str, message: str, details: Optional[Dict[str, Any]] = None,
             metadata: Optional[ResponseMetadata] = None) -> Dict[str, Any]:
        envelope = cls(requestId=request_id, error=ErrorDetail(code=code, message=message, details=details),
                       metadata=metadata)
        return envelope.model_dump(mode="json")
