import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ValidationError

from app.errors import SchemaError
from app.models.requests import OPERATION_PAYLOAD_MAP

ModelT = TypeVar("ModelT", bound=BaseModel)


def validate_operation_type(operation_type: str) -> Tuple[bool, Optional[str]]:
    """
    Validate operation type is supported.

    Returns:
        (is_valid, error_message)
    """
    if operation_type not in OPERATION_PAYLOAD_MAP:
        valid_ops = ", ".join(OPERATION_PAYLOAD_MAP.keys())
        return False, f"Unknown operationType '{operation_type}'. Valid: {valid_ops}"

    return True, None


def validation_errors(exc: ValidationError) -> Dict[str, Dict[str, str]]:
    error_dict = {}
    for error in exc.errors():
        field = ".".join(str(x) for x in error["loc"])
        error_dict[field] = {
            "type": error["type"],
            "message": error["msg"]
        }
    return error_dict


def validate_payload(operation_type: str, payload: Dict[str, Any]):
    """
    Validate payload against operation schema.

    Returns:
        (is_valid, error_message, validation_errors_dict, validated_payload)
    """
    payload_model = OPERATION_PAYLOAD_MAP.get(operation_type)

    if not payload_model:
        return False, "Unknown operation type", None, None

    try:
        validated = payload_model(**payload)
        return True, None, None, validated

    except ValidationError as e:
        error_msg = f"Payload validation failed for {operation_type}"
        return False, error_msg, validation_errors(e), None


def load_config(path, model: Type[ModelT]) -> ModelT:
    """Read a JSON document and validate it against `model`."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise SchemaError(f"config {path} does not match {model.__name__}", validation_errors(exc)) from exc
