from typing import Any, Dict, Optional


class AbstractionToolkitError(Exception):
    """Base error. `code` follows the UPPER_SNAKE error codes of the API envelope."""

    code = "TOOLKIT_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details or None}


class DomainError(AbstractionToolkitError):
    code = "DOMAIN_ERROR"


class DimensionError(AbstractionToolkitError):
    code = "DIMENSION_MISMATCH"


class DegenerateInputError(AbstractionToolkitError):
    code = "DEGENERATE_INPUT"


class VertexLimitError(AbstractionToolkitError):
    code = "VERTEX_LIMIT"


class ContractError(AbstractionToolkitError):
    code = "CONTRACT_ERROR"


class NumericalFailure(AbstractionToolkitError):
    code = "NUMERICAL_FAILURE"


class AssemblyError(AbstractionToolkitError):
    code = "ASSEMBLY_ERROR"


class AuditFailure(AbstractionToolkitError):
    code = "AUDIT_FAILURE"


class CapacityError(AbstractionToolkitError):
    code = "CAPACITY_EXCEEDED"


class SchemaError(AbstractionToolkitError):
    code = "SCHEMA_ERROR"


class PolicyError(AbstractionToolkitError):
    code = "POLICY_ERROR"


class CertifiedTransitionError(AbstractionToolkitError):
    code = "CERTIFIED_TRANSITION_VIOLATED"


class CertificationError(AbstractionToolkitError):
    code = "CERTIFICATION_FAILED"


class BellmanViolationError(AbstractionToolkitError):
    code = "BELLMAN_VIOLATION"
