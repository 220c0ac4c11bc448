from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    DEBUG: bool = False
    HOST: str = "0.0.0.0"
    PORT: int = 8000
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"
    LOG_BODY_LIMIT: int = 512

    # interior-point solver
    SDP_FEAS_TOL: float = 1e-7
    SDP_GAP_TOL: float = 1e-6
    SDP_MAX_ITER: int = 200
    SDP_VARIABLE_BOUND: float = 1e5
    SDP_STEP_FRACTION: float = 0.95

    # transition synthesis and audit
    PINV_CONDITION_CAP: float = 1e12
    MAX_NOISE_DIM: int = 6
    AUDIT_BOUNDARY_SAMPLES: int = 200
    AUDIT_INTERIOR_SAMPLES: int = 100
    AUDIT_TOL: float = 1e-6
    AUDIT_SEED: int = 0

    # abstraction and simulation
    COVER_CELL_CAP: int = 100_000
    PRUNE_MARGIN: float = 1e-9
    ROLLOUT_MAX_STEPS: int = 1000
    CONTAINMENT_TOL: float = 1e-6
    WORKERS: int = 1

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True
        env_nested_delimiter = "__"


settings = Settings()
