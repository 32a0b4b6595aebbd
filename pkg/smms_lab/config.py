"""Application configuration settings."""
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Lab settings loaded from environment variables (prefix ``SMMS_LAB_``)."""

    model_config = SettingsConfigDict(
        env_prefix="SMMS_LAB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_name: str = Field(default="SMMS Lab")
    app_version: str = Field(default="1.0.0")
    output_dir: str = Field(default="results")
    seed: int = Field(default=0)

    # Parallelism
    threads: int = Field(default=1, ge=1)

    # Logging
    log_level: str = Field(default="INFO")
    log_json: bool = Field(default=True)

    # Eigen Solver
    eigen_tol: float = Field(default=1e-8, gt=0)
    eigen_max_iter: int = Field(default=5000, ge=1)

    # Monotone Solver
    solver_tol: float = Field(default=1e-9, gt=0)
    solver_max_iter: int = Field(default=20000, ge=1)
    max_halvings: int = Field(default=20, ge=0)

    # Flow
    flow_boundary_tol: float = Field(default=1e-9, gt=0)
    energy_growth_limit: float = Field(default=10.0, gt=1.0)

    # Minimization
    positivity_floor: float = Field(default=1e-12, gt=0)
    minimize_max_iter: int = Field(default=2000, ge=1)


# Global settings instance
settings = Settings()
