from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Application Settings
    version: str = "0.1.0"
    log_level: str = "INFO"
    threads: int = 1

    # Database Configuration (run ledger)
    database_url: str = "sqlite:///./data/freespec.db"
    record_runs: bool = True

    # Fixed-point solver defaults
    fp_damping: float = 0.5
    fp_tol: float = 1e-12
    fp_max_iter: int = 10000
    fp_min_im: float = 1e-8
    fp_clamp_budget: int = 100

    # Stieltjes inversion offsets
    eps_closed_form: float = 1e-6
    eps_solved: float = 1e-3

    # Grid evaluation
    block_size: int = 64
    edge_delta: float = 0.05  # validity band around perturbative edge singularities
    nonconvergence_budget: float = 0.01  # fraction of failed points before exit code 2

    # Monte Carlo runs
    figure_realizations: int = 1000
    ci_realizations: int = 200

    model_config = {
        "env_file": ".env",
        "env_prefix": "FREESPEC_",
        "case_sensitive": False,
        "extra": "ignore"  # Ignore extra fields in .env
    }


settings = Settings()
