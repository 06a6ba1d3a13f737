import logging
import os


class Settings:
    app_name: str = os.getenv("AGBP_APP_NAME", "agbp")
    log_level: str = os.getenv("AGBP_LOG_LEVEL", "INFO")
    tolerance: float = float(os.getenv("AGBP_TOLERANCE", "1e-5"))
    prior_mean: float = float(os.getenv("AGBP_PRIOR_MEAN", "0"))
    prior_variance: float = float(os.getenv("AGBP_PRIOR_VARIANCE", "1e3"))
    max_iterations: int = int(os.getenv("AGBP_MAX_ITERATIONS", "100000"))
    max_sequences: int = int(os.getenv("AGBP_MAX_SEQUENCES", "10000"))
    divergence_limit: float = float(os.getenv("AGBP_DIVERGENCE_LIMIT", "1e15"))
    output_dir: str = os.getenv("AGBP_OUTPUT_DIR", "results")
    workers: int = int(os.getenv("AGBP_WORKERS", "1"))
    host: str = os.getenv("AGBP_HOST", "0.0.0.0")
    port: int = int(os.getenv("AGBP_PORT", "8000"))


settings = Settings()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | int | None = None) -> None:
    """Configure the root ``agbp`` logger once; later calls only change the level."""
    root = logging.getLogger("agbp")
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
    root.setLevel(level if level is not None else settings.log_level.upper())


def get_logger(name: str) -> logging.Logger:
    if not name.startswith("agbp"):
        name = f"agbp.{name}"
    return logging.getLogger(name)
