import os
import logging
from dotenv import load_dotenv
from typing import Optional

logger = logging.getLogger(__name__)

# Load environment variables from .env file if it exists
dotenv_path = os.path.join(os.path.dirname(__file__), '..', '.env')
if os.path.exists(dotenv_path):
    load_dotenv(dotenv_path)
    logger.info(".env file loaded.")
else:
    logger.debug(".env file not found. Relying on environment variables.")

_TRUE_VALUES = {"1", "true", "yes", "on"}


class AppConfig:
    """
    Holds process-wide runtime configuration.

    Per-run parameters (render settings, training schedule, camera files) live in the
    pydantic models under ``particle_tracer.models``; this class only covers what the
    environment decides: logging, worker count, determinism and the default seed.
    """
    def __init__(self):
        self.log_level: str = os.getenv("PTRACE_LOG_LEVEL", "INFO").upper()
        self.log_dir: str = os.getenv("PTRACE_LOG_DIR", "logs")
        self.threads: int = self._read_int("PTRACE_THREADS", os.cpu_count() or 1)
        self.deterministic: bool = os.getenv("PTRACE_DETERMINISTIC", "false").lower() in _TRUE_VALUES
        self.seed: int = self._read_int("PTRACE_SEED", 0)

        self._validate() # Basic validation on initialization

    @staticmethod
    def _read_int(name: str, default: int) -> int:
        raw: Optional[str] = os.getenv(name)
        if raw is None or raw == "":
            return default
        try:
            return int(raw)
        except ValueError:
            logger.warning(f"{name}={raw!r} is not an integer, using {default}.")
            return default

    def _validate(self):
        """
        Basic validation; unusable values fall back to defaults with a warning.
        """
        if logging.getLevelName(self.log_level) == f"Level {self.log_level}":
            logger.warning(f"Unknown PTRACE_LOG_LEVEL {self.log_level!r}, using INFO.")
            self.log_level = "INFO"
        if self.threads < 1:
            logger.warning(f"PTRACE_THREADS must be >= 1, got {self.threads}. Using 1.")
            self.threads = 1
        if self.seed < 0:
            logger.warning(f"PTRACE_SEED must be non-negative, got {self.seed}. Using 0.")
            self.seed = 0

    @property
    def log_file(self) -> str:
        return os.path.join(self.log_dir, "particle_tracer.log")

    def __repr__(self) -> str:
        """
        String representation of the configuration.
        Returns:
            str: The string representation of the configuration.
        """
        return (f"AppConfig(LogLevel: {self.log_level}, LogDir: {self.log_dir}, "
                f"Threads: {self.threads}, Deterministic: {self.deterministic}, Seed: {self.seed})")

# Create a single instance for the application to use
app_config = AppConfig()
