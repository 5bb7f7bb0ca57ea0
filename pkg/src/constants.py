"""
Constants and environment variable configuration for Pinning Lab.
Centralized place for all environment variables and numerical defaults.
"""
import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Configuration class to manage all environment variables and constants."""

    def __init__(self):
        """Initialize configuration by reading environment variables."""
        self._load_config()

    def _load_config(self):
        """Load all configuration values from environment variables."""
        # Inter-arrival law construction
        self.NORM_CUTOFF: int = int(os.getenv("PINNING_NORM_CUTOFF", "1000000"))
        self.TABLE_SIZE: int = int(os.getenv("PINNING_TABLE_SIZE", "100000"))
        self.NORM_TOL: float = float(os.getenv("PINNING_NORM_TOL", "1e-8"))
        self.TAIL_BLOCK_RATIO: float = float(os.getenv("PINNING_TAIL_BLOCK_RATIO", "1.0001"))
        self.TAIL_HORIZON: float = float(os.getenv("PINNING_TAIL_HORIZON", "4e15"))

        # Resource caps
        self.K_CAP: int = int(os.getenv("PINNING_K_CAP", "20000"))
        self.J_MAX: int = int(os.getenv("PINNING_J_MAX", "20"))

        # Statistics and disorder
        self.CONFIDENCE: float = float(os.getenv("PINNING_CONFIDENCE", "0.99"))
        self.BETA0: float = float(os.getenv("PINNING_BETA0", "1.0"))

        # Execution
        self.WORKERS: int = int(os.getenv("PINNING_WORKERS", "1"))
        self.CHUNK_SIZE: int = int(os.getenv("PINNING_CHUNK_SIZE", "64"))
        self.BISECTION_STEPS: int = int(os.getenv("PINNING_BISECTION_STEPS", "8"))

        # Paths
        self.OUTPUT_ROOT: str = os.getenv("PINNING_OUTPUT_ROOT", os.path.join(os.getcwd(), "runs"))
        self.CACHE_DIR: str = os.getenv(
            "PINNING_CACHE_DIR",
            os.path.join(os.getcwd(), ".pinning_cache")
        )

        # Application Configuration
        self.APP_NAME: str = "Pinning Lab"
        self.APP_VERSION: str = "0.1.0"

        # Logging Configuration
        self.LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    def validate(self) -> list[str]:
        """
        Validate the numerical configuration.
        Returns a list of problems; empty when the configuration is usable.
        """
        problems = []

        if self.TABLE_SIZE < 1000:
            problems.append(f"PINNING_TABLE_SIZE must be at least 1000, got {self.TABLE_SIZE}")
        if self.NORM_CUTOFF < self.TABLE_SIZE:
            problems.append("PINNING_NORM_CUTOFF must not be smaller than PINNING_TABLE_SIZE")
        if self.NORM_TOL <= 0:
            problems.append("PINNING_NORM_TOL must be positive")
        if self.TAIL_BLOCK_RATIO <= 1:
            problems.append("PINNING_TAIL_BLOCK_RATIO must exceed 1")
        if not 0 < self.CONFIDENCE < 1:
            problems.append(f"PINNING_CONFIDENCE must lie in (0, 1), got {self.CONFIDENCE}")
        if self.BETA0 <= 0:
            problems.append("PINNING_BETA0 must be positive")
        if self.K_CAP < 1 or self.J_MAX < 1:
            problems.append("PINNING_K_CAP and PINNING_J_MAX must be positive")
        if self.WORKERS < 1 or self.CHUNK_SIZE < 1:
            problems.append("PINNING_WORKERS and PINNING_CHUNK_SIZE must be positive")
        if self.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            problems.append(f"LOG_LEVEL not recognised: {self.LOG_LEVEL}")

        return problems

    def print_config(self) -> None:
        """Print current configuration."""
        print(f"=== {self.APP_NAME} Configuration ===")
        print(f"Normalization cutoff: {self.NORM_CUTOFF}")
        print(f"Table size (N_max): {self.TABLE_SIZE}")
        print(f"Normalization tolerance: {self.NORM_TOL}")
        print(f"Tail block ratio: {self.TAIL_BLOCK_RATIO}")
        print(f"k cap: {self.K_CAP}")
        print(f"Exhaustive j_max: {self.J_MAX}")
        print(f"Confidence: {self.CONFIDENCE}")
        print(f"beta0: {self.BETA0}")
        print(f"Workers / chunk size: {self.WORKERS} / {self.CHUNK_SIZE}")
        print(f"Output root: {self.OUTPUT_ROOT}")
        print(f"Cache dir: {self.CACHE_DIR}")
        print(f"Log Level: {self.LOG_LEVEL}")

        problems = self.validate()
        if problems:
            print(f"\n⚠️  Configuration problems: {problems}")
        else:
            print("\n✅ Configuration is valid")


# Create a singleton instance for easy import
config = Config()

__all__ = [
    "Config",
    "config",
]
