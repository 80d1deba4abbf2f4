"""
Config loader for the Aalen FIC toolkit.
Loads and validates the YAML configuration file.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import yaml


@dataclass
class Config:
    """Numeric and workflow settings shared by the CLI and the libraries."""
    rcond_threshold: float = 1e-12
    quad_abstol: float = 1e-10
    quad_reltol: float = 1e-10
    quad_limit: int = 200
    max_all_candidates_r: int = 12
    default_reps: int = 200
    max_singular_fraction: float = 0.5
    workers: int = 1
    output_dir: str = "output"
    db_path: str = "data/runs.db"

    def quad_options(self) -> dict:
        """Keyword arguments accepted by the oracle integrators."""
        return {
            "abstol": self.quad_abstol,
            "reltol": self.quad_reltol,
            "limit": self.quad_limit,
        }


def get_project_root() -> Path:
    return Path(__file__).parent.parent


def resolve_path(path: str | Path) -> str:
    """Anchor a relative settings path at the project root."""
    path = Path(path).expanduser()
    if not path.is_absolute():
        path = get_project_root() / path
    return str(path)


def load_config(config_path: str | Path | None = None) -> Config:
    """
    Load configuration from a YAML file.

    Args:
        config_path: Path to config.yaml. Defaults to config/config.yaml
                     relative to the project root.

    Returns:
        Config object with all settings.

    Raises:
        FileNotFoundError: If config file doesn't exist.
        ValueError: If config is invalid.
    """
    if config_path is None:
        config_path = get_project_root() / "config" / "config.yaml"
    else:
        config_path = Path(config_path)

    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    with open(config_path, "r") as f:
        raw = yaml.safe_load(f)

    return parse_config(raw)


def parse_config(raw: dict) -> Config:
    """Parse raw YAML dict into a Config object."""
    if not raw:
        raise ValueError("Config file is empty")

    numerics = raw.get("numerics", {}) or {}
    selection = raw.get("selection", {}) or {}
    simulation = raw.get("simulation", {}) or {}
    settings = raw.get("settings", {}) or {}

    config = Config(
        rcond_threshold=float(numerics.get("rcond_threshold", 1e-12)),
        quad_abstol=float(numerics.get("quad_abstol", 1e-10)),
        quad_reltol=float(numerics.get("quad_reltol", 1e-10)),
        quad_limit=int(numerics.get("quad_limit", 200)),
        max_all_candidates_r=int(selection.get("max_all_candidates_r", 12)),
        default_reps=int(simulation.get("default_reps", 200)),
        max_singular_fraction=float(simulation.get("max_singular_fraction", 0.5)),
        workers=int(os.getenv("FIC_WORKERS") or simulation.get("workers", 1)),
        output_dir=resolve_path(os.getenv("FIC_OUTPUT_DIR") or settings.get("output_dir", "output")),
        db_path=resolve_path(os.getenv("FIC_DB_PATH") or settings.get("db_path", "data/runs.db")),
    )

    if not 0.0 < config.rcond_threshold < 1.0:
        raise ValueError("numerics.rcond_threshold must lie in (0, 1)")
    if config.quad_abstol <= 0 or config.quad_reltol < 0:
        raise ValueError("Quadrature tolerances must be positive")
    if config.quad_limit < 1:
        raise ValueError("numerics.quad_limit must be at least 1")
    if config.max_all_candidates_r < 1:
        raise ValueError("selection.max_all_candidates_r must be at least 1")
    if not 0.0 <= config.max_singular_fraction <= 1.0:
        raise ValueError("simulation.max_singular_fraction must lie in [0, 1]")
    if config.workers < 1:
        raise ValueError("simulation.workers must be at least 1")

    return config


if __name__ == "__main__":
    # Quick test
    config = load_config()
    print(f"rcond threshold: {config.rcond_threshold}")
    print(f"Quadrature: {config.quad_options()}")
    print(f"Output directory: {config.output_dir}")
