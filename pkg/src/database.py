"""
SQLite run log: one row per CLI invocation with its manifest and timing.
"""

import json
import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from . import __version__


def get_default_db_path() -> Path:
    """Get the default database path."""
    return Path(__file__).parent.parent / "data" / "runs.db"


@dataclass
class RunManifest:
    """What produced an output file: command, inputs, seed and tool version."""
    command: str
    config_paths: list[str] = field(default_factory=list)
    seed: Optional[int] = None
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_clock: Optional[float] = None

    def header_lines(self) -> list[str]:
        """
        Manifest lines for embedding in output files. Wall-clock time is left
        out so identical runs produce identical files.
        """
        lines = [
            f"command: {self.command}",
            f"version: {self.version}",
        ]
        if self.config_paths:
            lines.append(f"config: {', '.join(self.config_paths)}")
        if self.seed is not None:
            lines.append(f"seed: {self.seed}")
        if self.outputs:
            lines.append(f"outputs: {', '.join(self.outputs)}")
        return lines

    def to_dict(self) -> dict:
        """Deterministic manifest fields for JSON artifacts."""
        return {
            "command": self.command,
            "config_paths": self.config_paths,
            "seed": self.seed,
            "version": self.version,
            "outputs": self.outputs,
        }


@dataclass
class RunRecord:
    """Record of a logged run."""
    id: int
    run_date: str
    command: str
    exit_code: int
    wall_clock: Optional[float]
    manifest: dict


class RunDatabase:
    """SQLite database for storing and querying run manifests."""

    def __init__(self, db_path: str | Path | None = None):
        """
        Initialize the database connection.

        Args:
            db_path: Path to SQLite database file. Defaults to data/runs.db.
        """
        if db_path is None:
            db_path = get_default_db_path()
        self.db_path = Path(db_path)

        # Ensure data directory exists
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self._init_schema()

    @contextmanager
    def _get_conn(self):
        """Get a database connection with row factory."""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
            conn.commit()
        finally:
            conn.close()

    def _init_schema(self):
        with self._get_conn() as conn:
            conn.executescript("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_date TEXT NOT NULL,
                    command TEXT NOT NULL,
                    exit_code INTEGER NOT NULL,
                    wall_clock REAL,
                    seed INTEGER,
                    version TEXT,
                    manifest TEXT
                );

                CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);
                CREATE INDEX IF NOT EXISTS idx_runs_date ON runs(run_date);
            """)

    def record_run(self, manifest: RunManifest, exit_code: int = 0) -> int:
        """
        Record a run.

        Returns:
            The ID of the new run record.
        """
        with self._get_conn() as conn:
            cursor = conn.execute("""
                INSERT INTO runs (run_date, command, exit_code, wall_clock, seed, version, manifest)
                VALUES (?, ?, ?, ?, ?, ?, ?)
            """, (
                datetime.now().isoformat(),
                manifest.command,
                exit_code,
                manifest.wall_clock,
                manifest.seed,
                manifest.version,
                json.dumps(manifest.to_dict()),
            ))
            return cursor.lastrowid

    def get_runs(self, limit: int = 10, command: Optional[str] = None) -> list[RunRecord]:
        """Most recent runs first, optionally for one command."""
        with self._get_conn() as conn:
            if command:
                cursor = conn.execute(
                    "SELECT * FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?",
                    (command, limit),
                )
            else:
                cursor = conn.execute("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))
            return [
                RunRecord(
                    id=row["id"],
                    run_date=row["run_date"],
                    command=row["command"],
                    exit_code=row["exit_code"],
                    wall_clock=row["wall_clock"],
                    manifest=json.loads(row["manifest"]) if row["manifest"] else {},
                )
                for row in cursor.fetchall()
            ]

    def get_stats(self) -> dict:
        """Get run log statistics."""
        with self._get_conn() as conn:
            stats = {}

            cursor = conn.execute("SELECT COUNT(*) as count FROM runs")
            stats["total_runs"] = cursor.fetchone()["count"]

            cursor = conn.execute(
                "SELECT command, COUNT(*) as count FROM runs GROUP BY command"
            )
            stats["by_command"] = {row["command"]: row["count"] for row in cursor.fetchall()}

            cursor = conn.execute("SELECT COUNT(*) as count FROM runs WHERE exit_code != 0")
            stats["failed_runs"] = cursor.fetchone()["count"]

            return stats
