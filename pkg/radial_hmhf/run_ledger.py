"""
SQLite ledger of CLI runs and the artifacts they wrote.

Two tables: `runs` (one row per command invocation) and `artifacts` (files
written by a run, with their checksums).
"""

import datetime
import json
import logging
import sqlite3
import uuid
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunLedger:
    """Run history store backed by a single sqlite file."""

    def __init__(self, db_path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._init_database()

    def _init_database(self):
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    command TEXT NOT NULL,
                    started_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    finished_at TIMESTAMP,
                    status TEXT DEFAULT 'running',
                    exit_code INTEGER,
                    arguments TEXT DEFAULT '{}',
                    summary TEXT DEFAULT '{}'
                )
            """)
            conn.execute("""
                CREATE TABLE IF NOT EXISTS artifacts (
                    artifact_id TEXT PRIMARY KEY,
                    run_id TEXT NOT NULL,
                    kind TEXT NOT NULL,
                    path TEXT NOT NULL,
                    checksum TEXT,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                    FOREIGN KEY (run_id) REFERENCES runs (run_id)
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command)")
            conn.execute("CREATE INDEX IF NOT EXISTS idx_runs_started ON runs(started_at)")
            conn.execute("CREATE INDEX IF NOT EXISTS idx_artifacts_run_id ON artifacts(run_id)")
            conn.commit()

    # ===== RUNS =====

    def start_run(self, command: str, arguments: Optional[Dict[str, Any]] = None) -> str:
        run_id = str(uuid.uuid4())
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                "INSERT INTO runs (run_id, command, started_at, arguments) VALUES (?, ?, ?, ?)",
                (run_id, command, _now(), json.dumps(arguments or {}, default=str, sort_keys=True)),
            )
            conn.commit()
        logger.info(f"Started run {run_id} ({command})")
        return run_id

    def finish_run(self, run_id: str, status: str, exit_code: int, summary: Optional[Dict[str, Any]] = None):
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute(
                "UPDATE runs SET finished_at = ?, status = ?, exit_code = ?, summary = ? WHERE run_id = ?",
                (_now(), status, exit_code, json.dumps(summary or {}, default=str, sort_keys=True), run_id),
            )
            conn.commit()
        if cursor.rowcount == 0:
            logger.warning(f"finish_run: unknown run {run_id}")
        else:
            logger.info(f"Finished run {run_id}: {status} (exit {exit_code})")

    def record_artifact(self, run_id: str, kind: str, path, checksum: Optional[str] = None) -> str:
        artifact_id = f"{run_id}_{kind}_{uuid.uuid4().hex[:8]}"
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                "INSERT INTO artifacts (artifact_id, run_id, kind, path, checksum, created_at) VALUES (?, ?, ?, ?, ?, ?)",
                (artifact_id, run_id, kind, str(path), checksum, _now()),
            )
            conn.commit()
        return artifact_id

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            row = conn.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,)).fetchone()
            if row is None:
                return None
            run = _decode_run(row)
            cursor = conn.execute(
                "SELECT kind, path, checksum, created_at FROM artifacts WHERE run_id = ? ORDER BY created_at",
                (run_id,),
            )
            run["artifacts"] = [dict(a) for a in cursor.fetchall()]
            return run

    def list_runs(self, limit: int = 20, command: Optional[str] = None) -> List[Dict[str, Any]]:
        """Most recent runs first."""
        query = "SELECT * FROM runs"
        params: List[Any] = []
        if command:
            query += " WHERE command = ?"
            params.append(command)
        query += " ORDER BY started_at DESC, rowid DESC LIMIT ?"
        params.append(limit)
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            return [_decode_run(row) for row in conn.execute(query, params).fetchall()]

    def cleanup_old_runs(self, days: int = 30) -> int:
        cutoff = (datetime.datetime.now() - datetime.timedelta(days=days)).isoformat(sep=" ")
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                "DELETE FROM artifacts WHERE run_id IN (SELECT run_id FROM runs WHERE started_at < ?)", (cutoff,)
            )
            removed = conn.execute("DELETE FROM runs WHERE started_at < ?", (cutoff,)).rowcount
            conn.commit()
        logger.info(f"Removed {removed} runs older than {days} days")
        return removed


def _now() -> str:
    return datetime.datetime.now().isoformat(sep=" ", timespec="microseconds")


def _decode_run(row: sqlite3.Row) -> Dict[str, Any]:
    run = dict(row)
    for key in ("arguments", "summary"):
        try:
            run[key] = json.loads(run[key]) if run[key] else {}
        except (TypeError, ValueError):
            run[key] = {}
    return run


# Global run ledger instance
_run_ledger: Optional[RunLedger] = None


def get_run_ledger(db_path=None) -> RunLedger:
    """Get the global run ledger, created on first use at the configured path."""
    global _run_ledger
    if db_path is not None:
        if _run_ledger is None or Path(db_path) != _run_ledger.db_path:
            _run_ledger = RunLedger(db_path)
        return _run_ledger
    if _run_ledger is None:
        from .config import get_settings

        _run_ledger = RunLedger(get_settings().ledger_db)
    return _run_ledger
