# file: app/db/registry.py
import logging
import sqlite3
import time
from typing import List, Optional

from app.core.config import settings
from app.schemas.models import RunRecord

log = logging.getLogger("dgdlab.db")


def initialize_registry():
    """
    Creates the run registry table if it does not exist.
    This function is idempotent.
    """
    log.info(f"Initializing run registry at: {settings.REGISTRY_DB_PATH}")
    try:
        with sqlite3.connect(settings.REGISTRY_DB_PATH) as conn:
            cursor = conn.cursor()
            cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                name TEXT NOT NULL,
                config_json TEXT NOT NULL,
                status TEXT NOT NULL, -- completed | nonfinite | audit_failed | invalid | error
                exit_code INTEGER NOT NULL,
                iterations INTEGER NOT NULL DEFAULT 0,
                trace_path TEXT,
                audit_path TEXT,
                audit_passed BOOLEAN,
                created_ts INTEGER
            )
            """)
            conn.commit()
        log.info("Run registry initialized successfully.")
    except sqlite3.Error as e:
        log.error(f"Database error during initialization: {e}")
        raise


def get_db_connection():
    """Provides a connection to the registry database."""
    conn = sqlite3.connect(settings.REGISTRY_DB_PATH)
    conn.row_factory = sqlite3.Row
    return conn


def record_run(
    name: str,
    config_json: str,
    status: str,
    exit_code: int,
    iterations: int,
    trace_path: Optional[str],
    audit_path: Optional[str],
    audit_passed: Optional[bool],
) -> int:
    initialize_registry()
    conn = get_db_connection()
    try:
        with conn:
            cursor = conn.execute(
                "INSERT INTO runs (name, config_json, status, exit_code, iterations, trace_path, audit_path, audit_passed, created_ts) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (name, config_json, status, exit_code, iterations, trace_path, audit_path, audit_passed, int(time.time())),
            )
        log.info(f"Recorded run '{name}' (status={status}, exit_code={exit_code}) as id {cursor.lastrowid}.")
        return int(cursor.lastrowid)
    finally:
        conn.close()


def list_runs(limit: int = 50) -> List[RunRecord]:
    initialize_registry()
    conn = get_db_connection()
    try:
        rows = conn.execute(
            "SELECT id, name, status, exit_code, iterations, audit_passed, trace_path, created_ts "
            "FROM runs ORDER BY id DESC LIMIT ?",
            (limit,),
        ).fetchall()
        return [
            RunRecord(
                id=row["id"],
                name=row["name"],
                status=row["status"],
                exit_code=row["exit_code"],
                iterations=row["iterations"],
                audit_passed=None if row["audit_passed"] is None else bool(row["audit_passed"]),
                trace_path=row["trace_path"],
                created_ts=row["created_ts"],
            )
            for row in rows
        ]
    finally:
        conn.close()
