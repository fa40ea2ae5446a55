import logging
import threading
from typing import Any, Dict, Optional

import numpy as np
import scipy
from sqlalchemy import text

from config import settings

logger = logging.getLogger(__name__)


class MonitoringService:
    """Solver metrics, health checks and run-ledger writes"""

    def __init__(self):
        self.metrics = {}
        self._lock = threading.Lock()

    def record_solver_metrics(self, step: str, duration: float, points: int,
                              iterations: int = 0, failed: int = 0, clamps: int = 0) -> None:
        """Record metrics for one grid evaluation or solver batch"""
        with self._lock:
            if step not in self.metrics:
                self.metrics[step] = {
                    "count": 0,
                    "total_duration": 0.0,
                    "total_points": 0,
                    "total_iterations": 0,
                    "total_failed": 0,
                    "total_clamps": 0,
                }
            data = self.metrics[step]
            data["count"] += 1
            data["total_duration"] += duration
            data["total_points"] += points
            data["total_iterations"] += iterations
            data["total_failed"] += failed
            data["total_clamps"] += clamps

        logger.info(f"Metrics - {step}: {duration:.2f}s, {points} points, {iterations} iterations, "
                    f"{failed} failed, {clamps} clamps")

    def get_performance_summary(self) -> Dict[str, Any]:
        summary = {}
        with self._lock:
            for step, data in self.metrics.items():
                if data["count"] > 0:
                    points = max(data["total_points"], 1)
                    summary[step] = {
                        "average_duration": data["total_duration"] / data["count"],
                        "average_iterations": data["total_iterations"] / points,
                        "failed_points": data["total_failed"],
                        "clamps": data["total_clamps"],
                        "total_executions": data["count"],
                    }
        return summary

    def reset(self) -> None:
        with self._lock:
            self.metrics = {}

    def check_system_health(self) -> Dict[str, Any]:
        """Check the ledger database and the numerical stack"""
        health = {
            "status": "healthy",
            "checks": {}
        }

        try:
            from db.database import engine
            with engine.connect() as connection:
                connection.execute(text("SELECT 1"))
            health["checks"]["database"] = "ok"
        except Exception as e:
            health["checks"]["database"] = f"error: {str(e)}"
            health["status"] = "degraded"

        try:
            from scipy.linalg import eigvalsh_tridiagonal
            values = eigvalsh_tridiagonal(np.zeros(3), np.ones(2))
            expected = np.array([-np.sqrt(2.0), 0.0, np.sqrt(2.0)])
            if np.max(np.abs(values - expected)) > 1e-12:
                raise RuntimeError(f"unexpected eigenvalues {values}")
            health["checks"]["lapack"] = "ok"
        except Exception as e:
            health["checks"]["lapack"] = f"error: {str(e)}"
            health["status"] = "unhealthy"

        health["checks"]["numpy"] = np.__version__
        health["checks"]["scipy"] = scipy.__version__
        return health

    def log_solver(self, operation: str, status: str, message: str,
                   details: Optional[Dict] = None, iterations: int = 0, duration: float = 0.0) -> None:
        """Write a solver/acceptance entry to the ledger"""
        if not settings.record_runs:
            return
        from db.database import create_tables, get_db
        from db.models import SolverLog

        try:
            create_tables()
            with get_db() as db:
                db.add(SolverLog(
                    operation=operation,
                    status=status,
                    message=message,
                    details=details or {},
                    iterations=iterations,
                    duration_seconds=duration,
                ))
                db.commit()
        except Exception as e:
            logger.error(f"Error logging solver operation: {e}")

    def record_run(self, command: str, canonical_flags: str, seed: Optional[int], status: str,
                   exit_code: int, duration: float, details: Optional[Dict] = None) -> None:
        """Write one CLI invocation to the ledger"""
        if not settings.record_runs:
            return
        from db.database import create_tables, get_db
        from db.models import RunRecord

        try:
            create_tables()
            with get_db() as db:
                db.add(RunRecord(
                    command=command,
                    canonical_flags=canonical_flags,
                    seed=None if seed is None else str(seed),
                    status=status,
                    exit_code=exit_code,
                    duration_seconds=duration,
                    details=details or {},
                ))
                db.commit()
        except Exception as e:
            logger.error(f"Error recording run: {e}")


monitoring_service = MonitoringService()
