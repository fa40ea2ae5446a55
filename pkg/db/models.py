from datetime import datetime
from enum import Enum
from sqlalchemy import Column, Integer, String, Text, DateTime, Float, JSON
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class RunStatus(str, Enum):
    SUCCESS = "success"
    NONCONVERGED = "nonconverged"
    COMPARE_FAILED = "compare_failed"
    ERROR = "error"


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)

    # Invocation
    command = Column(String, nullable=False)  # invert, convolve, perturb, ...
    canonical_flags = Column(Text, nullable=False)
    seed = Column(String, nullable=True)  # 64-bit unsigned, stored as text

    # Outcome
    status = Column(String, default=RunStatus.SUCCESS)
    exit_code = Column(Integer, default=0)
    details = Column(JSON)  # artifact paths, failed point counts, metrics

    # Performance
    duration_seconds = Column(Float, default=0.0)

    # Timestamps
    created_at = Column(DateTime, default=datetime.utcnow)


class SolverLog(Base):
    __tablename__ = "solver_logs"

    id = Column(Integer, primary_key=True, index=True)

    # Log metadata
    operation = Column(String, nullable=False)  # free_convolve_density, compress_cauchy_fp, acceptance:AC-3, ...
    status = Column(String, nullable=False)  # success, error, warning

    # Details
    message = Column(Text)
    details = Column(JSON)

    # Performance
    iterations = Column(Integer, default=0)
    duration_seconds = Column(Float, default=0.0)

    # Timestamps
    created_at = Column(DateTime, default=datetime.utcnow)
