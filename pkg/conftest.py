import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from db.database import bind_engine, create_tables
from services.measures import AnalyticMeasure
from services.monitoring import monitoring_service


@pytest.fixture(scope="session", autouse=True)
def ledger_database(tmp_path_factory):
    """Every test session writes its run ledger to a throwaway SQLite file"""
    path = tmp_path_factory.mktemp("ledger") / "freespec.db"
    engine = bind_engine(f"sqlite:///{path}")
    create_tables()
    yield engine
    engine.dispose()


@pytest.fixture(autouse=True)
def reset_metrics():
    monitoring_service.reset()
    yield


@pytest.fixture
def measure_file(tmp_path):
    """Write a measure to JSON and return the path"""
    def write(measure: AnalyticMeasure, name: str = None) -> str:
        path = tmp_path / f"{name or measure.kind.value}.json"
        path.write_text(measure.to_json())
        return str(path)
    return write


@pytest.fixture
def interior_grid():
    return np.linspace(-1.8, 1.8, 73)
