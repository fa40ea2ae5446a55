#!/usr/bin/env python3
"""
Smoke tests for a freespec checkout: imports, settings, ledger database and
numerical stack.  Runs under pytest or directly as a script.
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))


def test_imports():
    """Test if all modules can be imported"""
    print("Testing imports...")

    from config import settings  # noqa: F401
    from db.models import RunRecord, RunStatus, SolverLog  # noqa: F401
    from services import compression, convolution, ensembles, moments, perturbation, storage, transforms  # noqa: F401
    from services.monitoring import monitoring_service  # noqa: F401
    import main  # noqa: F401

    print("✅ All modules imported successfully")


def test_configuration():
    """Test configuration"""
    print("\nTesting configuration...")

    from config import settings

    assert 0 < settings.fp_damping <= 1
    assert settings.fp_tol > 0
    assert settings.eps_closed_form > 0 and settings.eps_solved > 0
    assert settings.block_size >= 1
    assert 0 <= settings.nonconvergence_budget < 1

    print(f"✅ Database URL: {settings.database_url}")
    print(f"✅ Fixed point: damping={settings.fp_damping}, tol={settings.fp_tol}, max_iter={settings.fp_max_iter}")


def test_database():
    """Test database connection"""
    print("\nTesting database...")

    from db import database
    from sqlalchemy import inspect, text

    with database.engine.connect() as connection:
        connection.execute(text("SELECT 1"))
    print("✅ Database connection successful")

    database.create_tables()
    tables = set(inspect(database.engine).get_table_names())
    assert {"runs", "solver_logs"} <= tables
    print("✅ Database tables created/verified")

    from db.models import RunRecord

    try:
        with database.get_db() as db:
            db.add(RunRecord(command="rollback-check", canonical_flags="rollback-check"))
            db.flush()
            raise RuntimeError("abort")
    except RuntimeError:
        pass
    with database.get_db() as db:
        assert db.query(RunRecord).filter_by(command="rollback-check").count() == 0
    print("✅ Ledger session rolls back on error")


def test_services():
    """Test the monitoring service"""
    print("\nTesting services...")

    from db import database
    from db.models import RunRecord
    from services.monitoring import monitoring_service

    health = monitoring_service.check_system_health()
    assert health["checks"]["lapack"] == "ok"
    assert health["checks"]["database"] == "ok"
    print(f"✅ Health: {health['status']}")

    monitoring_service.record_solver_metrics("smoke", 0.5, 10, iterations=40, failed=1)
    summary = monitoring_service.get_performance_summary()["smoke"]
    assert summary["average_iterations"] == 4.0
    assert summary["failed_points"] == 1

    monitoring_service.record_run("invert", "invert --grid=0:1:5", 2 ** 64 - 1, "success", 0, 0.1)
    with database.get_db() as db:
        record = db.query(RunRecord).order_by(RunRecord.id.desc()).first()
    assert record.seed == str(2 ** 64 - 1)
    assert record.canonical_flags == "invert --grid=0:1:5"
    print("✅ Run ledger writable")


def main():
    """Run all tests"""
    print("🧪 Running freespec setup tests...")
    print("=" * 60)

    tests = [
        ("Import Test", test_imports),
        ("Configuration Test", test_configuration),
        ("Database Test", test_database),
        ("Services Test", test_services),
    ]

    passed = 0
    failed = 0

    for test_name, test_func in tests:
        print(f"\n🔍 Running {test_name}...")
        try:
            test_func()
            passed += 1
            print(f"✅ {test_name} PASSED")
        except Exception as e:
            failed += 1
            print(f"❌ {test_name} FAILED with exception: {e!r}")

    print("\n" + "=" * 60)
    print(f"🧪 Test Results: {passed} passed, {failed} failed")

    if failed == 0:
        print("🎉 All tests passed! Your setup is ready.")
        print("\nNext steps:")
        print("1. Adjust solver settings in .env if needed")
        print("2. Run: python run.py --preflight-only")
        print("3. Try: python main.py invert --measure semicircle.json --grid -2.5:2.5:201")
    else:
        print("⚠️  Some tests failed. Please check the errors above.")
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
