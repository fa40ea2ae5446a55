#!/usr/bin/env python3
"""
freespec - Pre-flight and Acceptance Script

Checks the numerical stack and the run ledger, then runs the acceptance
suite (all checks, or the ones named with --only).
"""

import argparse
import os
import sys
import logging
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from config import settings


def setup_logging():
    """Setup logging configuration"""
    logging.basicConfig(
        level=getattr(logging, settings.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler('logs/freespec.log') if os.path.exists('logs') else logging.NullHandler()
        ]
    )


def check_dependencies():
    """Check if all required dependencies are installed"""
    required_packages = ['numpy', 'scipy', 'sqlalchemy', 'pydantic', 'pydantic_settings', 'dotenv']

    missing_packages = []

    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"❌ Missing required packages: {', '.join(missing_packages)}")
        print("Please run: pip install -r requirements.txt")
        return False

    print("✅ All required packages are installed")
    return True


def check_configuration():
    """Check that solver settings are usable"""
    problems = []
    if not 0 < settings.fp_damping <= 1:
        problems.append(f"FREESPEC_FP_DAMPING={settings.fp_damping} (expected 0 < d <= 1)")
    if settings.fp_tol <= 0:
        problems.append(f"FREESPEC_FP_TOL={settings.fp_tol} (expected > 0)")
    if settings.eps_closed_form <= 0 or settings.eps_solved <= 0:
        problems.append("FREESPEC_EPS_* must be positive")
    if settings.block_size < 1 or settings.threads < 1:
        problems.append("FREESPEC_BLOCK_SIZE and FREESPEC_THREADS must be >= 1")

    if problems:
        print(f"❌ Invalid configuration: {'; '.join(problems)}")
        print("Please fix these in your .env file")
        return False

    print("✅ Configuration check passed")
    return True


def create_directories():
    """Create necessary directories"""
    for directory in ['logs', 'data']:
        os.makedirs(directory, exist_ok=True)

    print("✅ Directories created/verified")


def check_ledger():
    """Create the run ledger tables and make sure they accept a query"""
    from db.database import create_tables
    from services.monitoring import monitoring_service

    try:
        create_tables()
    except Exception as e:
        print(f"❌ Could not create ledger tables: {e}")
        print("Please check your FREESPEC_DATABASE_URL configuration, or set FREESPEC_RECORD_RUNS=false")
        return False

    status = monitoring_service.check_system_health()["checks"]["database"]
    if status != "ok":
        print(f"❌ Ledger database unreachable: {status}")
        return False
    print(f"✅ Run ledger ready at {settings.database_url}")
    return True


def check_numerical_stack():
    """LAPACK smoke eigensolve and library versions"""
    from services.monitoring import monitoring_service

    health = monitoring_service.check_system_health()
    if health["checks"].get("lapack") != "ok":
        print(f"❌ Numerical stack check failed: {health['checks'].get('lapack')}")
        return False
    print(f"✅ numpy {health['checks']['numpy']}, scipy {health['checks']['scipy']}")
    return True


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Pre-flight checks and acceptance suite")
    parser.add_argument("--only", nargs="+", default=None, help="Acceptance checks to run, e.g. AC-1 AC-6")
    parser.add_argument("--realizations", type=int, default=None,
                        help="Monte Carlo realizations (default FREESPEC_CI_REALIZATIONS)")
    parser.add_argument("--threads", type=int, default=None, help="Worker count")
    parser.add_argument("--preflight-only", action="store_true", help="Skip the acceptance suite")
    return parser.parse_args(argv)


def main(argv=None):
    """Main startup function"""
    args = parse_args(argv)
    print("🚀 Starting freespec checks...")
    print("=" * 50)

    create_directories()
    setup_logging()
    logger = logging.getLogger(__name__)

    # Pre-flight checks
    checks = [
        ("Dependencies", check_dependencies),
        ("Configuration", check_configuration),
        ("Run Ledger", check_ledger),
        ("Numerical Stack", check_numerical_stack),
    ]

    failed_checks = []

    for check_name, check_func in checks:
        print(f"\n🔍 Checking {check_name}...")
        try:
            if not check_func():
                failed_checks.append(check_name)
        except Exception as e:
            print(f"❌ {check_name} check failed with error: {e}")
            failed_checks.append(check_name)

    if failed_checks:
        print(f"\n❌ Pre-flight failed. Failed checks: {', '.join(failed_checks)}")
        print("\nPlease fix the issues above and try again.")
        sys.exit(1)

    print("\n✅ All pre-flight checks passed!")
    if args.preflight_only:
        return

    print("=" * 50)
    try:
        from services.acceptance import AcceptanceRunner

        runner = AcceptanceRunner(realizations=args.realizations, threads=args.threads)
        unknown = [name for name in args.only or [] if name not in runner.checks]
        if unknown:
            print(f"❌ Unknown acceptance checks: {', '.join(unknown)}")
            sys.exit(1)
        summary = runner.run(args.only)
    except KeyboardInterrupt:
        print("\n👋 Acceptance run stopped by user")
        sys.exit(1)
    except Exception as e:
        logger.error(f"Acceptance run failed: {e}")
        sys.exit(1)

    for result in summary["results"]:
        mark = "✅" if result["success"] else "❌"
        if "error" in result:
            print(f"{mark} {result['criterion']}: error: {result['error']}")
        else:
            print(f"{mark} {result['criterion']}: {result['value']:.3e} (threshold {result['threshold']:.3e}, "
                  f"{result['processing_time']:.1f}s)")

    print(f"\n{summary['passed']} passed, {summary['failed']} failed")
    if summary["failed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
