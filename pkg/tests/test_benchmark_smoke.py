import pathlib
import subprocess
import sys

SCRIPT = pathlib.Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs_and_backends_agree():
    # the script asserts agreement between backends itself
    proc = subprocess.run([sys.executable, str(SCRIPT), "--points", "2000", "--repeat", "1"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "transport 64x128" in proc.stdout
