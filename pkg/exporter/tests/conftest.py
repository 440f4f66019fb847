import shutil
import subprocess

import pytest


def mmtrace_cli(*args):
    """Run the installed mmtrace CLI; returns (exit code, stdout, stderr)."""
    proc = subprocess.run(
        ["mmtrace", *args], capture_output=True, text=True, check=False
    )
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture(scope="session")
def require_mmtrace_cli():
    if shutil.which("mmtrace") is None:
        pytest.skip("the mmtrace CLI is not installed; cannot validate traces")


@pytest.fixture
def media_file(tmp_path):
    path = tmp_path / "picture.bin"
    path.write_bytes(b"not-really-an-image-but-deterministic-bytes")
    return str(path)
