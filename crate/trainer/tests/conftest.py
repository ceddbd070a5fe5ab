import os
import subprocess
import sys
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO / "trainer" / "src"))


def engine():
    """Path of the `obliv1d` binary, or None when it has not been built."""
    env = os.environ.get("OBLIV1D_BIN")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        p = REPO / "target" / profile / "obliv1d"
        if p.exists():
            return p
    return None


@pytest.fixture
def obliv1d():
    exe = engine()
    if exe is None:
        pytest.skip("obliv1d binary not built")

    def run(*args):
        return subprocess.run([str(exe), *map(str, args)], capture_output=True, text=True)

    return run


@pytest.fixture
def repo():
    return REPO
