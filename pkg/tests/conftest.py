import pytest

from mvsketch import _kernels


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    # compile the numba kernels once, up front, so timed tests do not
    # pay for JIT
    _kernels.warmup()


def key(n: int, width: int = 8) -> bytes:
    return n.to_bytes(width, "little")
