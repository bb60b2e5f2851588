import pytest

from trustgate.algorithms import SigAlgorithm, keygen

ALL_ALGORITHMS = list(SigAlgorithm)


@pytest.fixture(scope="session")
def keys():
    """One key pair per algorithm, shared across the session (keygen is slow)."""
    return {alg: keygen(alg) for alg in ALL_ALGORITHMS}


@pytest.fixture(scope="session")
def other_keys():
    """A second, independent pool for wrong-key and rotation cases."""
    return {alg: keygen(alg) for alg in ALL_ALGORITHMS}
