import numpy as np
import pytest

from decprony.bounds import random_signal, separation
from decprony.model import CONFLUENT, POLYNOMIAL


def random_regular(rng, kind, max_nodes=3, max_mult=3, min_delta=0.2, max_t=20, max_p=50):
    """Random signal plus a grid start and step at which it is regular."""
    while True:
        s = random_signal(rng, kind, max_nodes, max_mult, min_delta, 0.1, 0.5)
        t = int(rng.integers(0, max_t + 1))
        p = int(rng.integers(1, max_p + 1))
        if separation(s.nodes, p)[1] > 1e-3:
            return s, t, p


def disk_nodes(rng, K, min_delta):
    """K points in the closed unit disk with pairwise distance at least min_delta."""
    while True:
        r = np.sqrt(rng.uniform(0, 1, K))
        z = r * np.exp(2j * np.pi * rng.uniform(0, 1, K))
        if K == 1 or separation(z)[0] >= min_delta:
            return z


def scalar_polynomial(nodes, coeffs, indices):
    """Direct loop over the definition, no numpy broadcasting."""
    out = []
    for k in indices:
        total = 0j
        for z, a in zip(nodes, coeffs):
            amp = 0j
            for ell, c in enumerate(a):
                amp += complex(c) * (1 if ell == 0 else k**ell)
            total += amp * complex(z) ** k
        out.append(total)
    return np.array(out)


def scalar_confluent(nodes, coeffs, indices):
    out = []
    for k in indices:
        total = 0j
        for z, a in zip(nodes, coeffs):
            for ell, c in enumerate(a):
                ff = 1
                for i in range(ell):
                    ff *= k - i
                if ff:
                    total += complex(c) * ff * complex(z) ** (k - ell)
        out.append(total)
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


KINDS_WITH_MULT = [POLYNOMIAL, CONFLUENT]


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record a one-line verdict for the acceptance summary printed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
