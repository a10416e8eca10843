import math

import numpy as np
import pytest

from mcdetect.array_model import PointingState, coupled_steering, manifold_basis
from mcdetect.estimator import MMConfig
from mcdetect.scenario import amplitude_for_sinr, build_covariance, draw_snapshots, paper_environment

# verdict lines printed by the acceptance suite, echoed in the terminal summary
VERDICTS = []

U_BAR = math.sin(math.radians(35.0))
DELTA_U = 0.0349


class Scene:
    """Reference scenario: 16-element ULA, c = [0.7, 0.4], two jammers."""

    def __init__(self, k=48, delta_u=DELTA_U):
        self.env = paper_environment(k)
        self.geometry = self.env.geometry
        self.pointing = PointingState(U_BAR, self.geometry.u3db)
        self.config = MMConfig(self.pointing.alpha)
        self.u0 = U_BAR + delta_u
        self.delta_u = delta_u
        self.m = build_covariance(self.env)
        self.pm = coupled_steering(self.geometry, self.env.coupling, self.u0)
        self.basis = manifold_basis(self.geometry, self.pointing, 3)

    def amplitude(self, sinr_db, phase=0.0):
        return amplitude_for_sinr(sinr_db, self.m, self.pm, phase)

    def draw(self, seed, sinr_db=None):
        signal = None if sinr_db is None else self.amplitude(sinr_db) * self.pm
        return draw_snapshots(self.m, signal, self.env.k_secondary, seed)


@pytest.fixture(scope="session")
def scene():
    return Scene()


def random_hpd(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a @ a.conj().T + n * np.eye(n)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda v: int(v.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
