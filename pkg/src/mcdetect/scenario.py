"""Interference environment and snapshot synthesis.

Randomness is keyed, never shared: every trial derives its own integer
seed from ``(master_seed, stream, trial)`` and builds a private Philox
generator from it.  Results therefore do not depend on the order or the
grouping in which trials are evaluated.
"""

from dataclasses import dataclass, field

import numpy as np

from .array_model import ArrayGeometry, CouplingProfile, coupled_steering, steering
from .errors import InsufficientSecondaryData, InvalidNoise, OutOfVisibleRegion
from .numkernel import hermitian_sqrt


@dataclass(frozen=True)
class JammerSpec:
    u: float
    power_ratio_db: float

    def __post_init__(self):
        if abs(self.u) > 1:
            raise OutOfVisibleRegion(f"jammer direction {self.u} outside [-1, 1]")


@dataclass(frozen=True)
class EnvironmentSpec:
    geometry: ArrayGeometry
    coupling: CouplingProfile
    jammers: tuple = ()
    noise_power: float = 1.0
    k_secondary: int = 48
    coupled_jammers: bool = True

    def __post_init__(self):
        object.__setattr__(self, "jammers", tuple(self.jammers))
        if self.k_secondary < self.geometry.n_elements:
            raise InsufficientSecondaryData(
                f"K = {self.k_secondary} < N = {self.geometry.n_elements}")


@dataclass(frozen=True)
class TargetTruth:
    u0: float
    amplitude: complex
    delta_u: float

    @classmethod
    def at(cls, u0, u_bar, amplitude=0j):
        return cls(u0, complex(amplitude), u0 - u_bar)


@dataclass(frozen=True)
class SnapshotSet:
    primary: np.ndarray = field(repr=False)
    secondary: np.ndarray = field(repr=False)  # (K, N)
    seed: int = 0

    @property
    def n(self):
        return self.primary.shape[-1]

    @property
    def k(self):
        return self.secondary.shape[-2]

    def scaled(self, factor):
        return SnapshotSet(self.primary * factor, self.secondary * factor, self.seed)


def paper_environment(k_secondary=48):
    """16-element half-wavelength ULA, coupling [0.7, 0.4], two jammers."""
    return EnvironmentSpec(
        geometry=ArrayGeometry(16, 0.5),
        coupling=CouplingProfile((0.7, 0.4)),
        jammers=(JammerSpec(0.866, 30.0), JammerSpec(-0.342, 40.0)),
        noise_power=1.0,
        k_secondary=k_secondary,
    )


def build_covariance(env):
    """Jammer-plus-noise covariance ``sum_i s_i^2 p_m(u_i) p_m(u_i)^H + s_n^2 I``."""
    if not env.noise_power > 0:
        raise InvalidNoise(f"noise power must be positive, got {env.noise_power}")
    n = env.geometry.n_elements
    m = env.noise_power * np.eye(n, dtype=complex)
    for jam in env.jammers:
        if env.coupled_jammers:
            v = coupled_steering(env.geometry, env.coupling, jam.u)
        else:
            v = steering(env.geometry, jam.u)
        m += env.noise_power * 10 ** (jam.power_ratio_db / 10) * np.outer(v, np.conj(v))
    return 0.5 * (m + m.conj().T)


def sinr(m, amplitude, p_m):
    """``|a|^2 p_m^H M^-1 p_m`` (linear)."""
    q = np.real(np.vdot(p_m, np.linalg.solve(m, p_m)))
    return abs(amplitude) ** 2 * q


def amplitude_for_sinr(target_sinr_db, m, p_m, phase=0.0):
    q = np.real(np.vdot(p_m, np.linalg.solve(m, p_m)))
    mag = np.sqrt(10 ** (target_sinr_db / 10) / q)
    return complex(mag * np.exp(1j * phase))


def derive_seed(master_seed, *keys):
    """Deterministic 64-bit seed for the stream identified by ``keys``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def white_noise(seed, rows, n):
    """``(rows, n)`` standard circular complex normals from a keyed Philox stream."""
    gen = np.random.Generator(np.random.Philox(seed))
    x = gen.standard_normal((rows, n, 2))
    return (x[..., 0] + 1j * x[..., 1]) * np.sqrt(0.5)


def draw_snapshots(m, signal, k, seed):
    """``K + 1`` colored snapshots; the first is the primary (plus ``signal``)."""
    m = np.asarray(m, dtype=complex)
    n = m.shape[0]
    if k < n:
        raise InsufficientSecondaryData(f"K = {k} < N = {n}")
    z = white_noise(seed, k + 1, n) @ hermitian_sqrt(m).T
    primary = z[0] if signal is None else z[0] + np.asarray(signal, dtype=complex)
    return SnapshotSet(primary, z[1:], int(seed))
