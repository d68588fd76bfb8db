"""Two-photon polarization algebra.

States are 4x4 density matrices in the (HH, HV, VH, VV) basis; single-photon
operators are 2x2 Jones matrices in the (H, V) basis.  Polarizer angles are
given in degrees everywhere (H = 0, V = 90) and converted internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

ATOL = 1e-10

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class PolarizerSetting:
    """Analyzer angle in degrees from the H axis, stored modulo 180."""

    angle: float

    def __post_init__(self):
        a = float(self.angle) % 180.0
        # -1e-17 % 180 gives 180.0
        if a >= 180.0:
            a = 0.0
        object.__setattr__(self, "angle", a)

    @property
    def radians(self) -> float:
        return np.deg2rad(self.angle)


Angle = Union[float, PolarizerSetting]


def _rad(theta: Angle) -> float:
    if isinstance(theta, PolarizerSetting):
        return theta.radians
    return np.deg2rad(float(theta))


@dataclass(frozen=True)
class JonesOp:
    m: np.ndarray
    kind: str = "general"  # "unitary" | "projector" | "general"

    def __post_init__(self):
        m = np.array(self.m, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"Jones matrix must be 2x2, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __matmul__(self, other: "JonesOp") -> "JonesOp":
        kind = "unitary" if self.kind == other.kind == "unitary" else "general"
        return JonesOp(self.m @ other.m, kind)

    def apply(self, ket: np.ndarray) -> np.ndarray:
        return self.m @ np.asarray(ket, dtype=complex)

    def is_unitary(self, atol: float = 1e-12) -> bool:
        return np.allclose(self.m.conj().T @ self.m, _I2, rtol=0, atol=atol)

    def is_projector(self, atol: float = 1e-12) -> bool:
        m = self.m
        return (np.allclose(m @ m, m, rtol=0, atol=atol)
                and np.allclose(m, m.conj().T, rtol=0, atol=atol))


@dataclass(frozen=True)
class TwoQubitState:
    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"density matrix must be 4x4, got {rho.shape}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    @property
    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)

    def normalized(self) -> "TwoQubitState":
        return TwoQubitState(self.rho / self.trace)

    def check(self, atol: float = ATOL) -> None:
        """Raise ValueError if the matrix is not a valid density matrix."""
        rho = self.rho
        if abs(np.trace(rho) - 1) > atol:
            raise ValueError(f"trace {np.trace(rho)} != 1")
        if not np.allclose(rho, rho.conj().T, rtol=0, atol=atol):
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -atol:
            raise ValueError("density matrix has a negative eigenvalue")


def psi_minus(phi: float = 0.0) -> TwoQubitState:
    """Density matrix of (|H1 V2> - e^{i phi} |V1 H2>) / sqrt(2)."""
    ket = np.zeros(4, dtype=complex)
    ket[1] = 1.0
    ket[2] = -np.exp(1j * phi)
    ket /= np.sqrt(2.0)
    return TwoQubitState(np.outer(ket, ket.conj()))


def flip_op() -> JonesOp:
    return JonesOp(_X, "unitary")


def phase_op(delta: float) -> JonesOp:
    """Birefringent retarder: phase delta on H relative to V."""
    return JonesOp(np.diag([np.exp(1j * delta), 1.0]), "unitary")


def identity_op() -> JonesOp:
    return JonesOp(_I2, "unitary")


def polarizer_projector(setting: Angle) -> JonesOp:
    """Projector onto cos(theta)|H> + sin(theta)|V>."""
    t = _rad(setting)
    v = np.array([np.cos(t), np.sin(t)])
    return JonesOp(np.outer(v, v), "projector")


def _lift(photon: int, m: np.ndarray) -> np.ndarray:
    if photon == 1:
        return np.kron(m, _I2)
    if photon == 2:
        return np.kron(_I2, m)
    raise ValueError(f"photon index must be 1 or 2, got {photon!r}")


def apply_one_photon(state: TwoQubitState, photon: int, op: JonesOp) -> TwoQubitState:
    """Return (op on one photon) rho (op on one photon)^dagger, unnormalized."""
    full = _lift(photon, op.m)
    return TwoQubitState(full @ state.rho @ full.conj().T)


def apply_local(state: TwoQubitState, op1: JonesOp, op2: JonesOp) -> TwoQubitState:
    full = np.kron(op1.m, op2.m)
    return TwoQubitState(full @ state.rho @ full.conj().T)


def reduced_state(state: TwoQubitState, photon: int) -> np.ndarray:
    r = state.rho.reshape(2, 2, 2, 2)
    if photon == 1:
        return np.einsum("ajbj->ab", r)
    if photon == 2:
        return np.einsum("iaib->ab", r)
    raise ValueError(f"photon index must be 1 or 2, got {photon!r}")


def depolarize(state: TwoQubitState, photon: int, p: float) -> TwoQubitState:
    """Single-photon depolarizing channel: with probability p the photon's
    polarization is replaced by the maximally mixed state."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing probability {p} outside [0, 1]")
    if p == 0.0:
        return state
    other = reduced_state(state, 2 if photon == 1 else 1)
    mixed = np.kron(_I2 / 2, other) if photon == 1 else np.kron(other, _I2 / 2)
    return TwoQubitState((1 - p) * state.rho + p * mixed)


def white_noise(state: TwoQubitState, w: float) -> TwoQubitState:
    """Mix fraction w of the two-photon identity into the state."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"white-noise fraction {w} outside [0, 1]")
    return TwoQubitState((1 - w) * state.rho + w * np.eye(4) / 4)


def dephase(state: TwoQubitState, lam: float) -> TwoQubitState:
    """Scale the HV/VH coherence by (1 - lam); leaves populations alone."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"dephasing fraction {lam} outside [0, 1]")
    rho = np.array(state.rho)
    rho[1, 2] *= 1 - lam
    rho[2, 1] *= 1 - lam
    return TwoQubitState(rho)


def coincidence_probability(state: TwoQubitState, theta1: Angle, theta2: Angle) -> float:
    """trace[(P_theta1 x P_theta2) rho]."""
    proj = np.kron(polarizer_projector(theta1).m, polarizer_projector(theta2).m)
    return float(np.trace(proj @ state.rho).real)


def outcome_probabilities(state: TwoQubitState, theta1: Angle, theta2: Angle) -> np.ndarray:
    """Joint pass/block probabilities, indexed [pass1, pass2] with 1 = transmitted."""
    p1 = polarizer_projector(theta1).m
    p2 = polarizer_projector(theta2).m
    out = np.empty((2, 2))
    for a, m1 in enumerate((_I2 - p1, p1)):
        for b, m2 in enumerate((_I2 - p2, p2)):
            out[a, b] = np.trace(np.kron(m1, m2) @ state.rho).real
    # roundoff can leave entries at -1e-17
    return np.clip(out, 0.0, None)
