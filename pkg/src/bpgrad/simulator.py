"""Statevector evolution: initial states, Pauli rotations, entangler bricks.

These are the clear reference implementations (numpy, value semantics) that the
oracles and tests trust; the Monte Carlo hot path lives in _kernels and is
cross-checked against this module.

Amplitude layout follows the package convention: qubit 0 is the most
significant index bit (see pauli module docstring).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .pauli import PauliString, apply_pauli

MAX_QUBITS = 24
ENTANGLER_KINDS = ("none", "cz_brick", "cx_brick")


def init_state(n: int, kind: str) -> np.ndarray:
    """|0...0> for 'zeros', the uniform superposition for 'plus'."""
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"qubit count {n} outside 1..{MAX_QUBITS}")
    dim = 1 << n
    if kind == "zeros":
        v = np.zeros(dim, dtype=complex)
        v[0] = 1.0
        return v
    if kind == "plus":
        return np.full(dim, 2.0 ** (-n / 2), dtype=complex)
    raise ValueError(f"unknown initial state kind {kind!r}")


def apply_rotation(v: np.ndarray, p: PauliString, theta: float) -> np.ndarray:
    """exp(-i·theta/2·P)|v> = cos(theta/2)|v> - i·sin(theta/2)·P|v>."""
    if not p.is_hermitian():
        raise ValueError("rotation generator must be Hermitian (phase_exp 0)")
    half = 0.5 * theta
    return np.cos(half) * v - 1j * np.sin(half) * apply_pauli(p, v)


@dataclass(frozen=True)
class EntanglerPattern:
    """Brick pattern of two-qubit gates: an even column then an odd column.

    Even column pairs (0,1), (2,3), ...; odd column pairs (1,2), (3,4), ...
    The lower index of each pair is the control.
    """

    kind: str
    n: int

    def __post_init__(self) -> None:
        if self.kind not in ENTANGLER_KINDS:
            raise ValueError(f"unknown entangler kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("entangler needs at least one qubit")

    @property
    def even_pairs(self) -> tuple[tuple[int, int], ...]:
        if self.kind == "none":
            return ()
        return tuple((q, q + 1) for q in range(0, self.n - 1, 2))

    @property
    def odd_pairs(self) -> tuple[tuple[int, int], ...]:
        if self.kind == "none":
            return ()
        return tuple((q, q + 1) for q in range(1, self.n - 1, 2))

    @property
    def columns(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        return (self.even_pairs, self.odd_pairs)


def _bit(n: int, q: int) -> int:
    return 1 << (n - 1 - q)


@lru_cache(maxsize=64)
def cz_brick_signs(n: int) -> np.ndarray:
    """Per-amplitude ±1 factors of a full CZ brick (both columns)."""
    pattern = EntanglerPattern("cz_brick", n)
    idx = np.arange(1 << n, dtype=np.uint64)
    signs = np.ones(1 << n, dtype=np.float64)
    for col in pattern.columns:
        for a, b in col:
            both = ((idx >> np.uint64(n - 1 - a)) & (idx >> np.uint64(n - 1 - b)) & 1).astype(
                np.float64
            )
            signs *= 1.0 - 2.0 * both
    signs.setflags(write=False)
    return signs


@lru_cache(maxsize=64)
def cx_brick_source(n: int) -> np.ndarray:
    """Gather indices for a full CX brick: new[j] = old[source[j]]."""
    pattern = EntanglerPattern("cx_brick", n)
    dst = np.arange(1 << n, dtype=np.int64)
    for col in pattern.columns:
        for c, t in col:
            control_on = (dst >> (n - 1 - c)) & 1
            dst = dst ^ (control_on << (n - 1 - t))
    source = np.empty_like(dst)
    source[dst] = np.arange(1 << n, dtype=np.int64)
    source.setflags(write=False)
    return source


def apply_entangler(v: np.ndarray, pattern: EntanglerPattern) -> np.ndarray:
    """Apply the full brick (even column then odd column) to the state."""
    if v.shape != (1 << pattern.n,):
        raise ValueError(f"state shape {v.shape} does not match n={pattern.n}")
    if pattern.kind == "none":
        return v.copy()
    if pattern.kind == "cz_brick":
        return v * cz_brick_signs(pattern.n)
    return v[cx_brick_source(pattern.n)]


def expectation(v: np.ndarray, o: PauliString) -> float:
    """<v|O|v> for a Hermitian Pauli observable; imaginary residue checked."""
    if not o.is_hermitian():
        raise ValueError("observable must be Hermitian (phase_exp 0)")
    val = np.vdot(v, apply_pauli(o, v))
    if abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary residue {val.imag:.2e}")
    return float(val.real)


def dense_unitary(n: int, apply_circuit) -> np.ndarray:
    """Full 2^n x 2^n unitary of `apply_circuit` (a state->state callable), n <= 6."""
    if n > 6:
        raise ValueError(f"dense_unitary capped at n=6, got {n}")
    dim = 1 << n
    u = np.empty((dim, dim), dtype=complex)
    for j in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[j] = 1.0
        u[:, j] = apply_circuit(e)
    defect = np.max(np.abs(u.conj().T @ u - np.eye(dim)))
    if defect > 1e-10:
        raise ValueError(f"unitarity defect {defect:.2e} exceeds 1e-10")
    return u
