"""Pauli-string algebra and exact twirl-sum identities on dense operators.

Conventions used everywhere in this package:

- Qubit 0 is the *most significant* bit of an amplitude index: basis state
  |q0 q1 ... q_{n-1}> has index q0·2^(n-1) + ... + q_{n-1}.
- Text form of a Pauli string writes qubit 0 leftmost ("ZIX" = Z on qubit 0).
- A PauliString is i^phase_exp times a tensor product of Hermitian letters
  {I, X, Y, Z}; letters are stored as two bitmasks in amplitude-bit space
  (bit n-1-q of each mask belongs to qubit q): x_bits marks X/Y sites,
  z_bits marks Z/Y sites.

Dense-operator helpers are oracle plumbing for small n; they enumerate Pauli
sums explicitly and are deliberately capped at n <= 8 (dim 256).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_LETTER_TO_XZ = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_XZ_TO_LETTER = {v: k for k, v in _LETTER_TO_XZ.items()}

_I2 = np.eye(2, dtype=complex)
_LETTER_MATRICES = {
    "I": _I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DENSE_MAX_QUBITS = 8


@dataclass(frozen=True)
class PauliString:
    """i^phase_exp times an n-site tensor product of {I, X, Y, Z}."""

    n_sites: int
    x_bits: int
    z_bits: int
    phase_exp: int = 0

    def __post_init__(self) -> None:
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be positive, got {self.n_sites}")
        full = (1 << self.n_sites) - 1
        if self.x_bits & ~full or self.z_bits & ~full:
            raise ValueError("mask bits outside the n_sites register")
        if self.phase_exp not in (0, 1, 2, 3):
            raise ValueError(f"phase_exp must be in 0..3, got {self.phase_exp}")

    @classmethod
    def from_text(cls, text: str) -> "PauliString":
        """Parse 'ZIX'-style text, qubit 0 leftmost, phase_exp 0."""
        if not text:
            raise ValueError("empty Pauli text")
        n = len(text)
        x = z = 0
        for q, letter in enumerate(text):
            try:
                xq, zq = _LETTER_TO_XZ[letter]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {letter!r} in {text!r}") from None
            bit = 1 << (n - 1 - q)
            x |= xq * bit
            z |= zq * bit
        return cls(n, x, z)

    @classmethod
    def identity(cls, n_sites: int) -> "PauliString":
        return cls(n_sites, 0, 0)

    @property
    def letters(self) -> str:
        """Text form, qubit 0 leftmost (phase_exp not included)."""
        out = []
        for q in range(self.n_sites):
            bit = 1 << (self.n_sites - 1 - q)
            out.append(_XZ_TO_LETTER[(int(bool(self.x_bits & bit)), int(bool(self.z_bits & bit)))])
        return "".join(out)

    @property
    def weight(self) -> int:
        """Number of non-identity sites."""
        return (self.x_bits | self.z_bits).bit_count()

    def support(self) -> tuple[int, ...]:
        """Qubit indices carrying a non-identity letter."""
        mask = self.x_bits | self.z_bits
        return tuple(q for q in range(self.n_sites) if mask & (1 << (self.n_sites - 1 - q)))

    def is_identity(self) -> bool:
        return self.x_bits == 0 and self.z_bits == 0

    def is_hermitian(self) -> bool:
        return self.phase_exp == 0

    def __str__(self) -> str:
        prefix = ("", "i*", "-", "-i*")[self.phase_exp]
        return prefix + self.letters


def pauli_mul(p: PauliString, q: PauliString) -> PauliString:
    """Group product p·q with the accumulated i^k phase."""
    if p.n_sites != q.n_sites:
        raise ValueError(f"size mismatch: {p.n_sites} vs {q.n_sites}")
    # Work in X^x Z^z form: letters carry i^(#Y), reordering Z past X flips signs.
    t = (
        p.phase_exp
        + q.phase_exp
        + (p.x_bits & p.z_bits).bit_count()
        + (q.x_bits & q.z_bits).bit_count()
        + 2 * (p.z_bits & q.x_bits).bit_count()
    )
    rx = p.x_bits ^ q.x_bits
    rz = p.z_bits ^ q.z_bits
    t -= (rx & rz).bit_count()
    return PauliString(p.n_sites, rx, rz, t % 4)


def commutes(p: PauliString, q: PauliString) -> bool:
    """True iff the strings commute (even number of anticommuting sites)."""
    if p.n_sites != q.n_sites:
        raise ValueError(f"size mismatch: {p.n_sites} vs {q.n_sites}")
    return ((p.x_bits & q.z_bits).bit_count() + (p.z_bits & q.x_bits).bit_count()) % 2 == 0


def apply_pauli(p: PauliString, v: np.ndarray) -> np.ndarray:
    """P|v> as a new amplitude array (permutation with ±1, ±i factors)."""
    dim = 1 << p.n_sites
    if v.shape != (dim,):
        raise ValueError(f"state has shape {v.shape}, expected ({dim},)")
    idx = np.arange(dim, dtype=np.uint64)
    signs = 1.0 - 2.0 * (np.bitwise_count(idx & np.uint64(p.z_bits)) & 1)
    pref = 1j ** ((p.phase_exp + (p.x_bits & p.z_bits).bit_count()) % 4)
    out = np.empty(dim, dtype=complex)
    out[idx ^ np.uint64(p.x_bits)] = pref * signs * v
    return out


@dataclass(frozen=True)
class BlockSupport:
    """A contiguous width-`width` qubit block starting at qubit `offset`."""

    offset: int
    width: int

    def __post_init__(self) -> None:
        if self.offset < 0 or self.width < 1:
            raise ValueError(f"invalid block ({self.offset}, {self.width})")

    def qubits(self) -> range:
        return range(self.offset, self.offset + self.width)

    def validate(self, n_sites: int) -> None:
        if self.offset + self.width > n_sites:
            raise ValueError(
                f"block qubits {self.offset}..{self.offset + self.width - 1} "
                f"exceed register of {n_sites}"
            )

    def embed(self, local: PauliString, n_sites: int) -> PauliString:
        """Place a width-qubit Pauli string onto this block of an n-qubit register."""
        self.validate(n_sites)
        if local.n_sites != self.width:
            raise ValueError(f"local string has {local.n_sites} sites, block width {self.width}")
        shift = n_sites - self.offset - self.width
        return PauliString(n_sites, local.x_bits << shift, local.z_bits << shift, local.phase_exp)


def block_paulis(width: int, include_identity: bool = True):
    """All 4^width Hermitian Pauli strings on a width-qubit block, identity first."""
    dim = 1 << width
    for x in range(dim):
        for z in range(dim):
            if not include_identity and x == 0 and z == 0:
                continue
            yield PauliString(width, x, z)


def pauli_matrix(p: PauliString) -> np.ndarray:
    """Dense 2^n x 2^n matrix of the string (n <= DENSE_MAX_QUBITS)."""
    if p.n_sites > DENSE_MAX_QUBITS:
        raise ValueError(f"dense matrix refused for n={p.n_sites} > {DENSE_MAX_QUBITS}")
    m = _kron_letters(p.letters)
    if p.phase_exp:
        m = (1j**p.phase_exp) * m
    return m


@lru_cache(maxsize=4096)
def _kron_letters(letters: str) -> np.ndarray:
    m = _LETTER_MATRICES[letters[0]]
    for letter in letters[1:]:
        m = np.kron(m, _LETTER_MATRICES[letter])
    m.setflags(write=False)
    return m


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random dense Hermitian operator on n qubits (GUE-style, unnormalized)."""
    dim = 1 << n
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (g + g.conj().T) / 2


def check_dense(a: np.ndarray, n: int, hermitian: bool = False) -> np.ndarray:
    """Validate a dense operator for the oracle routines."""
    dim = 1 << n
    if n > DENSE_MAX_QUBITS:
        raise ValueError(f"dense operators capped at n={DENSE_MAX_QUBITS}, got {n}")
    a = np.asarray(a, dtype=complex)
    if a.shape != (dim, dim):
        raise ValueError(f"operator shape {a.shape}, expected ({dim}, {dim})")
    if hermitian and np.max(np.abs(a - a.conj().T)) > 1e-12:
        raise ValueError("operator is not Hermitian within 1e-12")
    return a


def partial_trace(a: np.ndarray, n: int, traced_qubits) -> np.ndarray:
    """Trace out the given qubits, returning the operator on the remaining ones.

    Remaining qubits keep their relative order. Qubit 0 is the most
    significant index bit, so axis q of the reshaped tensor is qubit q.
    """
    traced = sorted(set(traced_qubits))
    if any(q < 0 or q >= n for q in traced):
        raise ValueError(f"traced qubits {traced} out of range for n={n}")
    t = np.asarray(a, dtype=complex).reshape([2] * (2 * n))
    for offset, q in enumerate(traced):
        ax = q - offset  # earlier traces removed one row+col axis each
        k = t.ndim // 2
        t = np.trace(t, axis1=ax, axis2=k + ax)
    keep = n - len(traced)
    return t.reshape(1 << keep, 1 << keep)


def expand_with_identity(a: np.ndarray, n: int, identity_qubits) -> np.ndarray:
    """Tensor-insert identity factors so `a` (on the remaining qubits) lives on n qubits.

    Inverse companion of partial_trace: the non-identity qubits keep their
    relative order and land at the positions not listed in identity_qubits.
    """
    idq = sorted(set(identity_qubits))
    keep = n - len(idq)
    dim_keep = 1 << keep
    a = np.asarray(a, dtype=complex)
    if a.shape != (dim_keep, dim_keep):
        raise ValueError(f"operator shape {a.shape}, expected ({dim_keep}, {dim_keep})")
    t = a.reshape([2] * (2 * keep))
    m = len(idq)
    full = np.tensordot(t, np.eye(1 << m).reshape([2] * (2 * m)), axes=0)
    # Axes now: keep-rows, keep-cols, id-rows, id-cols. Restore qubit order.
    kept_positions = [q for q in range(n) if q not in idq]
    row_axes = [0] * n
    col_axes = [0] * n
    for i, q in enumerate(kept_positions):
        row_axes[q] = i
        col_axes[q] = keep + i
    for i, q in enumerate(idq):
        row_axes[q] = 2 * keep + i
        col_axes[q] = 2 * keep + m + i
    return full.transpose(row_axes + col_axes).reshape(1 << n, 1 << n)


def twirl_sum(a: np.ndarray, block: BlockSupport, n: int) -> np.ndarray:
    """Sum of P·a·P over all 4^width Pauli strings on the block (identity included).

    Equals 2^width · Tr_block(a) ⊗ I_block (re-inserted at the block position).
    """
    a = check_dense(a, n)
    block.validate(n)
    total = np.zeros_like(a)
    for local in block_paulis(block.width):
        pm = pauli_matrix(block.embed(local, n))
        total += pm @ a @ pm
    return total


def twirl_sum_closed_form(a: np.ndarray, block: BlockSupport, n: int) -> np.ndarray:
    """The closed form 2^width · Tr_block(a) ⊗ I_block of twirl_sum."""
    a = check_dense(a, n)
    block.validate(n)
    reduced = partial_trace(a, n, block.qubits())
    return (1 << block.width) * expand_with_identity(reduced, n, block.qubits())


def twirl_sum_second(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, block: BlockSupport, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split sum of P·a·P·b·P·c·P into (main, eps).

    main = 2^width · Tr_block(c·a) ⊗ I_block · b, and eps is the remainder,
    which is exactly traceless. The c·a order matters: partial traces are not
    cyclic, and Tr_block(a·c) would leave a nonzero remainder trace whenever
    a and c carry anticommuting factors outside the block.
    """
    if n > 6:
        raise ValueError(f"twirl_sum_second capped at n=6, got {n}")
    a = check_dense(a, n)
    b = check_dense(b, n)
    c = check_dense(c, n)
    block.validate(n)
    total = np.zeros_like(a)
    for local in block_paulis(block.width):
        pm = pauli_matrix(block.embed(local, n))
        total += pm @ a @ pm @ b @ pm @ c @ pm
    reduced = partial_trace(c @ a, n, block.qubits())
    main = (1 << block.width) * expand_with_identity(reduced, n, block.qubits()) @ b
    return main, total - main
