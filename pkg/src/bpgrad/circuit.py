"""Layered block-rotation ansatz: specs, sampling, pruning, light cones.

A circuit on n qubits is l layers; each layer applies one Pauli rotation per
s-qubit block (blocks tile the register top to bottom) followed by an optional
entangler brick.  Parameter slots are indexed layer-major, block-minor:
slot = layer * (n//s) + block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .pauli import BlockSupport, PauliString
from .simulator import (
    ENTANGLER_KINDS,
    MAX_QUBITS,
    EntanglerPattern,
    apply_entangler,
    apply_rotation,
    init_state,
)

GENERATOR_POLICIES = ("full_minus_identity", "full", "xyz_only")
INIT_KINDS = ("zeros", "plus")
THETA_DISTS = ("uniform_0_2pi",)
MAX_BLOCK_WIDTH = 8  # keeps the 4**s policy enumeration small


@lru_cache(maxsize=32)
def policy_paulis(policy: str, s: int) -> tuple[PauliString, ...]:
    """The width-s generator set for a policy, in canonical (lexicographic) order."""
    if policy not in GENERATOR_POLICIES:
        raise ValueError(f"unknown generator policy {policy!r}")
    if policy == "xyz_only":
        if s != 1:
            raise ValueError("xyz_only policy requires s = 1")
        letters_pool = "XYZ"
    else:
        letters_pool = "IXYZ"
    out = []
    for letters in product(letters_pool, repeat=s):
        text = "".join(letters)
        if policy == "full_minus_identity" and text == "I" * s:
            continue
        out.append(PauliString.from_text(text))
    return tuple(out)


@dataclass(frozen=True)
class CircuitSpec:
    """Immutable description of the random-circuit family."""

    n: int
    l: int
    s: int
    entangler: str = "none"
    generator_policy: str = "full_minus_identity"
    init_kind: str = "zeros"
    active_mask: tuple[bool, ...] | None = None
    theta_dist: str = "uniform_0_2pi"

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_QUBITS:
            raise ValueError(f"qubit count {self.n} outside 1..{MAX_QUBITS}")
        if self.l < 1:
            raise ValueError("need at least one layer")
        if not 1 <= self.s <= MAX_BLOCK_WIDTH:
            raise ValueError(f"block width {self.s} outside 1..{MAX_BLOCK_WIDTH}")
        if self.n % self.s:
            raise ValueError(f"block width {self.s} does not divide n={self.n}")
        if self.entangler not in ENTANGLER_KINDS:
            raise ValueError(f"unknown entangler {self.entangler!r}")
        if self.init_kind not in INIT_KINDS:
            raise ValueError(f"unknown initial state {self.init_kind!r}")
        if self.theta_dist not in THETA_DISTS:
            raise ValueError(f"unknown angle distribution {self.theta_dist!r}")
        policy_paulis(self.generator_policy, self.s)  # validates the pair
        total = self.n * self.l // self.s
        if self.active_mask is None:
            object.__setattr__(self, "active_mask", (True,) * total)
        else:
            mask = tuple(bool(b) for b in self.active_mask)
            if len(mask) != total:
                raise ValueError(f"active_mask length {len(mask)} != slot count {total}")
            object.__setattr__(self, "active_mask", mask)

    @property
    def n_blocks(self) -> int:
        return self.n // self.s

    @property
    def total_slots(self) -> int:
        return self.n * self.l // self.s

    @property
    def n_active(self) -> int:
        return sum(self.active_mask)

    @property
    def active_slots(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.active_mask) if a)

    def layer_of(self, slot: int) -> int:
        return slot // self.n_blocks

    def block_of(self, slot: int) -> int:
        return slot % self.n_blocks

    def block_support(self, slot: int) -> BlockSupport:
        return BlockSupport(self.block_of(slot) * self.s, self.s)

    def pattern(self) -> EntanglerPattern:
        return EntanglerPattern(self.entangler, self.n)


@dataclass(frozen=True)
class GeneratorAssignment:
    """Sampled generators for the active slots, embedded at full register width."""

    slots: tuple[int, ...]
    codes: tuple[int, ...]  # indices into policy_paulis(policy, s)
    generators: tuple[PauliString, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if not len(self.slots) == len(self.codes) == len(self.generators):
            raise ValueError("slots, codes and generators must be parallel")

    def by_slot(self) -> dict[int, PauliString]:
        return dict(zip(self.slots, self.generators))


@dataclass(frozen=True)
class CircuitInstance:
    """One concrete sampled circuit: spec plus generators plus angles."""

    spec: CircuitSpec
    assignment: GeneratorAssignment
    thetas: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        t = np.array(self.thetas, dtype=float)
        if t.shape != (len(self.assignment.slots),):
            raise ValueError(
                f"{t.shape[0] if t.ndim == 1 else t.shape} angles for "
                f"{len(self.assignment.slots)} active slots"
            )
        t.setflags(write=False)
        object.__setattr__(self, "thetas", t)

    def position(self, slot: int) -> int:
        """Index of `slot` within the active-slot arrays."""
        try:
            return self.assignment.slots.index(slot)
        except ValueError:
            raise ValueError(f"slot {slot} carries no parameter") from None


def draw_instance(spec: CircuitSpec, stream: np.random.Generator) -> CircuitInstance:
    """sample_instance bundled into a CircuitInstance."""
    assignment, thetas = sample_instance(spec, stream)
    return CircuitInstance(spec, assignment, thetas)


def parameter_count(spec: CircuitSpec) -> int:
    """Total parameter slots n*l/s, pruning not considered."""
    return spec.total_slots


def sample_instance(
    spec: CircuitSpec, stream: np.random.Generator
) -> tuple[GeneratorAssignment, np.ndarray]:
    """Draw one random circuit instance.

    Stream consumption order: generator codes for the active slots (ascending
    slot order), then angles for the same slots.  Angles are uniform on
    [0, 2*pi); generators uniform over the policy set.
    """
    pool = policy_paulis(spec.generator_policy, spec.s)
    slots = spec.active_slots
    codes = stream.integers(0, len(pool), size=len(slots))
    thetas = stream.uniform(0.0, 2.0 * np.pi, size=len(slots))
    gens = tuple(
        spec.block_support(slot).embed(pool[code], spec.n)
        for slot, code in zip(slots, codes)
    )
    return GeneratorAssignment(slots, tuple(int(c) for c in codes), gens), thetas


def apply_instance(
    spec: CircuitSpec,
    assignment: GeneratorAssignment,
    thetas: np.ndarray,
    v: np.ndarray | None = None,
) -> np.ndarray:
    """Run the circuit on `v` (default: the spec's initial state)."""
    if v is None:
        v = init_state(spec.n, spec.init_kind)
    pos = {slot: i for i, slot in enumerate(assignment.slots)}
    pattern = spec.pattern()
    for layer in range(spec.l):
        for block in range(spec.n_blocks):
            slot = layer * spec.n_blocks + block
            i = pos.get(slot)
            if i is not None:
                v = apply_rotation(v, assignment.generators[i], float(thetas[i]))
        if spec.entangler != "none":
            v = apply_entangler(v, pattern)
    return v


def effective_parameters(spec: CircuitSpec, observable: PauliString) -> frozenset[int]:
    """Active slots inside the observable's backward light cone.

    Sweeping layers from last to first: a slot is effective iff its block
    intersects the tracked support set; the set then grows through the layer's
    entangler columns (even pairs, then odd pairs — one pass, either member of
    a pair pulls in the other).
    """
    if observable.n_sites != spec.n:
        raise ValueError("observable width does not match the circuit")
    support = set(observable.support())
    pattern = spec.pattern()
    effective: set[int] = set()
    for layer in range(spec.l - 1, -1, -1):
        for block in range(spec.n_blocks):
            slot = layer * spec.n_blocks + block
            if not spec.active_mask[slot]:
                continue
            if support.intersection(spec.block_support(slot).qubits()):
                effective.add(slot)
        for column in pattern.columns:
            for a, b in column:
                if a in support or b in support:
                    support.add(a)
                    support.add(b)
    return frozenset(effective)


def prune(spec: CircuitSpec, fraction: float, stream: np.random.Generator) -> CircuitSpec:
    """Deactivate floor(fraction * slots) uniformly chosen slots.

    The choice is the first floor(fraction*slots) entries of a stream
    permutation of all slot indices, so equal streams give equal masks.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"prune fraction {fraction} outside [0, 1]")
    total = spec.total_slots
    count = int(math.floor(fraction * total))
    chosen = stream.permutation(total)[:count]
    mask = list(spec.active_mask)
    for slot in chosen:
        mask[slot] = False
    return CircuitSpec(
        n=spec.n,
        l=spec.l,
        s=spec.s,
        entangler=spec.entangler,
        generator_policy=spec.generator_policy,
        init_kind=spec.init_kind,
        active_mask=tuple(mask),
        theta_dist=spec.theta_dist,
    )


def n_eff(spec: CircuitSpec, observable: PauliString) -> int:
    """Number of effective (active, in-light-cone) parameters."""
    return len(effective_parameters(spec, observable))
