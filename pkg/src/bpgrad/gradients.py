"""Loss evaluation and its parameter gradient, computed three independent ways.

Parameter-shift is the production path (two loss evaluations, exact for Pauli
rotations).  The commutator form and central finite differences exist to
cross-validate it; the test suite holds all three to tight agreement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import CircuitInstance
from .pauli import PauliString, apply_pauli
from .simulator import apply_entangler, apply_rotation, expectation, init_state

ROT = "rot"
ENT = "ent"


def instance_gates(instance: CircuitInstance) -> tuple[tuple, ...]:
    """Lower an instance to its applied gate sequence.

    Gates are ("rot", slot, generator, theta) and ("ent", pattern); each layer
    contributes its active rotations in block order, then the entangler brick.
    """
    spec = instance.spec
    pos = {slot: i for i, slot in enumerate(instance.assignment.slots)}
    pattern = spec.pattern()
    gates = []
    for layer in range(spec.l):
        for block in range(spec.n_blocks):
            slot = layer * spec.n_blocks + block
            i = pos.get(slot)
            if i is not None:
                gates.append(
                    (ROT, slot, instance.assignment.generators[i], float(instance.thetas[i]))
                )
        if spec.entangler != "none":
            gates.append((ENT, pattern))
    return tuple(gates)


def apply_gates(v: np.ndarray, gates: tuple[tuple, ...]) -> np.ndarray:
    for gate in gates:
        if gate[0] == ROT:
            v = apply_rotation(v, gate[2], gate[3])
        else:
            v = apply_entangler(v, gate[1])
    return v


@dataclass(frozen=True)
class SplitCircuit:
    """Gate sequence split at slot k: strictly-before part and k-onward part."""

    k: int
    minus_part: tuple[tuple, ...]
    plus_part: tuple[tuple, ...]


def split_at(instance: CircuitInstance, k: int) -> SplitCircuit:
    gates = instance_gates(instance)
    for i, gate in enumerate(gates):
        if gate[0] == ROT and gate[1] == k:
            return SplitCircuit(k, gates[:i], gates[i:])
    raise ValueError(f"slot {k} carries no parameter")


def loss(
    instance: CircuitInstance, observable: PauliString, init_kind: str | None = None
) -> float:
    """<init| U(theta)^dag O U(theta) |init>; init_kind defaults to the spec's."""
    v = init_state(instance.spec.n, init_kind or instance.spec.init_kind)
    return expectation(apply_gates(v, instance_gates(instance)), observable)


def _minus_state(instance: CircuitInstance, split: SplitCircuit) -> np.ndarray:
    v = init_state(instance.spec.n, instance.spec.init_kind)
    return apply_gates(v, split.minus_part)


def _shifted_losses(
    instance: CircuitInstance, observable: PauliString, k: int, delta: float
) -> tuple[float, float]:
    """loss at theta_k +- delta, sharing the before-k prefix state."""
    split = split_at(instance, k)
    v_minus = _minus_state(instance, split)
    _, _, gen, theta = split.plus_part[0]
    rest = split.plus_part[1:]
    out = []
    for sign in (1.0, -1.0):
        v = apply_rotation(v_minus, gen, theta + sign * delta)
        out.append(expectation(apply_gates(v, rest), observable))
    return out[0], out[1]


def grad_parameter_shift(
    instance: CircuitInstance, observable: PauliString, k: int
) -> float:
    """[loss(theta_k + pi/2) - loss(theta_k - pi/2)] / 2, exact for Pauli rotations."""
    up, down = _shifted_losses(instance, observable, k, 0.5 * np.pi)
    return 0.5 * (up - down)


def grad_commutator(instance: CircuitInstance, observable: PauliString, k: int) -> float:
    """(i/2) <psi_-| [P_k, O_+] |psi_->, evaluated by forward simulation.

    With |u> = U_+|psi_->, |w> = U_+ P_k |psi_-> this reduces to -Im <w|O|u>.
    """
    split = split_at(instance, k)
    v_minus = _minus_state(instance, split)
    gen = split.plus_part[0][2]
    u = apply_gates(v_minus, split.plus_part)
    w = apply_gates(apply_pauli(gen, v_minus), split.plus_part)
    return -float(np.vdot(w, apply_pauli(observable, u)).imag)


def grad_finite_difference(
    instance: CircuitInstance, observable: PauliString, k: int, h: float
) -> float:
    """Central difference [loss(theta_k + h) - loss(theta_k - h)] / (2h)."""
    if not 1e-6 <= h <= 1e-2:
        raise ValueError(f"step {h} outside [1e-6, 1e-2]")
    up, down = _shifted_losses(instance, observable, k, h)
    return (up - down) / (2.0 * h)
