"""Tests for loss evaluation and three-way gradient agreement."""
from __future__ import annotations

import numpy as np
import pytest

from bpgrad.circuit import (
    CircuitInstance,
    CircuitSpec,
    GeneratorAssignment,
    apply_instance,
    draw_instance,
    effective_parameters,
)
from bpgrad.gradients import (
    apply_gates,
    grad_commutator,
    grad_finite_difference,
    grad_parameter_shift,
    instance_gates,
    loss,
    split_at,
)
from bpgrad.pauli import PauliString
from bpgrad.simulator import dense_unitary, init_state

NINE_SLOT = CircuitSpec(n=6, l=3, s=2, entangler="cz_brick")
TOP_Z = PauliString.from_text("ZIIIII")


def _fixed_instance(spec: CircuitSpec, letters: list[str], thetas: list[float]):
    gens = tuple(
        spec.block_support(slot).embed(PauliString.from_text(t), spec.n)
        for slot, t in zip(spec.active_slots, letters)
    )
    assignment = GeneratorAssignment(spec.active_slots, (0,) * len(letters), gens)
    return CircuitInstance(spec, assignment, np.array(thetas))


def _random_case(rng: np.random.Generator, max_n: int = 6):
    while True:
        n = int(rng.integers(1, max_n + 1))
        widths = [w for w in (1, 2, 3) if n % w == 0]
        if widths:
            break
    spec = CircuitSpec(
        n=n,
        l=int(rng.integers(1, 4)),
        s=int(rng.choice(widths)),
        entangler=str(rng.choice(["none", "cz_brick", "cx_brick"])),
        generator_policy=str(rng.choice(["full", "full_minus_identity"])),
        init_kind=str(rng.choice(["zeros", "plus"])),
    )
    instance = draw_instance(spec, rng)
    obs = PauliString.from_text(
        "".join(rng.choice(list("IXYZ")) for _ in range(n))
    )
    k = int(rng.choice(spec.active_slots))
    return instance, obs, k


def test_loss_trivial_cases():
    # no active gates: loss is just <init|O|init>
    empty = CircuitSpec(n=3, l=1, s=1, active_mask=(False,) * 3)
    inst = CircuitInstance(empty, GeneratorAssignment((), (), ()), np.zeros(0))
    assert loss(inst, PauliString.from_text("ZZZ")) == 1.0
    # RX(pi) flips the qubit
    flip = _fixed_instance(CircuitSpec(n=1, l=1, s=1), ["X"], [np.pi])
    assert abs(loss(flip, PauliString.from_text("Z")) + 1.0) < 1e-12


def test_loss_matches_dense_unitary():
    rng = np.random.default_rng(41)
    for _ in range(10):
        instance, obs, _ = _random_case(rng, max_n=4)
        gates = instance_gates(instance)
        u = dense_unitary(instance.spec.n, lambda v: apply_gates(v, gates))
        v0 = init_state(instance.spec.n, instance.spec.init_kind)
        from bpgrad.pauli import pauli_matrix

        want = np.vdot(u @ v0, pauli_matrix(obs) @ (u @ v0)).real
        assert abs(loss(instance, obs) - want) < 1e-12


def test_loss_bounded():
    rng = np.random.default_rng(42)
    for _ in range(50):
        instance, obs, _ = _random_case(rng)
        assert abs(loss(instance, obs)) <= 1.0 + 1e-12


def test_gate_lowering_matches_apply_instance():
    rng = np.random.default_rng(43)
    for _ in range(10):
        instance, _, _ = _random_case(rng)
        via_gates = apply_gates(
            init_state(instance.spec.n, instance.spec.init_kind),
            instance_gates(instance),
        )
        direct = apply_instance(instance.spec, instance.assignment, instance.thetas)
        assert np.max(np.abs(via_gates - direct)) < 1e-14


def test_split_reassembles():
    rng = np.random.default_rng(44)
    for _ in range(10):
        instance, _, k = _random_case(rng)
        split = split_at(instance, k)
        assert split.minus_part + split.plus_part == instance_gates(instance)
        assert split.plus_part[0][:2] == ("rot", k)
    with pytest.raises(ValueError):
        split_at(instance, instance.spec.total_slots + 5)


def test_inactive_slot_rejected():
    spec = CircuitSpec(n=2, l=1, s=1, active_mask=(True, False))
    instance = draw_instance(spec, np.random.default_rng(0))
    obs = PauliString.from_text("ZZ")
    with pytest.raises(ValueError):
        grad_parameter_shift(instance, obs, 1)


def test_parameter_shift_known_values():
    z = PauliString.from_text("Z")
    # loss(theta) = cos(theta) for an X rotation measured in Z from |0>
    for theta, want in ((0.0, 0.0), (0.5 * np.pi, -1.0)):
        inst = _fixed_instance(CircuitSpec(n=1, l=1, s=1), ["X"], [theta])
        assert abs(grad_parameter_shift(inst, z, 0) - want) < 1e-12
        assert abs(grad_commutator(inst, z, 0) - want) < 1e-12
    # generator commuting with everything downstream and with O
    inert = _fixed_instance(CircuitSpec(n=1, l=1, s=1), ["Z"], [1.234])
    assert abs(grad_parameter_shift(inert, z, 0)) < 1e-14
    assert abs(grad_commutator(inert, z, 0)) < 1e-14
    assert abs(grad_finite_difference(inert, z, 0, 1e-4)) < 1e-12


def test_three_way_agreement():
    rng = np.random.default_rng(45)
    worst_pc = worst_fd = 0.0
    for _ in range(50):
        instance, obs, k = _random_case(rng)
        ps = grad_parameter_shift(instance, obs, k)
        comm = grad_commutator(instance, obs, k)
        fd = grad_finite_difference(instance, obs, k, 1e-4)
        worst_pc = max(worst_pc, abs(ps - comm))
        worst_fd = max(worst_fd, abs(ps - fd))
    assert worst_pc < 1e-10
    assert worst_fd < 1e-6


def test_finite_difference_step_validation():
    inst = _fixed_instance(CircuitSpec(n=1, l=1, s=1), ["X"], [0.3])
    z = PauliString.from_text("Z")
    with pytest.raises(ValueError):
        grad_finite_difference(inst, z, 0, 1e-7)
    with pytest.raises(ValueError):
        grad_finite_difference(inst, z, 0, 0.5)
    got = grad_finite_difference(
        _fixed_instance(CircuitSpec(n=1, l=1, s=1), ["X"], [0.5 * np.pi]), z, 0, 1e-4
    )
    assert abs(got + 1.0) < 2e-9


def test_light_cone_slots_have_zero_gradient():
    rng = np.random.default_rng(46)
    effective = effective_parameters(NINE_SLOT, TOP_Z)
    dead = sorted(set(range(9)) - set(effective))
    assert dead == [5, 7, 8]
    for _ in range(10):
        instance = draw_instance(NINE_SLOT, rng)
        for k in dead:
            assert abs(grad_parameter_shift(instance, TOP_Z, k)) < 1e-12
            assert abs(grad_commutator(instance, TOP_Z, k)) < 1e-12
