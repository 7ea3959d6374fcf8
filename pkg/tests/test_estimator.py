"""Tests for the Monte Carlo estimator, its kernels, and the MC oracles."""
from __future__ import annotations

import numpy as np
import pytest

import bpgrad.estimator as estimator_mod
from bpgrad.analytics import exact_twirl_first_moment, single_gate_second_moment
from bpgrad.circuit import (
    CircuitInstance,
    CircuitSpec,
    effective_parameters,
    sample_instance,
)
from bpgrad.estimator import (
    KMode,
    VarianceEstimate,
    fit_exponential,
    mc_first_moment,
    mc_second_moment,
    parse_k_mode,
    run_ensemble,
    sample_gradients,
    sample_stream,
)
from bpgrad.gradients import grad_parameter_shift
from bpgrad.pauli import BlockSupport, PauliString, pauli_matrix, random_hermitian

NINE_SLOT = CircuitSpec(n=6, l=3, s=2, entangler="cz_brick",
                        generator_policy="full", init_kind="zeros")
TOP_Z = PauliString.from_text("ZIIIII")


def test_k_mode_tokens():
    assert str(parse_k_mode("fixed_slot(12)")) == "fixed_slot(12)"
    assert parse_k_mode("random_effective") == KMode("random_effective")
    assert parse_k_mode(" random_all ") == KMode("random_all")
    for bad in ("fixed_slot", "fixed_slot(-1)", "fixed(3)", "uniform"):
        with pytest.raises(ValueError):
            parse_k_mode(bad)
    with pytest.raises(ValueError):
        KMode("random_all", slot=3)
    with pytest.raises(ValueError):
        KMode("fixed_slot")


def test_sample_stream_is_pure_and_distinct():
    a = sample_stream(99, 4).uniform(size=8)
    b = sample_stream(99, 4).uniform(size=8)
    c = sample_stream(99, 5).uniform(size=8)
    d = sample_stream(98, 4).uniform(size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_kernel_gradients_match_reference():
    # both kernel paths, all entanglers/policies/inits, vs the dense engine
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 120:
        n = int(rng.integers(1, 6))
        s = int(rng.choice([w for w in (1, 2, 3) if n % w == 0]))
        spec = CircuitSpec(
            n=n, l=int(rng.integers(1, 4)), s=s,
            entangler=str(rng.choice(["none", "cz_brick", "cx_brick"])),
            generator_policy=str(rng.choice(
                ["full", "full_minus_identity"] + (["xyz_only"] if s == 1 else []))),
            init_kind=str(rng.choice(["zeros", "plus"])),
        )
        obs = PauliString(n, int(rng.integers(0, 1 << n)),
                          int(rng.integers(0, 1 << n)), 0)
        eff = sorted(effective_parameters(spec, obs))
        if not eff:
            continue
        seed = int(rng.integers(0, 2**63))
        k_slot = int(rng.choice(eff))
        got = sample_gradients(spec, obs, f"fixed_slot({k_slot})", 3, seed)
        for i in range(3):
            assign, thetas = sample_instance(spec, sample_stream(seed, i))
            ref = grad_parameter_shift(CircuitInstance(spec, assign, thetas), obs, k_slot)
            assert abs(ref - got[i]) < 1e-12
            checked += 1


def test_run_ensemble_deterministic_across_workers():
    spec = CircuitSpec(n=4, l=2, s=2, entangler="cx_brick",
                       generator_policy="full_minus_identity", init_kind="plus")
    obs = PauliString.from_text("ZZZZ")
    # 2500 samples exercises an uneven trailing chunk
    one = run_ensemble(spec, obs, "random_effective", 2500, 42, workers=1)
    three = run_ensemble(spec, obs, "random_effective", 2500, 42, workers=3)
    assert one == three
    assert one.ci_low <= one.variance <= one.ci_high
    assert one.variance > 0


def test_two_sample_variance_identity(monkeypatch):
    # forced draws: the streaming aggregate must reproduce the textbook
    # two-sample variance exactly
    forced = np.array([0.25, 0.75])
    monkeypatch.setattr(estimator_mod, "_run_chunk",
                        lambda plan, seed, start, count: forced.copy())
    spec = CircuitSpec(n=2, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    est = run_ensemble(spec, PauliString.from_text("ZZ"), "fixed_slot(0)", 2, 5)
    assert est.mean == 0.5
    assert est.variance == (0.75 - 0.25) ** 2 / 2
    assert est.ci_low <= est.variance <= est.ci_high


def test_two_sample_variance_identity_real_draws():
    spec = CircuitSpec(n=3, l=1, s=1, entangler="cz_brick",
                       generator_policy="full", init_kind="zeros")
    obs = PauliString.from_text("ZZZ")
    g = sample_gradients(spec, obs, "fixed_slot(1)", 2, 17)
    est = run_ensemble(spec, obs, "fixed_slot(1)", 2, 17)
    assert est.variance == pytest.approx((g[1] - g[0]) ** 2 / 2, rel=1e-12)
    assert est.mean == pytest.approx(g.mean(), rel=1e-12)


def test_fixed_slot_outside_light_cone_identically_zero():
    # slot 5 is active but ineffective for the top-qubit observable
    g = sample_gradients(NINE_SLOT, TOP_Z, "fixed_slot(5)", 64, 9)
    assert np.all(g == 0.0)
    est = run_ensemble(NINE_SLOT, TOP_Z, "fixed_slot(5)", 64, 9)
    assert est.variance == 0.0 and est.mean == 0.0
    assert est.ci_low == 0.0 and est.ci_high == 0.0


def test_all_pruned_random_all_is_exactly_zero():
    spec = CircuitSpec(n=2, l=2, s=1, entangler="cz_brick",
                       generator_policy="full", init_kind="zeros",
                       active_mask=(False,) * 4)
    est = run_ensemble(spec, PauliString.from_text("ZZ"), "random_all", 500, 3)
    assert est.variance == 0.0 and est.mean == 0.0


def test_error_cases():
    spec = CircuitSpec(n=2, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    obs = PauliString.from_text("ZZ")
    with pytest.raises(ValueError, match="at least 2"):
        run_ensemble(spec, obs, "random_all", 1, 0)
    with pytest.raises(ValueError, match="out of range"):
        run_ensemble(spec, obs, "fixed_slot(7)", 10, 0)
    with pytest.raises(ValueError, match="phase"):
        run_ensemble(spec, PauliString(2, 1, 1, 1), "random_all", 10, 0)
    with pytest.raises(ValueError, match="circuit has 2"):
        run_ensemble(spec, PauliString.from_text("Z"), "random_all", 10, 0)
    with pytest.raises(ValueError, match="no effective slots"):
        run_ensemble(spec, PauliString.from_text("II"), "random_effective", 10, 0)
    pruned = CircuitSpec(n=2, l=1, s=1, entangler="none",
                         generator_policy="full", init_kind="zeros",
                         active_mask=(False, True))
    with pytest.raises(ValueError, match="inactive"):
        run_ensemble(pruned, obs, "fixed_slot(0)", 10, 0)
    with pytest.raises(ValueError, match="64"):
        run_ensemble(spec, obs, "random_all", 10, -1)
    with pytest.raises(ValueError, match="non-negative"):
        VarianceEstimate(2, 0.0, -1.0, 0.0, 0.0, 0, "random_all", 0.0)


def test_variance_matches_product_law():
    # (full, none, zeros), global Z: per-block algebra gives (1/4)(3/4)^{n-1}
    spec = CircuitSpec(n=4, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    est = run_ensemble(spec, PauliString.from_text("ZZZZ"), "fixed_slot(0)", 20000, 21)
    want = 0.25 * 0.75**3
    assert abs(est.variance - want) <= 5 * est.boot_se
    assert est.ci_low <= est.variance <= est.ci_high


def test_mean_is_zero_within_stderr():
    spec = CircuitSpec(n=5, l=2, s=1, entangler="cz_brick",
                       generator_policy="full_minus_identity", init_kind="zeros")
    est = run_ensemble(spec, PauliString.from_text("ZZZZZ"), "random_effective",
                       100_000, 23)
    stderr = np.sqrt(est.variance / est.n_samples)
    assert abs(est.mean) <= 4 * stderr


def test_k_mode_consistency_scaling():
    # uniform-over-all draws dilute the variance by n_eff / total
    spec = CircuitSpec(n=6, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    obs = PauliString.from_text("ZZZIII")
    alle = run_ensemble(spec, obs, "random_all", 40000, 77)
    eff = run_ensemble(spec, obs, "random_effective", 40000, 78)
    ratio = 3 / 6
    combined = np.hypot(alle.boot_se, ratio * eff.boot_se)
    assert abs(alle.variance - ratio * eff.variance) <= 3 * combined


def test_bootstrap_ci_coverage():
    spec = CircuitSpec(n=3, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    obs = PauliString.from_text("ZZZ")
    truth = 0.25 * 0.75**2
    hits = sum(
        est.ci_low <= truth <= est.ci_high
        for est in (
            run_ensemble(spec, obs, "fixed_slot(0)", 2000, 1000 + rep)
            for rep in range(100)
        )
    )
    assert hits >= 90


def test_mc_first_moment_examples():
    spec = CircuitSpec(n=1, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    eye = np.eye(2, dtype=complex)
    est = mc_first_moment(eye, spec, 1000, 1)
    assert np.max(np.abs(est.value - eye)) < 1e-12
    z = pauli_matrix(PauliString.from_text("Z"))
    est = mc_first_moment(z, spec, 1_000_000, 2)
    assert np.all(np.abs(est.value - z / 2) <= 5 * est.stderr + 1e-12)
    # oracle-vs-oracle on an entangled spec
    spec2 = CircuitSpec(n=2, l=2, s=1, entangler="cx_brick",
                        generator_policy="full_minus_identity", init_kind="zeros")
    a = random_hermitian(2, np.random.default_rng(5))
    est2 = mc_first_moment(a, spec2, 200_000, 3)
    exact = exact_twirl_first_moment(a, spec2)
    assert np.all(np.abs(est2.value - exact) <= 5 * est2.stderr + 1e-12)


def test_mc_second_moment_examples():
    spec = CircuitSpec(n=1, l=1, s=1, entangler="none",
                       generator_policy="full", init_kind="zeros")
    eye = np.eye(2, dtype=complex)
    est = mc_second_moment(eye, eye, eye, spec, 1000, 1)
    assert np.max(np.abs(est.value - eye)) < 1e-13
    rng = np.random.default_rng(6)
    a, b, c = (random_hermitian(1, rng) for _ in range(3))
    est = mc_second_moment(a, b, c, spec, 400_000, 2)
    want = single_gate_second_moment(a, b, c, BlockSupport(0, 1), "full")
    assert np.all(np.abs(est.value - want) <= 5 * est.stderr + 1e-12)


def test_mc_oracle_dimension_caps():
    big = CircuitSpec(n=7, l=1, s=1, entangler="none",
                      generator_policy="full", init_kind="zeros")
    eye = np.eye(1 << 7, dtype=complex)
    with pytest.raises(ValueError, match="capped"):
        mc_first_moment(eye, big, 10, 0)
    six = CircuitSpec(n=6, l=1, s=1, entangler="none",
                      generator_policy="full", init_kind="zeros")
    eye6 = np.eye(1 << 6, dtype=complex)
    with pytest.raises(ValueError, match="capped"):
        mc_second_moment(eye6, eye6, eye6, six, 10, 0)


def test_fit_exponential():
    xs = np.arange(1, 7, dtype=float)
    ys = 0.25 * (5 / 12) ** (xs - 1)
    fit = fit_exponential(xs, ys)
    assert abs(fit.base - 5 / 12) < 1e-12
    assert fit.r2 >= 1 - 1e-12
    assert fit.amplitude * fit.base == pytest.approx(0.25, rel=1e-10)
    const = fit_exponential([1.0, 2.0, 3.0], [0.7, 0.7, 0.7])
    assert const.base == pytest.approx(1.0)
    assert const.r2 == 1.0
    with pytest.raises(ValueError, match="positive"):
        fit_exponential([1, 2, 3], [1.0, -1.0, 1.0])
    with pytest.raises(ValueError, match="3 points"):
        fit_exponential([1, 2], [1.0, 1.0])
    with pytest.raises(ValueError, match="same length"):
        fit_exponential([1, 2, 3], [1.0, 1.0])
