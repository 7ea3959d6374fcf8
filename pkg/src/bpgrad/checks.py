"""Named self-verification checks behind the `verify` CLI command.

The fast level re-derives the load-bearing invariants in under two minutes:
twirl identities, three-way gradient agreement, light-cone zeros, estimator
determinism, and the frozen predictor constants.  The full level adds Monte
Carlo comparisons against the exact moment maps and the single-layer
variance law.  Each check returns a (name, passed, detail) record; the CLI
prints one line per check and exits nonzero if any failed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .analytics import (
    exact_twirl_first_moment,
    fg_lookup,
    predict_single_layer_variance,
    single_gate_first_moment,
    single_gate_second_moment,
)
from .circuit import CircuitSpec, draw_instance, effective_parameters
from .estimator import (
    fit_exponential,
    mc_first_moment,
    mc_second_moment,
    run_ensemble,
    sample_gradients,
    sample_stream,
)
from .experiments import fit_through_origin
from .gradients import grad_commutator, grad_finite_difference, grad_parameter_shift
from .pauli import BlockSupport, PauliString, pauli_matrix, random_hermitian

_LIGHT_CONE_SPEC = CircuitSpec(n=6, l=3, s=2, entangler="cz_brick")
_LIGHT_CONE_OBS = PauliString.from_text("ZIIIII")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_twirl_identities() -> CheckResult:
    """First/second moment maps: unitality, trace, and a frozen value."""
    worst = 0.0
    eye = np.eye(4, dtype=complex)
    rng = np.random.default_rng(7)
    a = random_hermitian(2, rng)
    for policy in ("full", "full_minus_identity", "xyz_only"):
        for block in (BlockSupport(0, 1), BlockSupport(0, 2)):
            if policy == "xyz_only" and block.width > 1:
                continue
            out = single_gate_first_moment(eye, block, policy, 2)
            worst = max(worst, float(np.max(np.abs(out - eye))))
            moved = single_gate_first_moment(a, block, policy, 2)
            worst = max(worst, abs(np.trace(moved) - np.trace(a)))
    z = pauli_matrix(PauliString.from_text("Z"))
    frozen = single_gate_first_moment(z, BlockSupport(0, 1), "full", 1)
    worst = max(worst, float(np.max(np.abs(frozen - z / 2.0))))
    second = single_gate_second_moment(z, z, z, BlockSupport(0, 1), "full", 1)
    worst = max(worst, float(np.max(np.abs(second - z / 2.0))))
    return CheckResult(
        "twirl-identities", worst < 1e-12, f"max deviation {worst:.2e}"
    )


def _check_gradient_three_way() -> CheckResult:
    """Parameter shift, finite difference, and commutator rule agree."""
    worst_ps = 0.0
    worst_fd = 0.0
    for seed in range(6):
        stream = sample_stream(900 + seed, 0)
        spec = CircuitSpec(
            n=int(stream.integers(2, 5)),
            l=int(stream.integers(1, 4)),
            s=1,
            entangler=("none", "cz_brick", "cx_brick")[seed % 3],
            generator_policy=("full", "full_minus_identity", "xyz_only")[seed % 3],
            init_kind=("zeros", "plus")[seed % 2],
        )
        instance = draw_instance(spec, stream)
        observable = PauliString.from_text(
            "".join("IZXY"[int(c)] for c in stream.integers(0, 4, size=spec.n))
        )
        k = int(stream.integers(0, spec.total_slots))
        ps = grad_parameter_shift(instance, observable, k)
        worst_ps = max(worst_ps, abs(ps - grad_commutator(instance, observable, k)))
        fd = grad_finite_difference(instance, observable, k, 1e-6)
        worst_fd = max(worst_fd, abs(ps - fd))
    passed = worst_ps < 1e-10 and worst_fd < 1e-5
    return CheckResult(
        "gradient-three-way",
        passed,
        f"shift-vs-commutator {worst_ps:.2e}, shift-vs-fd {worst_fd:.2e}",
    )


def _check_light_cone_zeros() -> CheckResult:
    """A slot outside the observable's light cone has exactly zero gradient."""
    effective = effective_parameters(_LIGHT_CONE_SPEC, _LIGHT_CONE_OBS)
    dead = [k for k in range(_LIGHT_CONE_SPEC.total_slots) if k not in effective]
    if not dead:
        return CheckResult("light-cone-zeros", False, "no ineffective slot found")
    grads = sample_gradients(
        _LIGHT_CONE_SPEC, _LIGHT_CONE_OBS, f"fixed_slot({dead[0]})", 64, 3
    )
    live = sample_gradients(
        _LIGHT_CONE_SPEC, _LIGHT_CONE_OBS, f"fixed_slot({min(effective)})", 64, 3
    )
    passed = bool(np.all(grads == 0.0)) and bool(np.any(live != 0.0))
    return CheckResult(
        "light-cone-zeros",
        passed,
        f"{len(dead)} dead slots; max |dead grad| {float(np.max(np.abs(grads))):.1e}",
    )


def _check_first_moment_unitality() -> CheckResult:
    """The exact layered twirl fixes the identity and preserves trace."""
    worst = 0.0
    for l in (1, 2, 3):
        spec = CircuitSpec(n=2, l=l, s=1, entangler="cz_brick")
        eye = np.eye(4, dtype=complex)
        worst = max(
            worst, float(np.max(np.abs(exact_twirl_first_moment(eye, spec) - eye)))
        )
        a = random_hermitian(2, np.random.default_rng(11 + l))
        out = exact_twirl_first_moment(a, spec)
        worst = max(worst, abs(np.trace(out) - np.trace(a)))
    return CheckResult(
        "first-moment-unitality", worst < 1e-12, f"max deviation {worst:.2e}"
    )


def _check_estimator_determinism() -> CheckResult:
    """Same seed, same estimate; two-sample variance identity holds."""
    spec = CircuitSpec(n=3, l=2, s=1, entangler="cx_brick", init_kind="plus")
    obs = PauliString.from_text("ZZI")
    first = run_ensemble(spec, obs, "random_effective", 600, 5, workers=1)
    second = run_ensemble(spec, obs, "random_effective", 600, 5, workers=1)
    same = first == second
    pair = sample_gradients(spec, obs, "fixed_slot(0)", 2, 9)
    est = run_ensemble(spec, obs, "fixed_slot(0)", 2, 9)
    expected = (pair[1] - pair[0]) ** 2 / 2.0
    identity = abs(est.variance - expected) <= 1e-14 * max(expected, 1e-300)
    return CheckResult(
        "estimator-determinism",
        same and identity,
        f"replay equal: {same}, 2-sample identity dev "
        f"{abs(est.variance - expected):.1e}",
    )


def _check_predictor_constants() -> CheckResult:
    """Frozen variance-law constants and prefactor-mode relations."""
    expected = {
        1: (Fraction(1, 4), Fraction(5, 12)),
        2: (Fraction(5, 96), Fraction(1, 3)),
        3: (Fraction(25, 1728), Fraction(17, 126)),
        4: (Fraction(125, 27648), Fraction(37, 510)),
    }
    ok = True
    for s, (f, g) in expected.items():
        entry = fg_lookup(s)
        ok = ok and entry.F == f and entry.G == g
    eq14 = predict_single_layer_variance(4, 2, 2, "eq14")
    fig1 = predict_single_layer_variance(4, 2, 2, "figure1")
    law = float(Fraction(5, 96) * Fraction(1, 3))
    ok = ok and math.isclose(eq14, law, rel_tol=1e-15)
    ok = ok and math.isclose(fig1, 2 * law, rel_tol=1e-15)
    ok = ok and predict_single_layer_variance(4, 2, 0, "eq14") == 0.0
    return CheckResult("predictor-constants", ok, "F, G, and prefactors as frozen")


def _check_fit_sanity() -> CheckResult:
    """Fitters recover exact laws they are used on."""
    xs = np.arange(1.0, 9.0)
    ys = 0.25 * (5.0 / 12.0) ** xs
    fit = fit_exponential(xs, ys)
    ok = abs(fit.base - 5.0 / 12.0) < 1e-12 and fit.r2 > 1.0 - 1e-12
    beta, r2 = fit_through_origin(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.7, 1.4]))
    ok = ok and abs(beta - 0.7) < 1e-14 and r2 > 1.0 - 1e-14
    return CheckResult("fit-sanity", ok, f"exp base dev {abs(fit.base - 5 / 12):.1e}")


def _check_first_moment_mc() -> CheckResult:
    """Exact layered first moment matches dense Monte Carlo."""
    spec = CircuitSpec(n=2, l=2, s=1, entangler="cx_brick")
    rng = np.random.default_rng(31)
    a = random_hermitian(2, rng)
    exact = exact_twirl_first_moment(a, spec)
    mc = mc_first_moment(a, spec, 2 * 10**5, 77)
    passed = bool(np.all(np.abs(mc.value - exact) <= 5.0 * mc.stderr + 1e-12))
    dev = float(np.max(np.abs(mc.value - exact)))
    return CheckResult(
        "first-moment-vs-mc",
        passed,
        f"max dev {dev:.2e} vs 5*stderr bounds",
    )


def _check_second_moment_mc() -> CheckResult:
    """Single-gate second moment matches dense Monte Carlo."""
    spec = CircuitSpec(n=1, l=1, s=1)
    rng = np.random.default_rng(33)
    a, b = random_hermitian(1, rng), random_hermitian(1, rng)
    exact = single_gate_second_moment(
        a, b, a, BlockSupport(0, 1), spec.generator_policy, 1
    )
    mc = mc_second_moment(a, b, a, spec, 4 * 10**5, 78)
    passed = bool(np.all(np.abs(mc.value - exact) <= 5.0 * mc.stderr + 1e-12))
    dev = float(np.max(np.abs(mc.value - exact)))
    return CheckResult(
        "second-moment-vs-mc",
        passed,
        f"max dev {dev:.2e} vs 5*stderr bounds",
    )


def _check_variance_law_mc() -> CheckResult:
    """Estimator reproduces the exact single-layer product law."""
    spec = CircuitSpec(n=4, l=1, s=1, generator_policy="full")
    obs = PauliString.from_text("ZZZZ")
    est = run_ensemble(spec, obs, "fixed_slot(0)", 2 * 10**4, 21)
    law = 0.25 * 0.75**3
    dev = abs(est.variance - law)
    bound = 5.0 * est.boot_se
    return CheckResult(
        "variance-law-vs-mc", dev <= bound, f"dev {dev:.2e} vs 5*boot_se {bound:.2e}"
    )


def _check_worker_determinism() -> CheckResult:
    """Chunked aggregation is byte-identical across worker counts."""
    spec = CircuitSpec(n=3, l=2, s=1, entangler="cz_brick")
    obs = PauliString.from_text("ZZZ")
    one = run_ensemble(spec, obs, "random_all", 2500, 13, workers=1)
    two = run_ensemble(spec, obs, "random_all", 2500, 13, workers=2)
    return CheckResult("worker-determinism", one == two, f"equal: {one == two}")


FAST_CHECKS = (
    _check_twirl_identities,
    _check_gradient_three_way,
    _check_light_cone_zeros,
    _check_first_moment_unitality,
    _check_estimator_determinism,
    _check_predictor_constants,
    _check_fit_sanity,
)

FULL_CHECKS = FAST_CHECKS + (
    _check_first_moment_mc,
    _check_second_moment_mc,
    _check_variance_law_mc,
    _check_worker_determinism,
)


def run_checks(level: str = "fast") -> list[CheckResult]:
    """Run the named checks for a level ('fast' or 'full')."""
    if level not in ("fast", "full"):
        raise ValueError(f"unknown check level {level!r}")
    checks = FAST_CHECKS if level == "fast" else FULL_CHECKS
    return [check() for check in checks]
