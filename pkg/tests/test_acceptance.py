"""Acceptance checks: one test per shipped claim, one line per claim.

Each test pins the claim's tolerance, sample budget, and master seed, so
every number here is byte-reproducible.  Three claims are marked strict
xfail: they implement checks whose target laws the code base demonstrably
does not satisfy (the deviations are systematic, not statistical); their
reasons document what fails and by how much.
"""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from bpgrad.analytics import (
    DEFAULT_SETTINGS_GRID,
    NORMALIZATIONS,
    calibrate_single_layer,
    derive_run_seed,
    exact_twirl_first_moment,
    layered_first_moment,
    layered_second_moment,
)
from bpgrad.circuit import CircuitSpec, draw_instance, effective_parameters
from bpgrad.cli import DEFAULT_CALIBRATION_SEED, main
from bpgrad.estimator import (
    fit_exponential,
    mc_second_moment,
    run_ensemble,
    sample_gradients,
    sample_stream,
)
from bpgrad.experiments import (
    CONFIG_SCHEMA,
    FIGURE_SEEDS,
    fit_through_origin,
    read_rows,
    run_figure,
)
from bpgrad.gradients import (
    grad_commutator,
    grad_finite_difference,
    grad_parameter_shift,
)
from bpgrad.pauli import (
    BlockSupport,
    PauliString,
    pauli_matrix,
    random_hermitian,
    twirl_sum,
    twirl_sum_closed_form,
    twirl_sum_second,
)

LIGHT_CONE_SPEC = CircuitSpec(n=6, l=3, s=2, entangler="cz_brick")
LIGHT_CONE_OBS = PauliString.from_text("ZIIIII")


@pytest.fixture(scope="session")
def calibration(tmp_path_factory):
    """The full settings-grid calibration, shared by the single-layer tests."""
    start = time.monotonic()
    report = calibrate_single_layer(
        DEFAULT_SETTINGS_GRID, tuple(range(2, 11)), 2 * 10**4, DEFAULT_CALIBRATION_SEED
    )
    elapsed = time.monotonic() - start
    out = tmp_path_factory.mktemp("calibration")
    path = out / "calibration.json"
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report, path, elapsed


def test_twirl_identities():
    """Block twirl closed form entrywise, and a traceless second remainder."""
    start = time.monotonic()
    rng = np.random.default_rng(101)
    worst_first = 0.0
    for _ in range(100):
        s = int(rng.integers(1, 3))
        n = int(rng.integers(s, 5))
        block = BlockSupport(int(rng.integers(0, n - s + 1)), s)
        a = random_hermitian(n, rng)
        dev = np.max(
            np.abs(twirl_sum(a, block, n) - twirl_sum_closed_form(a, block, n))
        )
        worst_first = max(worst_first, float(dev))
    worst_trace = 0.0
    for _ in range(100):
        s = int(rng.integers(1, 3))
        n = int(rng.integers(s, 5))
        block = BlockSupport(int(rng.integers(0, n - s + 1)), s)
        a, b, c = (random_hermitian(n, rng) for _ in range(3))
        _, eps = twirl_sum_second(a, b, c, block, n)
        worst_trace = max(worst_trace, abs(complex(np.trace(eps))))
    assert time.monotonic() - start < 10.0
    assert worst_first <= 1e-12
    assert worst_trace <= 1e-10


def test_gradient_triple_agreement():
    """Parameter shift vs commutator (1e-10) and central diff h=1e-4 (1e-6)."""
    start = time.monotonic()
    checked = 0
    worst_comm = 0.0
    worst_fd = 0.0
    i = 0
    while checked < 200:
        stream = sample_stream(1200 + i, 0)
        i += 1
        n = int(stream.integers(2, 9))
        widths = [s for s in (1, 2, 3) if n % s == 0]
        s = widths[int(stream.integers(0, len(widths)))]
        policies = (
            ("full", "full_minus_identity", "xyz_only")
            if s == 1
            else ("full", "full_minus_identity")
        )
        spec = CircuitSpec(
            n=n,
            l=int(stream.integers(1, 4)),
            s=s,
            entangler=("none", "cz_brick", "cx_brick")[i % 3],
            generator_policy=policies[i % len(policies)],
            init_kind=("zeros", "plus")[i % 2],
        )
        instance = draw_instance(spec, stream)
        letters = ["IZXY"[int(c)] for c in stream.integers(0, 4, size=n)]
        if set(letters) == {"I"}:
            letters[0] = "Z"
        observable = PauliString.from_text("".join(letters))
        k = int(stream.integers(0, spec.total_slots))
        ps = grad_parameter_shift(instance, observable, k)
        worst_comm = max(
            worst_comm, abs(ps - grad_commutator(instance, observable, k))
        )
        worst_fd = max(
            worst_fd, abs(ps - grad_finite_difference(instance, observable, k, 1e-4))
        )
        checked += 1
    assert time.monotonic() - start < 60.0
    assert checked == 200
    assert worst_comm <= 1e-10
    assert worst_fd <= 1e-6


def test_light_cone_zero_gradients():
    """The 9-slot brick example: dead slots have identically zero gradients."""
    effective = effective_parameters(LIGHT_CONE_SPEC, LIGHT_CONE_OBS)
    assert effective == frozenset({0, 1, 2, 3, 4, 6})
    dead = (5, 7, 8)
    worst = 0.0
    for slot in dead:
        stream = sample_stream(77_000 + slot, 0)
        for _ in range(100):
            instance = draw_instance(LIGHT_CONE_SPEC, stream)
            worst = max(
                worst, abs(grad_parameter_shift(instance, LIGHT_CONE_OBS, slot))
            )
        short_circuit = sample_gradients(
            LIGHT_CONE_SPEC, LIGHT_CONE_OBS, f"fixed_slot({slot})", 100, 3
        )
        assert np.all(short_circuit == 0.0)
    assert worst <= 1e-12


@pytest.mark.xfail(
    strict=True,
    reason=(
        "the exact layered twirl is unital as required, but neither "
        "normalization mode of the layered first-moment formula tracks it at "
        "three layers (already at n=1, s=1 the formula returns 1.25*I for the "
        "identity), so no mode agrees on the full grid"
    ),
)
def test_unitality_and_first_moment_normalization():
    """Exact twirl unitality, and exactly one matching formula normalization."""
    rng = np.random.default_rng(404)
    specs = [
        CircuitSpec(n=n, l=l, s=s, entangler="none", generator_policy="full")
        for n in (1, 2, 3, 4)
        for s in (1, 2)
        if n % s == 0
        for l in (1, 2, 3)
    ]
    for spec in specs:
        eye = np.eye(1 << spec.n, dtype=complex)
        assert np.max(np.abs(exact_twirl_first_moment(eye, spec) - eye)) <= 1e-12
    surviving = []
    for mode in NORMALIZATIONS:
        worst = 0.0
        for spec in specs:
            inputs = [np.eye(1 << spec.n, dtype=complex)] + [
                random_hermitian(spec.n, rng) for _ in range(3)
            ]
            for a in inputs:
                dev = np.max(
                    np.abs(
                        layered_first_moment(a, spec, mode)
                        - exact_twirl_first_moment(a, spec)
                    )
                )
                worst = max(worst, float(dev))
        if worst <= 1e-10:
            surviving.append(mode)
    assert len(surviving) == 1, f"surviving normalization modes: {surviving}"


@pytest.mark.xfail(
    strict=True,
    reason=(
        "the leading-term second-moment expansion is only exact at one qubit: "
        "at n=2 its omitted remainder deviates by ~0.3 while the documented "
        "floor is 10*8^-2 ~ 0.156, a systematic gap ~100x the MC noise"
    ),
)
def test_second_moment_leading_term_vs_mc():
    """Leading-term layered second moment vs the dense MC oracle."""
    start = time.monotonic()
    failures = []
    for n in (1, 2):
        observable = pauli_matrix(PauliString.from_text("Z" * n))
        floor = 10.0 * 8.0 ** (-n)
        for l in (1, 2):
            spec = CircuitSpec(n=n, l=l, s=1, entangler="none", generator_policy="full")
            approx = layered_second_moment(
                observable, observable, observable, spec, "as_written"
            )
            mc = mc_second_moment(
                observable, observable, observable, spec, 10**6, 500 + 10 * n + l
            )
            dev = np.abs(mc.value - approx)
            tol = np.maximum(5.0 * mc.stderr, floor)
            if not np.all(dev <= tol):
                failures.append((n, l, float(np.max(dev - tol))))
    assert time.monotonic() - start < 600.0
    assert not failures, f"(n, l, excess) over tolerance: {failures}"


@pytest.mark.xfail(
    strict=True,
    reason=(
        "reproduction gap, deliberately surfaced: no convention in the "
        "settings grid reproduces the reference single-layer constants "
        "(closest law is (1/3)(2/3)^(n-1), not (1/4)(5/12)^(n-1)), and the "
        "fallback fit-quality path fails too because cx-brick conventions "
        "decay in two-qubit stairs (R^2 ~ 0.22-0.29 < 0.98)"
    ),
)
def test_single_layer_calibration(calibration):
    """Either a convention matches the reference law, or all fits are clean."""
    report, _, elapsed = calibration
    assert elapsed < 900.0
    outcome_a = False
    if report.any_matched:
        for entry in report.settings:
            if not entry.matched:
                continue
            ok = True
            for n in (4, 6, 8):
                spec = CircuitSpec(
                    n=n,
                    l=1,
                    s=2,
                    entangler=entry.setting.entangler,
                    generator_policy=entry.setting.generator_policy,
                    init_kind=entry.setting.init_kind,
                )
                est = run_ensemble(
                    spec,
                    PauliString.from_text("Z" * n),
                    "fixed_slot(0)",
                    2 * 10**4,
                    derive_run_seed(DEFAULT_CALIBRATION_SEED, 2, n),
                )
                formula = (5 / 48) * (1 / 3) ** (n // 2 - 1)
                tolerance = max(0.15 * formula, 3.0 * est.boot_se)
                ok = ok and abs(est.variance - formula) <= tolerance
            outcome_a = outcome_a or ok
    outcome_b = all(entry.r2 >= 0.98 for entry in report.settings)
    assert outcome_a or outcome_b, (
        f"matched={report.any_matched}, "
        f"min R2={min(e.r2 for e in report.settings):.3f}"
    )


def test_variance_vs_support_trend(calibration, tmp_path):
    """Variance strictly decreasing in observable support, log-linear fit."""
    _, calibration_path, _ = calibration
    start = time.monotonic()
    paths = run_figure(
        "fig2",
        tmp_path,
        samples=10**4,
        master_seed=FIGURE_SEEDS["fig2"],
        calibration=calibration_path,
        render=False,
    )
    rows = read_rows(paths.csv)
    assert time.monotonic() - start < 600.0
    for mode in ("fixed_slot(0)", "random_effective"):
        series = sorted(
            {(r.n_eff, r.var_est) for r in rows if r.k_mode == mode}
        )
        values = [v for _, v in series]
        assert len(values) == 18
        assert all(
            values[i] > values[i + 1] for i in range(17)
        ), f"not strictly decreasing for {mode}"
        fit = fit_exponential(
            np.array([m for m, _ in series], float), np.array(values)
        )
        assert fit.r2 >= 0.95


def test_deep_saturation_and_decay(tmp_path):
    """Depth saturation within 10% and decay base in the log-slope band."""
    start = time.monotonic()
    paths = run_figure(
        "fig3", tmp_path, samples=10**4, master_seed=FIGURE_SEEDS["fig3"], render=False
    )
    rows = read_rows(paths.csv)
    extra = json.loads(paths.manifest.read_text())["extra"]
    assert time.monotonic() - start < 1200.0
    better = extra["better_k_mode"]
    values = {
        (r.n, r.l): r.var_est
        for r in rows
        if r.k_mode == better and r.n % 2 == 0 and r.l in (100, 150)
    }
    for n in (2, 4, 6, 8, 10):
        saturated, reference = values[(n, 150)], values[(n, 100)]
        assert abs(saturated - reference) <= 0.10 * reference, (
            f"n={n}: l=150 variance {saturated:.3e} not within 10% of "
            f"l=100 variance {reference:.3e}"
        )
    tail = sorted(
        (r.n, r.var_est)
        for r in rows
        if r.k_mode == better and r.l == 150 and r.n % 2 == 0
    )
    fit = fit_exponential(
        np.array([n for n, _ in tail], float), np.array([v for _, v in tail])
    )
    slope = math.log(fit.base)
    assert -1.2685 * 1.2 <= slope <= -1.2685 * 0.8, f"ln-slope {slope:.4f}"


def test_collapse_sn_over_l(tmp_path):
    """Pruned deep grids collapse onto s*N_eff/l through the origin."""
    start = time.monotonic()
    paths = run_figure(
        "fig4", tmp_path, samples=10**4, master_seed=FIGURE_SEEDS["fig4"], render=False
    )
    rows = read_rows(paths.csv)
    assert time.monotonic() - start < 900.0
    zero_rows = [r for r in rows if r.n_eff == 0]
    assert zero_rows and all(r.var_est == 0.0 for r in zero_rows)
    xs = [r.s * r.n_eff / r.l for r in rows]
    ys = [r.var_est for r in rows]
    _, r2 = fit_through_origin(xs, ys)
    assert r2 >= 0.9, f"pooled through-origin R2 {r2:.4f}"
    assert {r.s for r in rows} == {1, 2, 4}


def test_csv_determinism(tmp_path):
    """Worker count never changes a sweep's CSV bytes."""
    config = {
        "schema": CONFIG_SCHEMA,
        "figure_tag": "determinism",
        "circuit": {"n": 4, "l": 2, "s": 1, "entangler": "cz_brick"},
        "observable": "Z^n",
        "k_mode": "random_all",
        "n_samples": 2500,
        "master_seed": 6,
        "c0": 40.0,
        "sweep": [{"axis": "l", "values": [1, 2]}],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    assert main(["sample", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert (
        main(
            [
                "sample",
                "--config",
                str(path),
                "--workers",
                "3",
                "--out",
                str(tmp_path / "b"),
            ]
        )
        == 0
    )
    first = (tmp_path / "a" / "determinism.csv").read_bytes()
    second = (tmp_path / "b" / "determinism.csv").read_bytes()
    assert first == second
