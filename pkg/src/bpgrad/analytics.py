"""Averaged-circuit moment maps, variance law predictors, and calibration.

The gate-set average of a conjugation U†AU over one random block rotation has
an exact closed form; composing it layer by layer gives an exact (if slow)
oracle.  The layered subset-expansion formulas evaluated here are approximate
closed forms whose fidelity the test suite measures against that oracle and
against Monte Carlo.  All tabulated constants are kept as exact rationals
until the final float conversion.

Conventions deliberately left open by the variance laws (generator policy,
entangler, initial state) are resolved empirically by calibrate_single_layer,
which scores every setting combination against the reference single-layer
closed forms and persists the outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from .circuit import CircuitSpec, policy_paulis
from .pauli import (
    BlockSupport,
    PauliString,
    check_dense,
    expand_with_identity,
    partial_trace,
    pauli_matrix,
)
from .simulator import EntanglerPattern, apply_entangler, dense_unitary

PREFACTOR_MODES = ("eq14", "figure1")
NORMALIZATIONS = ("as_written", "block_normalized")


# ---------------------------------------------------------------------------
# exact rational constants


@dataclass(frozen=True)
class TrigMoment:
    """E[cos^a(theta/2) sin^b(theta/2)] for theta uniform on [0, 2*pi)."""

    cos_power: int
    sin_power: int
    value: Fraction


def _double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def trig_moment(cos_power: int, sin_power: int) -> TrigMoment:
    if cos_power < 0 or sin_power < 0:
        raise ValueError("powers must be nonnegative")
    if cos_power % 2 or sin_power % 2:
        value = Fraction(0)
    else:
        value = Fraction(
            _double_factorial(cos_power - 1) * _double_factorial(sin_power - 1),
            _double_factorial(cos_power + sin_power),
        )
    return TrigMoment(cos_power, sin_power, value)


@dataclass(frozen=True)
class FGEntry:
    """Single-layer variance constants for block width s."""

    s: int
    F: Fraction
    G: Fraction


_G_TABLE = {
    1: Fraction(5, 12),
    2: Fraction(1, 3),
    3: Fraction(17, 126),
    4: Fraction(37, 510),
}


def _f_closed_form(s: int) -> Fraction:
    return Fraction(1, 4 * s) * Fraction(5, 12) ** (s - 1)


def fg_lookup(s: int) -> FGEntry:
    """Exact (F, G) for s in 1..4; errors beyond the tabulated range."""
    if s not in _G_TABLE:
        raise ValueError(f"no tabulated (F, G) for block width {s}")
    return FGEntry(s, _f_closed_form(s), _G_TABLE[s])


# ---------------------------------------------------------------------------
# single-gate averaged moment maps (dense, enumeration)


def _infer_qubits(a: np.ndarray) -> int:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = int(a.shape[0]).bit_length() - 1
    if 1 << n != a.shape[0]:
        raise ValueError(f"matrix dimension {a.shape[0]} is not a power of two")
    return n


def _embedded_policy_matrices(
    policy: str, block: BlockSupport, n: int
) -> list[np.ndarray]:
    return [
        pauli_matrix(block.embed(p, n)) for p in policy_paulis(policy, block.width)
    ]


def single_gate_first_moment(
    a: np.ndarray, block: BlockSupport, policy: str, n: int | None = None
) -> np.ndarray:
    """E over (P, theta) of R†(theta) A R(theta) = A/2 + (1/(2|P|)) sum_P PAP."""
    n = _infer_qubits(a) if n is None else n
    if n > 6:
        raise ValueError(f"dense first-moment map capped at n=6, got {n}")
    a = check_dense(a, n)
    block.validate(n)
    mats = _embedded_policy_matrices(policy, block, n)
    acc = np.zeros_like(a)
    for p in mats:
        acc += p @ a @ p
    return 0.5 * a + acc / (2 * len(mats))


def single_gate_second_moment(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    block: BlockSupport,
    policy: str,
    n: int | None = None,
) -> np.ndarray:
    """E over (P, theta) of R†AR · B · R†CR, exact six-term enumeration."""
    n = _infer_qubits(a) if n is None else n
    if n > 5:
        raise ValueError(f"dense second-moment map capped at n=5, got {n}")
    a = check_dense(a, n)
    b = check_dense(b, n)
    c = check_dense(c, n)
    block.validate(n)
    mats = _embedded_policy_matrices(policy, block, n)
    quartic = float(trig_moment(4, 0).value)  # 3/8
    cross = float(trig_moment(2, 2).value)  # 1/8
    size = len(mats)
    abc = a @ b @ c
    sandwich = np.zeros_like(a)
    mixed = np.zeros_like(a)
    for p in mats:
        pap = p @ a @ p
        pcp = p @ c @ p
        sandwich += pap @ b @ pcp  # P A P B P C P: adjacent P's do not collapse
        mixed += (
            pap @ b @ c
            + a @ b @ pcp
            + a @ (p @ b @ p) @ c
            + p @ a @ b @ c @ p
            - p @ a @ b @ p @ c
            - a @ p @ b @ c @ p
        )
    return quartic * abc + quartic * sandwich / size + cross * mixed / size


def exact_twirl_first_moment(a: np.ndarray, spec: CircuitSpec) -> np.ndarray:
    """Exact E[U†AU] over the whole circuit ensemble, by map composition.

    Heisenberg order: layers are consumed last to first; within a layer the
    entangler conjugation precedes the per-block averaged maps.
    """
    n = spec.n
    if n > 6:
        raise ValueError(f"exact twirl capped at n=6, got {n}")
    a = check_dense(a, n)
    if spec.entangler != "none":
        pattern = EntanglerPattern(spec.entangler, n)
        w = dense_unitary(n, lambda v: apply_entangler(v, pattern))
    out = np.array(a, dtype=complex)
    for layer in range(spec.l - 1, -1, -1):
        if spec.entangler != "none":
            out = w.conj().T @ out @ w
        for block in range(spec.n_blocks):
            slot = layer * spec.n_blocks + block
            if not spec.active_mask[slot]:
                continue
            out = single_gate_first_moment(
                out, spec.block_support(slot), spec.generator_policy, n
            )
    return out


# ---------------------------------------------------------------------------
# layered subset expansions


def _block_qubit_sets(spec: CircuitSpec) -> list[tuple[int, ...]]:
    return [
        tuple(BlockSupport(b * spec.s, spec.s).qubits()) for b in range(spec.n_blocks)
    ]


def _subset_reduce(op: np.ndarray, n: int, qubits: tuple[int, ...]) -> np.ndarray:
    """Tr over `qubits` of op, re-embedded with (unnormalized) identity there."""
    if not qubits:
        return np.array(op, dtype=complex)
    reduced = partial_trace(op, n, qubits)
    return expand_with_identity(reduced, n, qubits)


def layered_first_moment(
    a: np.ndarray, spec: CircuitSpec, normalization: str
) -> np.ndarray:
    """Subset-expansion closed form for the layered first moment.

    prefactor * sum over block subsets sigma of
      (2^{-n/s} 3^{|sigma|})^{l-1} * 2^{-s|sigma|} * Tr_sigma(A) (x) I_sigma,
    with prefactor (1/2)^n for as_written and (1/2)^{n/s} for block_normalized
    (at s = 1 the two coincide).  This is a formula under test, not an oracle:
    exact_twirl_first_moment is the ground truth it is measured against.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    n = spec.n
    if n > 6:
        raise ValueError(f"dense subset expansion capped at n=6, got {n}")
    if spec.n_blocks > 12:
        raise ValueError("subset expansion capped at 12 blocks")
    a = check_dense(a, n)
    blocks = _block_qubit_sets(spec)
    nb = spec.n_blocks
    if normalization == "as_written":
        prefactor = 0.5**n
    else:
        prefactor = 0.5**nb
    acc = np.zeros((1 << n, 1 << n), dtype=complex)
    for size in range(nb + 1):
        for sigma in combinations(range(nb), size):
            qubits = tuple(q for b in sigma for q in blocks[b])
            weight = (2.0**-nb * 3.0**size) ** (spec.l - 1) * 2.0 ** (-spec.s * size)
            acc += weight * _subset_reduce(a, n, qubits)
    return prefactor * acc


def layered_second_moment(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    spec: CircuitSpec,
    normalization: str = "as_written",
) -> np.ndarray:
    """Leading-term subset expansion for E[U†AU · B · U†CU].

    (3/8)^{n/s} * sum over sigma of
      (8^{-n} 3^{|sigma|+n/s})^{l-1} * 2^{-s|sigma|} * (Tr_sigma(AC) (x) I) B.

    The remainder is omitted; comparisons must apply the documented tolerance
    floor kappa*8^{-n}.  Both normalization tokens are accepted and evaluate
    identically: the written prefactor is already per-block, so the
    first-moment normalization ambiguity has no analogue here.  Every
    comparison site uses a = c, where the A/C product order inside the
    partial trace is immaterial.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    n = spec.n
    if n > 5:
        raise ValueError(f"dense subset expansion capped at n=5, got {n}")
    a = check_dense(a, n)
    b = check_dense(b, n)
    c = check_dense(c, n)
    blocks = _block_qubit_sets(spec)
    nb = spec.n_blocks
    ac = a @ c
    acc = np.zeros((1 << n, 1 << n), dtype=complex)
    for size in range(nb + 1):
        for sigma in combinations(range(nb), size):
            qubits = tuple(q for bl in sigma for q in blocks[bl])
            weight = (8.0**-n * 3.0 ** (size + nb)) ** (spec.l - 1) * 2.0 ** (
                -spec.s * size
            )
            acc += weight * _subset_reduce(ac, n, qubits)
    return (3.0 / 8.0) ** nb * (acc @ b)


# ---------------------------------------------------------------------------
# variance predictors


def predict_single_layer_variance(
    n: int, s: int, n_eff: int, prefactor_mode: str
) -> float:
    """Closed-form single-layer gradient variance.

    eq14 mode carries the s*N_eff/n prefactor; figure1 mode carries a constant
    s (the two coincide when N_eff = n/s only up to that factor s — an
    ambiguity in the source laws, so both are first-class).  N_eff = 0 gives 0.
    """
    if prefactor_mode not in PREFACTOR_MODES:
        raise ValueError(f"unknown prefactor mode {prefactor_mode!r}")
    if n_eff < 0:
        raise ValueError("N_eff must be nonnegative")
    if n_eff == 0:
        return 0.0
    entry = fg_lookup(s)
    law = float(entry.F) * float(entry.G) ** (n_eff - 1)
    if prefactor_mode == "eq14":
        return (s * n_eff / n) * law
    return s * law


def predict_deep_variance(n: int, s: int, n_eff: int, l: int, c0: float) -> float:
    """Deep-circuit law c0 * (9/32)^n * s*N_eff/(n*l); c0 is always fitted."""
    if l < 1:
        raise ValueError("need at least one layer")
    if n_eff < 0:
        raise ValueError("N_eff must be nonnegative")
    return c0 * (9.0 / 32.0) ** n * (s * n_eff) / (n * l)


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationSetting:
    generator_policy: str
    entangler: str
    init_kind: str

    @property
    def setting_id(self) -> str:
        return f"{self.generator_policy}:{self.entangler}:{self.init_kind}"


DEFAULT_SETTINGS_GRID: tuple[CalibrationSetting, ...] = tuple(
    CalibrationSetting(policy, entangler, init)
    for policy in ("full_minus_identity", "full", "xyz_only")
    for entangler in ("none", "cz_brick", "cx_brick")
    for init in ("zeros", "plus")
)


@dataclass
class SettingReport:
    setting: CalibrationSetting
    matched: bool
    F_hat: float
    G_hat: float
    r2: float
    score: float  # max over n of |ln(var_mc / formula)|; lower is closer
    per_n: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "setting": vars(self.setting),
            "matched": self.matched,
            "F_hat": self.F_hat,
            "G_hat": self.G_hat,
            "r2": self.r2,
            "score": self.score,
            "per_n": self.per_n,
        }


@dataclass
class CalibrationReport:
    settings: list[SettingReport]
    selected: CalibrationSetting
    any_matched: bool
    n_range: tuple[int, ...]
    samples: int
    master_seed: int

    def to_dict(self) -> dict:
        return {
            "schema": "calibration-report/1",
            "master_seed": self.master_seed,
            "samples": self.samples,
            "n_range": list(self.n_range),
            "any_matched": self.any_matched,
            "selected": vars(self.selected),
            "settings": [s.to_dict() for s in self.settings],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationReport":
        settings = []
        for entry in data["settings"]:
            settings.append(
                SettingReport(
                    setting=CalibrationSetting(**entry["setting"]),
                    matched=entry["matched"],
                    F_hat=entry["F_hat"],
                    G_hat=entry["G_hat"],
                    r2=entry["r2"],
                    score=entry["score"],
                    per_n=entry["per_n"],
                )
            )
        return cls(
            settings=settings,
            selected=CalibrationSetting(**data["selected"]),
            any_matched=data["any_matched"],
            n_range=tuple(data["n_range"]),
            samples=data["samples"],
            master_seed=data["master_seed"],
        )


def reference_single_layer_formula(n: int) -> float:
    """The s=1 single-layer reference law (1/4)(5/12)^{n-1}, exact rationals."""
    return float(Fraction(1, 4) * Fraction(5, 12) ** (n - 1))


def _loglinear_fit(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    """Least squares of ln y on x; returns (intercept, slope, r2)."""
    logs = np.log(ys)
    slope, intercept = np.polyfit(xs, logs, 1)
    fitted = intercept + slope * xs
    ss_res = float(np.sum((logs - fitted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(intercept), float(slope), r2


def derive_run_seed(master_seed: int, *key: int) -> int:
    """A decorrelated 63-bit seed for a tagged sub-run of a master seed."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def calibrate_single_layer(
    settings_grid: tuple[CalibrationSetting, ...],
    n_range: tuple[int, ...],
    samples: int,
    seed: int,
    variance_fn=None,
) -> CalibrationReport:
    """Score every setting against the s=1 single-layer reference law.

    For each (policy, entangler, init) setting, Monte Carlo variances of the
    slot-0 gradient are estimated for single-layer s=1 circuits with a global
    Z observable across n_range (all slots are exchangeable there, so a fixed
    slot loses no generality).  A setting "matches" when every n agrees with
    the reference law within max(15%, 3 bootstrap SE).  Whether or not any
    matches, a log-linear fit per setting yields (F_hat, G_hat, r2), and the
    canonical setting is the one with the smallest worst-case log deviation,
    ties broken by grid order.
    """
    if samples < 10**4:
        raise ValueError("calibration needs at least 1e4 samples")
    if variance_fn is None:
        from .estimator import run_ensemble

        def variance_fn(spec, observable, n_samples, master_seed):
            est = run_ensemble(
                spec, observable, "fixed_slot(0)", n_samples, master_seed, workers=1
            )
            return est.variance, est.boot_se

    reports = []
    for idx, setting in enumerate(settings_grid):
        per_n = []
        ok = True
        for n in n_range:
            spec = CircuitSpec(
                n=n,
                l=1,
                s=1,
                entangler=setting.entangler,
                generator_policy=setting.generator_policy,
                init_kind=setting.init_kind,
            )
            observable = PauliString.from_text("Z" * n)
            run_seed = derive_run_seed(seed, idx, n)
            var, boot_se = variance_fn(spec, observable, samples, run_seed)
            formula = reference_single_layer_formula(n)
            tolerance = max(0.15 * formula, 3.0 * boot_se)
            ok = ok and abs(var - formula) <= tolerance
            per_n.append(
                {
                    "n": n,
                    "var_mc": var,
                    "stderr": boot_se,
                    "formula": formula,
                }
            )
        variances = np.array([row["var_mc"] for row in per_n])
        ns = np.array([row["n"] for row in per_n], dtype=float)
        if np.all(variances > 0):
            intercept, slope, r2 = _loglinear_fit(ns - 1.0, variances)
            f_hat, g_hat = math.exp(intercept), math.exp(slope)
            score = float(
                np.max(
                    np.abs(
                        np.log(variances)
                        - np.log([row["formula"] for row in per_n])
                    )
                )
            )
        else:
            f_hat = g_hat = r2 = 0.0
            score = math.inf
        reports.append(
            SettingReport(
                setting=setting,
                matched=ok,
                F_hat=f_hat,
                G_hat=g_hat,
                r2=r2,
                score=score,
                per_n=per_n,
            )
        )
    best = min(range(len(reports)), key=lambda i: reports[i].score)
    return CalibrationReport(
        settings=reports,
        selected=settings_grid[best],
        any_matched=any(r.matched for r in reports),
        n_range=tuple(n_range),
        samples=samples,
        master_seed=seed,
    )
