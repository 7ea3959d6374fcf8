"""Monte Carlo gradient-variance estimation over random circuit ensembles.

The estimator draws one independent random stream per sample, keyed by
(master_seed, sample_index), so results are a pure function of the seed and
sample count: worker count and scheduling cannot change a single bit of the
output.  Per-sample work runs in compiled kernels fed by integer generator
codes; Pauli objects never appear on the hot path.

Draws per sample replicate `circuit.sample_instance` exactly (generator codes
for the active slots, then angles), followed by one extra draw for the target
slot in the random k modes.  Gradients are parameter-shift values.  Samples
whose target lies outside the observable's light cone are identically zero by
the light-cone theorem and short-circuit to exact 0.0.

Also hosts the dense MC oracles used to cross-check the analytic moment maps
(verification only; single shared stream, not the per-sample discipline) and
a small log-linear exponential fitter.
"""
from __future__ import annotations

import dataclasses
import re
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ._kernels import _chunk_dense, _chunk_product
from .circuit import CircuitSpec, effective_parameters, policy_paulis
from .pauli import PauliString, check_dense
from .simulator import cx_brick_source, cz_brick_signs

_CHUNK = 1024
_BOOT_REPS = 200
_SAMPLE_TAG = 1
_BOOT_TAG = 2
_ENT_KINDS = {"none": 0, "cz_brick": 1, "cx_brick": 2}

K_MODE_KINDS = ("fixed_slot", "random_effective", "random_all")


@dataclasses.dataclass(frozen=True)
class KMode:
    """Target-slot policy: which parameter each sample differentiates."""

    kind: str
    slot: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in K_MODE_KINDS:
            raise ValueError(f"unknown k mode kind {self.kind!r}")
        if (self.kind == "fixed_slot") != (self.slot is not None):
            raise ValueError("fixed_slot requires a slot; random modes forbid one")

    def __str__(self) -> str:
        if self.kind == "fixed_slot":
            return f"fixed_slot({self.slot})"
        return self.kind


def parse_k_mode(text: str) -> KMode:
    """Parse a k-mode token: fixed_slot(k), random_effective, random_all."""
    text = text.strip()
    if text in ("random_effective", "random_all"):
        return KMode(text)
    m = re.fullmatch(r"fixed_slot\((\d+)\)", text)
    if m is None:
        raise ValueError(f"unrecognized k mode token {text!r}")
    return KMode("fixed_slot", int(m.group(1)))


def sample_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Independent counter-based generator for one (master_seed, sample) pair."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_SAMPLE_TAG, stream_id))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def _check_seed(master_seed: int) -> int:
    if not isinstance(master_seed, (int, np.integer)):
        raise TypeError("master_seed must be an integer")
    master_seed = int(master_seed)
    if not 0 <= master_seed < 2**64:
        raise ValueError("master_seed must fit in 64 unsigned bits")
    return master_seed


@dataclasses.dataclass(frozen=True)
class VarianceEstimate:
    """One ensemble's gradient statistics plus a bootstrap CI on the variance."""

    n_samples: int
    mean: float
    variance: float
    ci_low: float
    ci_high: float
    master_seed: int
    k_mode: str
    boot_se: float

    def __post_init__(self) -> None:
        if self.variance < 0.0:
            raise ValueError("variance must be non-negative")


def _policy_arrays(policy: str, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Local bitmask tables for a policy pool: x, z, i^{n_Y}, (-1)^{n_Y}."""
    pool = policy_paulis(policy, s)
    x = np.array([p.x_bits for p in pool], np.int64)
    z = np.array([p.z_bits for p in pool], np.int64)
    n_y = np.bitwise_count(x & z).astype(np.int64)
    pref = np.array([1j ** int(k % 4) for k in n_y], np.complex128)
    ypar = np.where(n_y % 2 == 0, 1.0, -1.0)
    return x, z, pref, ypar


@dataclasses.dataclass(frozen=True)
class _EnsemblePlan:
    """Precomputed tables handed to the kernels (and pickled to workers)."""

    product: bool
    n: int
    l: int
    s: int
    nblocks: int
    total_slots: int
    init_plus: int
    active_slots: np.ndarray
    npool: int
    pool_x: np.ndarray
    pool_z: np.ndarray
    pool_pref: np.ndarray
    pool_ypar: np.ndarray
    k_kind: str
    fixed_pos: int
    eff_pos: np.ndarray
    all_lookup: np.ndarray
    n_eff: int
    trivial_zero: bool
    # dense-path tables
    shifts: np.ndarray
    ent_kind: int
    cz_signs: np.ndarray
    cx_src: np.ndarray
    obs_x: int
    obs_z: int
    obs_pref: complex
    # product-path tables
    block_ptr: np.ndarray
    block_pos: np.ndarray
    obs_x_loc: np.ndarray
    obs_z_loc: np.ndarray
    obs_pref_loc: np.ndarray


def _build_plan(spec: CircuitSpec, observable: PauliString, mode: KMode) -> _EnsemblePlan:
    if observable.n_sites != spec.n:
        raise ValueError(
            f"observable acts on {observable.n_sites} qubits, circuit has {spec.n}"
        )
    if observable.phase_exp != 0:
        raise ValueError("observable must be a plain Pauli string (phase exponent 0)")
    n, s, nblocks, total = spec.n, spec.s, spec.n_blocks, spec.total_slots
    pool_x, pool_z, pool_pref, pool_ypar = _policy_arrays(spec.generator_policy, s)
    active = np.array(spec.active_slots, np.int64)
    pos_of = np.full(total, -1, np.int64)
    if active.size:
        pos_of[active] = np.arange(active.size)
    eff_slots = np.array(sorted(effective_parameters(spec, observable)), np.int64)
    n_eff = int(eff_slots.size)
    eff_set = frozenset(int(v) for v in eff_slots)

    fixed_pos = -1
    trivial_zero = False
    if mode.kind == "fixed_slot":
        slot = mode.slot
        if not 0 <= slot < total:
            raise ValueError(f"fixed slot {slot} out of range for {total} slots")
        if pos_of[slot] < 0:
            raise ValueError(f"fixed slot {slot} is inactive (pruned)")
        fixed_pos = int(pos_of[slot])
        trivial_zero = slot not in eff_set
    elif mode.kind == "random_effective":
        if n_eff == 0:
            raise ValueError("random_effective has no effective slots to draw from")
    else:  # random_all
        trivial_zero = n_eff == 0
    eff_pos = pos_of[eff_slots] if n_eff else np.empty(0, np.int64)
    all_lookup = np.full(total, -1, np.int64)
    if n_eff:
        all_lookup[eff_slots] = pos_of[eff_slots]

    shifts = np.array([n - (b + 1) * s for b in range(nblocks)], np.int64)
    ent_kind = _ENT_KINDS[spec.entangler]
    cz_signs = cz_brick_signs(n) if ent_kind == 1 else np.zeros(1)
    cx_src = (
        np.ascontiguousarray(cx_brick_source(n), np.int64)
        if ent_kind == 2
        else np.zeros(1, np.int64)
    )

    na = int(active.size)
    by_block: list[list[int]] = [[] for _ in range(nblocks)]
    for p in range(na):
        by_block[int(active[p]) % nblocks].append(p)
    block_ptr = np.zeros(nblocks + 1, np.int64)
    block_pos = np.empty(na, np.int64)
    at = 0
    for b in range(nblocks):
        for p in by_block[b]:
            block_pos[at] = p
            at += 1
        block_ptr[b + 1] = at

    mask_s = (1 << s) - 1
    obs_x_loc = np.empty(nblocks, np.int64)
    obs_z_loc = np.empty(nblocks, np.int64)
    obs_pref_loc = np.empty(nblocks, np.complex128)
    for b in range(nblocks):
        lx = (observable.x_bits >> int(shifts[b])) & mask_s
        lz = (observable.z_bits >> int(shifts[b])) & mask_s
        obs_x_loc[b] = lx
        obs_z_loc[b] = lz
        obs_pref_loc[b] = 1j ** (int(lx & lz).bit_count() % 4)
    obs_pref = complex(1j ** (int(observable.x_bits & observable.z_bits).bit_count() % 4))

    return _EnsemblePlan(
        product=spec.entangler == "none",
        n=n,
        l=spec.l,
        s=s,
        nblocks=nblocks,
        total_slots=total,
        init_plus=1 if spec.init_kind == "plus" else 0,
        active_slots=active,
        npool=int(pool_x.size),
        pool_x=pool_x,
        pool_z=pool_z,
        pool_pref=pool_pref,
        pool_ypar=pool_ypar,
        k_kind=mode.kind,
        fixed_pos=fixed_pos,
        eff_pos=eff_pos,
        all_lookup=all_lookup,
        n_eff=n_eff,
        trivial_zero=trivial_zero,
        shifts=shifts,
        ent_kind=ent_kind,
        cz_signs=np.asarray(cz_signs, np.float64),
        cx_src=cx_src,
        obs_x=int(observable.x_bits),
        obs_z=int(observable.z_bits),
        obs_pref=obs_pref,
        block_ptr=block_ptr,
        block_pos=block_pos,
        obs_x_loc=obs_x_loc,
        obs_z_loc=obs_z_loc,
        obs_pref_loc=obs_pref_loc,
    )


def _chunk_arrays(
    plan: _EnsemblePlan, master_seed: int, start: int, count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Materialize one chunk of per-sample draws (codes, cos, sin, targets)."""
    na = plan.active_slots.size
    codes = np.empty((count, na), np.int64)
    thetas = np.empty((count, na), np.float64)
    ks = np.empty(count, np.int64)
    for j in range(count):
        g = sample_stream(master_seed, start + j)
        codes[j] = g.integers(0, plan.npool, size=na)
        thetas[j] = g.uniform(0.0, 2.0 * np.pi, size=na)
        if plan.k_kind == "fixed_slot":
            ks[j] = plan.fixed_pos
        elif plan.k_kind == "random_effective":
            ks[j] = plan.eff_pos[int(g.integers(0, plan.n_eff))]
        else:
            ks[j] = plan.all_lookup[int(g.integers(0, plan.total_slots))]
    return codes, np.cos(0.5 * thetas), np.sin(0.5 * thetas), ks


def _run_chunk(plan: _EnsemblePlan, master_seed: int, start: int, count: int) -> np.ndarray:
    codes, coss, sins, ks = _chunk_arrays(plan, master_seed, start, count)
    out = np.empty(count, np.float64)
    if plan.product:
        _chunk_product(
            codes, coss, sins, ks, plan.active_slots, plan.nblocks, plan.s,
            plan.block_ptr, plan.block_pos, plan.pool_x, plan.pool_z,
            plan.pool_pref, plan.pool_ypar, plan.obs_x_loc, plan.obs_z_loc,
            plan.obs_pref_loc, plan.init_plus, out,
        )
    else:
        _chunk_dense(
            codes, coss, sins, ks, plan.active_slots, plan.total_slots,
            plan.nblocks, plan.n, plan.pool_x, plan.pool_z, plan.pool_pref,
            plan.pool_ypar, plan.shifts, plan.ent_kind, plan.cz_signs,
            plan.cx_src, plan.obs_x, plan.obs_z, plan.obs_pref,
            plan.init_plus, out,
        )
    return out


def _worker_chunk(args: tuple[_EnsemblePlan, int, int, int]) -> np.ndarray:
    return _run_chunk(*args)


def _collect_chunks(
    plan: _EnsemblePlan, master_seed: int, n_samples: int, workers: int
) -> list[np.ndarray]:
    tasks = [
        (start, min(_CHUNK, n_samples - start)) for start in range(0, n_samples, _CHUNK)
    ]
    if workers <= 1:
        return [_run_chunk(plan, master_seed, s, c) for s, c in tasks]
    args = [(plan, master_seed, s, c) for s, c in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker_chunk, args, chunksize=1))


def sample_gradients(
    spec: CircuitSpec,
    observable: PauliString,
    k_mode: KMode | str,
    n_samples: int,
    master_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Raw per-sample parameter-shift gradients, in sample order."""
    mode = parse_k_mode(k_mode) if isinstance(k_mode, str) else k_mode
    master_seed = _check_seed(master_seed)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    plan = _build_plan(spec, observable, mode)
    if plan.trivial_zero:
        return np.zeros(n_samples)
    return np.concatenate(_collect_chunks(plan, master_seed, n_samples, workers))


def _bootstrap_ci(grads: np.ndarray, master_seed: int) -> tuple[float, float, float]:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_BOOT_TAG,))
    bg = np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))
    m = grads.shape[0]
    reps = np.empty(_BOOT_REPS)
    for i in range(_BOOT_REPS):
        idx = bg.integers(0, m, size=m)
        reps[i] = np.var(grads[idx], ddof=1)
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return float(lo), float(hi), float(reps.std(ddof=1))


def run_ensemble(
    spec: CircuitSpec,
    observable: PauliString,
    k_mode: KMode | str,
    n_samples: int,
    master_seed: int,
    workers: int = 1,
) -> VarianceEstimate:
    """Estimate the gradient mean/variance over the circuit ensemble.

    Aggregation is a chunked Welford fold merged in fixed chunk order, so the
    result is byte-identical for any worker count.  The variance CI is a
    seeded percentile bootstrap (B = 200) over the retained sample vector.
    """
    mode = parse_k_mode(k_mode) if isinstance(k_mode, str) else k_mode
    master_seed = _check_seed(master_seed)
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    plan = _build_plan(spec, observable, mode)
    if plan.trivial_zero:
        return VarianceEstimate(
            n_samples, 0.0, 0.0, 0.0, 0.0, master_seed, str(mode), 0.0
        )
    parts = _collect_chunks(plan, master_seed, n_samples, workers)
    count = 0
    mean = 0.0
    m2 = 0.0
    for g in parts:
        cb = g.shape[0]
        mb = float(g.mean())
        m2b = float(((g - mb) ** 2).sum())
        tot = count + cb
        delta = mb - mean
        mean += delta * (cb / tot)
        m2 += m2b + delta * delta * (count * cb / tot)
        count = tot
    variance = m2 / (count - 1)
    grads = np.concatenate(parts)
    ci_low, ci_high, boot_se = _bootstrap_ci(grads, master_seed)
    return VarianceEstimate(
        n_samples, mean, variance, ci_low, ci_high, master_seed, str(mode), boot_se
    )


@dataclasses.dataclass(frozen=True)
class MCMomentEstimate:
    """Entrywise Monte Carlo average of a conjugated-operator expression."""

    value: np.ndarray
    stderr: np.ndarray
    n_samples: int


def _batched_unitaries(
    spec: CircuitSpec, rng: np.random.Generator, rows: int
) -> np.ndarray:
    """Dense circuit unitaries for `rows` sampled instances, stacked."""
    n, s, nblocks = spec.n, spec.s, spec.n_blocks
    dim = 1 << n
    pool_x, pool_z, pool_pref, _ = _policy_arrays(spec.generator_policy, s)
    active = set(spec.active_slots)
    na = len(active)
    pos_of = {slot: i for i, slot in enumerate(spec.active_slots)}
    codes = rng.integers(0, pool_x.size, size=(rows, na))
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=(rows, na))
    basis = np.arange(dim)
    if spec.entangler == "cz_brick":
        ent_signs = cz_brick_signs(n)
    elif spec.entangler == "cx_brick":
        ent_src = cx_brick_source(n)
    u = np.tile(np.eye(dim, dtype=np.complex128), (rows, 1, 1))
    for layer in range(spec.l):
        for block in range(nblocks):
            slot = layer * nblocks + block
            p = pos_of.get(slot)
            if p is None:
                continue
            sh = n - (block + 1) * s
            xg = (pool_x << sh)[codes[:, p]]
            zg = (pool_z << sh)[codes[:, p]]
            pref = pool_pref[codes[:, p]]
            c = np.cos(0.5 * thetas[:, p])
            t = np.sin(0.5 * thetas[:, p])
            perm = basis[None, :] ^ xg[:, None]
            sign = 1.0 - 2.0 * (np.bitwise_count(perm & zg[:, None]) & 1)
            gathered = np.take_along_axis(u, perm[:, :, None], axis=1)
            u = c[:, None, None] * u + (
                (-1j * t * pref)[:, None, None] * sign[:, :, None] * gathered
            )
        if spec.entangler == "cz_brick":
            u *= ent_signs[None, :, None]
        elif spec.entangler == "cx_brick":
            u = u[:, ent_src, :]
    return u


def _mc_average(
    spec: CircuitSpec,
    term_fn: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
    master_seed: int,
) -> MCMomentEstimate:
    master_seed = _check_seed(master_seed)
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    dim = 1 << spec.n
    rng = np.random.default_rng(master_seed)
    chunk = int(max(16, min(65536, (1 << 21) // (dim * dim))))
    acc = np.zeros((dim, dim), np.complex128)
    sq_re = np.zeros((dim, dim))
    sq_im = np.zeros((dim, dim))
    done = 0
    while done < n_samples:
        rows = min(chunk, n_samples - done)
        u = _batched_unitaries(spec, rng, rows)
        term = term_fn(u)
        acc += term.sum(axis=0)
        sq_re += (term.real**2).sum(axis=0)
        sq_im += (term.imag**2).sum(axis=0)
        done += rows
    mean = acc / done
    var_re = np.maximum(sq_re / done - mean.real**2, 0.0) * (done / (done - 1))
    var_im = np.maximum(sq_im / done - mean.imag**2, 0.0) * (done / (done - 1))
    stderr = np.sqrt((var_re + var_im) / done)
    return MCMomentEstimate(mean, stderr, done)


def mc_first_moment(
    a: np.ndarray, spec: CircuitSpec, n_samples: int, master_seed: int
) -> MCMomentEstimate:
    """MC estimate of E[U† a U] over circuit instances (verification oracle)."""
    if spec.n > 6:
        raise ValueError("dense MC oracle capped at 6 qubits")
    a = check_dense(np.asarray(a, np.complex128), spec.n)

    def term(u: np.ndarray) -> np.ndarray:
        return np.einsum("rji,jk,rkl->ril", u.conj(), a, u)

    return _mc_average(spec, term, n_samples, master_seed)


def mc_second_moment(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    spec: CircuitSpec,
    n_samples: int,
    master_seed: int,
) -> MCMomentEstimate:
    """MC estimate of E[U†aU · b · U†cU] over circuit instances."""
    if spec.n > 5:
        raise ValueError("dense MC second-moment oracle capped at 5 qubits")
    a = check_dense(np.asarray(a, np.complex128), spec.n)
    b = check_dense(np.asarray(b, np.complex128), spec.n)
    c = check_dense(np.asarray(c, np.complex128), spec.n)

    def term(u: np.ndarray) -> np.ndarray:
        ua = np.einsum("rji,jk,rkl->ril", u.conj(), a, u)
        uc = np.einsum("rji,jk,rkl->ril", u.conj(), c, u)
        return ua @ b @ uc

    return _mc_average(spec, term, n_samples, master_seed)


class ExponentialFit(NamedTuple):
    amplitude: float
    base: float
    r2: float


def fit_exponential(xs: Sequence[float], ys: Sequence[float]) -> ExponentialFit:
    """Least-squares fit of y = amplitude * base**x on log-transformed y."""
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError("xs and ys must be 1-d and the same length")
    if xs.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(ys <= 0.0):
        raise ValueError("ys must be strictly positive")
    ly = np.log(ys)
    slope, intercept = np.polyfit(xs, ly, 1)
    resid = ly - (intercept + slope * xs)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid**2).sum()) / ss_tot
    return ExponentialFit(float(np.exp(intercept)), float(np.exp(slope)), float(r2))
