import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2

from app import settings, worker_count
from exceptions import DirtyFinish, InfeasibleParams, QFEError, SimulationError
from qsim import SimState, concat
from residue import (Modulus, contribution_table, divides_any, dlog_tables,
                     find_prime_set_with_retry, windowed_multipliers)

LOOP1 = "loop1"
LOOP2 = "loop2"
LOOP3_STARTUP = "loop3 startup"
LOOP3_BODY = "loop3 body"
LOOP4 = "loop4"
UNLOOP3_BODY = "unloop3 body"
UNLOOP3_CLEANUP = "unloop3 cleanup"
UNLOOP2 = "unloop2"
VENT_FLUSH = "loop1 (vent flush)"
SECTIONS = (LOOP1, LOOP2, LOOP3_STARTUP, LOOP3_BODY, LOOP4, UNLOOP3_BODY, UNLOOP3_CLEANUP,
            UNLOOP2, VENT_FLUSH)

REGISTER_CONVENTIONS = ("symbols", "eh")
PRIME_BITS_DENOMINATORS = ("ell", "ell-1")
LOOP3_ADDRESSES = ("joint", "window")
LOOP4_TEMPORARIES = ("shared", "printed")
INJECTABLE_BUGS = ("skip-vent-flush", "skip-loop4-correction")

# Small parameters that keep a simulated shot in the seconds range
DESK_PARAMS = {"s": 4, "ell": 12, "w1": 4, "w3": 3, "w4": 3, "f": 14}

HALF = Fraction(1, 2)


def ceil_div(a, b):
    return -(-a // b)


def ceil_log2(x):
    return (x - 1).bit_length() if x > 0 else 0


@dataclass(frozen=True)
class AlgorithmParams:
    """
    Parameters of one approximate modular exponentiation.

    n is the modulus width; m (input qubits) follows from n and s unless given.
    The string switches select between published conventions where the
    cost model is ambiguous.
    """
    n: int
    s: int
    ell: int
    w1: int
    w3: int
    w4: int
    f: int
    m: int | None = None
    register_convention: str = "symbols"
    prime_bits_denominator: str = "ell"
    loop3_address: str = "joint"
    loop4_temporary: str = "shared"

    @property
    def input_bits(self):
        if self.m is not None:
            return self.m
        if self.register_convention == "eh":
            return ceil_div(self.n, 2) + 2 * ceil_div(self.n, 2 * self.s)
        # ceil(n/2 + n/s)
        return ceil_div(self.n * (self.s + 2), 2 * self.s)

    @property
    def y_bits(self):
        return min(ceil_div(self.n, 2 * self.s), self.input_bits - 1)

    @property
    def W1(self):
        return ceil_div(self.input_bits, self.w1)

    @property
    def W3(self):
        return ceil_div(self.ell, self.w3)

    @property
    def W4(self):
        return ceil_div(self.ell, self.w4)

    @property
    def len_m(self):
        return ceil_log2(self.input_bits)

    @property
    def sum_width(self):
        return self.ell + self.len_m

    @property
    def prime_count_estimate(self):
        denominator = self.ell - 1 if self.prime_bits_denominator == "ell-1" else self.ell
        return ceil_div(self.n * self.W1, denominator)

    @property
    def loop3_address_bits(self):
        return 2 * self.w3 if self.loop3_address == "joint" else self.w3

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self):
        problems = []
        for name in ("n", "s", "w1", "w3", "w4", "f"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        if self.ell < 2:
            problems.append("ell must be at least 2")
        if self.m is not None and self.m < 1:
            problems.append("m must be at least 1")
        if self.f > self.n:
            problems.append(f"f={self.f} exceeds n={self.n}")
        if not problems:
            if self.W3 < 2:
                problems.append(f"W3={self.W3} < 2 (ell={self.ell}, w3={self.w3})")
            elif self.W3 * self.w3 > self.sum_width:
                problems.append(f"W3*w3={self.W3 * self.w3} exceeds the sum register width {self.sum_width}")
        for value, allowed in ((self.register_convention, REGISTER_CONVENTIONS),
                               (self.prime_bits_denominator, PRIME_BITS_DENOMINATORS),
                               (self.loop3_address, LOOP3_ADDRESSES),
                               (self.loop4_temporary, LOOP4_TEMPORARIES)):
            if value not in allowed:
                problems.append(f"'{value}' is not one of {', '.join(allowed)}")
        if problems:
            raise InfeasibleParams("Infeasible parameters: " + "; ".join(problems))
        return self


@dataclass
class PrimeTables:
    """Classical tables for one residue prime."""
    p: int
    g: int
    startup: list
    # body[i - 2][t] = (T, p - T) for window i of the reduced exponent and window t of V
    body: list
    # inverse[i - 2][t] = (T', p - T') with K_i^-1 in place of K_i
    inverse: list
    # loop4[t] = (T, N_t - T) for window t of V_p
    loop4: list
    loop1_diffs: list


@dataclass
class ExecutionConfig:
    """
    Everything a shot needs, precomputed classically.

    Key features:
    - residue system certified for the modulus and multiplier set
    - per-prime lookup tables for every loop, sized to their address registers
    - the truncated modulus N_t = N >> t and the mask bound at that scale
    """
    modulus: Modulus
    g: int
    h: int | None
    mode: str
    params: AlgorithmParams
    system: object
    contributions: object
    dlogs: object
    multipliers: list
    window_products: list
    prime_tables: list
    closing_diffs: list
    t_shift: int
    truncated_modulus: int
    mask_bound: int
    epsilon: Fraction

    @property
    def prime_count(self):
        return len(self.system.primes)

    @property
    def exponent_windows(self):
        m, w1 = self.params.input_bits, self.params.w1
        return [(start, min(w1, m - start)) for start in range(0, m, w1)]


def v_windows(ell, w):
    return [(start, min(w, ell - start)) for start in range(0, ell, w)]


def epsilon_for(prime_count, params):
    """Worst-case modular deviation of the truncated dot product."""
    return Fraction(3 * prime_count * params.W4, 2 ** params.f)


def epsilon(config):
    return epsilon_for(config.prime_count, config.params)


def mask_bound_for(eps, truncated_modulus):
    """ceil(sqrt(eps) * N_t), clamped to [1, N_t], computed exactly."""
    # sqrt(a/b) = sqrt(a*b)/b
    b = eps.denominator
    z = eps.numerator * truncated_modulus ** 2 * b
    root = int(gmpy2.isqrt(z))
    bound = -(-root // b) if root * root == z else root // b + 1
    return max(1, min(truncated_modulus, bound))


def exponent_multipliers(N, g, params, mode="shor"):
    """Successive squarings of g (and of h in EH mode), one per input qubit."""
    m = params.input_bits
    if mode == "shor":
        bases = [(g, m)]
        h = None
    elif mode == "eh":
        h = pow(g, N - 1, N)
        bases = [(g, m - params.y_bits), (h, params.y_bits)]
    else:
        raise InfeasibleParams(f"Unknown mode '{mode}'")
    multipliers = []
    for base, count in bases:
        value = base % N
        for _ in range(count):
            multipliers.append(value)
            value = value * value % N
    return multipliers, h


def _prime_tables(p, g, params, dlog_rows, u, system, N, t_shift, Nt, windows):
    w3, w4 = params.w3, params.w4
    startup = [pow(g, a, p) for a in range(1 << (2 * w3))]
    vws = v_windows(params.ell, w3)
    body, inverse = [], []
    for i in range(2, params.W3):
        K = pow(g, 1 << (i * w3), p)
        K_inv = pow(K, -1, p)
        per_t, per_t_inv = [], []
        for start, width in vws:
            scale = pow(2, start, p)
            T, T_inv = [], []
            # s-major order puts entry v + (s << width) at that index
            for s in range(1 << w3):
                ks, ks_inv = pow(K, s, p), pow(K_inv, s, p)
                for v in range(1 << width):
                    T.append(v * scale * ks % p)
                    T_inv.append(v * scale * ks_inv % p)
            per_t.append((T, [p - x for x in T]))
            per_t_inv.append((T_inv, [p - x for x in T_inv]))
        body.append(per_t)
        inverse.append(per_t_inv)

    loop4 = []
    for start, width in v_windows(params.ell, w4):
        T = [((((b << start) * u) % system.L % N) >> t_shift) % Nt for b in range(1 << width)]
        loop4.append((T, [Nt - x for x in T]))

    loop1_diffs = _diff_rows(dlog_rows, windows, params.sum_width)
    return PrimeTables(p=p, g=g, startup=startup, body=body, inverse=inverse, loop4=loop4,
                       loop1_diffs=loop1_diffs)


def _diff_rows(rows, windows, width):
    mask = (1 << width) - 1
    return [[d & mask for d in row[:1 << w]] for row, (_, w) in zip(rows, windows)]


def build_config(N, g, params, mode="shor", seed=None, budget=1_000_000, workers=None,
                 system=None):
    """
    Derive multipliers, find a residue system and precompute every table of a shot.

    If exclusions force a wider prime, params.ell is raised to match and a
    warning is logged.
    """
    modulus = Modulus(int(N))
    Nv = modulus.value
    seed = settings.seed if seed is None else seed
    params.validate()
    if params.n != modulus.bit_length:
        raise InfeasibleParams(f"params.n={params.n} but the modulus has {modulus.bit_length} bits")
    if math.gcd(g, Nv) != 1:
        raise InfeasibleParams(f"g={g} shares a factor with N")

    multipliers, h = exponent_multipliers(Nv, g, params, mode)
    window_products = windowed_multipliers(multipliers, params.w1, Nv)
    forbidden = divides_any({v for table in window_products for v in table})
    if system is None:
        system = find_prime_set_with_retry(Nv, params.W1, params.ell, params.f, forbidden,
                                           seed=seed, budget=budget, workers=workers)
    if system.ell != params.ell:
        logging.warning(f"Residue primes widened from {params.ell} to {system.ell} bits")
        params = params.replace(ell=system.ell).validate()

    contributions = contribution_table(system, modulus, params.f)
    dlogs = dlog_tables(system, multipliers, params.w1, Nv, window_products=window_products)
    t_shift = contributions.t
    Nt = Nv >> t_shift
    windows = [(start, min(params.w1, params.input_bits - start))
               for start in range(0, params.input_bits, params.w1)]

    prime_tables = []
    for j, p in enumerate(system.primes):
        prime_tables.append(_prime_tables(p, dlogs.generators[p], params, dlogs.diffs[j],
                                          contributions.u[j], system, Nv, t_shift, Nt, windows))
    closing_diffs = _diff_rows(dlogs.diffs[len(system.primes)], windows, params.sum_width)
    eps = epsilon_for(len(system.primes), params)
    config = ExecutionConfig(
        modulus=modulus, g=g, h=h, mode=mode, params=params, system=system,
        contributions=contributions, dlogs=dlogs, multipliers=multipliers,
        window_products=window_products, prime_tables=prime_tables,
        closing_diffs=closing_diffs, t_shift=t_shift, truncated_modulus=Nt,
        mask_bound=mask_bound_for(eps, Nt), epsilon=eps)
    logging.info(f"Execution config ready: n={params.n}, |P|={config.prime_count}, "
                f"N_t has {Nt.bit_length()} bits, mask bound {config.mask_bound}")
    return config


def residue_of_power(config, j, e):
    """V_p: product of the selected window multipliers mod the j-th prime."""
    p = config.system.primes[j]
    vp = 1
    for (start, width), table in zip(config.exponent_windows, config.window_products):
        vp = vp * (table[(e >> start) & ((1 << width) - 1)] % p) % p
    return vp


def classical_oracle(config, e):
    """The f-bit truncated dot product approximating g^e mod N, at the N >> t scale."""
    if not 0 <= e < 1 << config.params.input_bits:
        raise SimulationError(f"Exponent {e} does not fit {config.params.input_bits} bits")
    total = 0
    for j, tables in enumerate(config.prime_tables):
        vp = residue_of_power(config, j, e)
        for (start, width), (T, _) in zip(v_windows(config.params.ell, config.params.w4), tables.loop4):
            total += T[(vp >> start) & ((1 << width) - 1)]
    return total % config.truncated_modulus


def exact_power(config, e):
    """g^e mod N from the same multipliers, for deviation checks."""
    value = 1
    for k, multiplier in enumerate(config.multipliers):
        if (e >> k) & 1:
            value = value * multiplier % config.modulus.value
    return value


@dataclass
class ModexpState:
    """A simulator plus the registers threaded through one shot."""
    qpu: SimState
    e: object
    e_windows: list
    R: object
    S: object
    exponent_vents: list
    quotient_bits: list = field(default_factory=list)
    V: object = None
    inject_bug: str | None = None


def _erase_comparison_bit(qpu, q, target, addr, threshold_table, vent, width, skip=False):
    """
    Measure away a borrow bit equal to [target >= threshold_table[addr]].

    Half of the outcomes kick back a phase that is undone by a comparison
    against a looked-up threshold, whose own erasure goes into the vent.
    """
    result = qpu.mx_rz(q)
    qpu.charge(additions=HALF, lookups=HALF)
    if result and not skip:
        with qpu.uncharged():
            temp = qpu.alloc_zero(width, "threshold")
            qpu.lookup(threshold_table, addr, temp)
            qpu.phase_flip_compare(target, temp, ">=")
            qpu.mx_rz(temp, vent=vent)


def _measured_modular_add(qpu, target, addr, table, complement, p, width):
    """target += table[addr] mod p, erasing every temporary by measurement."""
    temp = qpu.alloc_zero(width, "addend")
    qpu.lookup(complement, addr, temp)
    q = qpu.alloc_zero(1, "borrow")
    qpu.isub_quint(concat(target, q), temp)
    qpu.iadd_const(target, qpu.ghz_lookup(q, p))
    vent = qpu.new_vent(len(addr), "modular add")
    qpu.mx_rz(temp, vent=vent)
    _erase_comparison_bit(qpu, q, target, addr, table, vent, width)
    qpu.phaseup(vent, addr)


def loop1(state, config, j):
    """Add the merged discrete-log differences for prime j (j = |P| closes the sum)."""
    qpu = state.qpu
    rows = config.closing_diffs if j == config.prime_count else config.prime_tables[j].loop1_diffs
    with qpu.in_section(LOOP1):
        for addr, vent, table in zip(state.e_windows, state.exponent_vents, rows):
            temp = qpu.alloc_zero(config.params.sum_width, "dlog diff")
            qpu.lookup(table, addr, temp)
            qpu.iadd_quint(state.S, temp)
            qpu.mx_rz(temp, vent=vent)


def loop2(state, config, j):
    """Reduce the log sum mod p-1 by shifted conditional subtraction, keeping the quotient bits."""
    qpu = state.qpu
    p = config.system.primes[j]
    with qpu.in_section(LOOP2):
        for k in reversed(range(config.params.len_m)):
            c = (p - 1) << k
            q = qpu.alloc_zero(1, f"quotient {k}")
            qpu.isub_const(concat(state.S, q), c)
            qpu.iadd_const(state.S, qpu.ghz_lookup(q, c))
            state.quotient_bits.append(q)


def unloop2(state, config, j):
    qpu = state.qpu
    p = config.system.primes[j]
    with qpu.in_section(UNLOOP2):
        for k in range(config.params.len_m):
            c = (p - 1) << k
            q = state.quotient_bits.pop()
            qpu.isub_const(state.S, qpu.ghz_lookup(q, c))
            qpu.iadd_const(concat(state.S, q), c)
            qpu.del_by_equal_to(q, 0)


def loop3(state, config, j):
    """
    Exponentiate the prime's generator by the reduced log sum.

    The first two exponent windows come from one startup lookup; every later
    window multiplies by K_i^s with windowed modular additions into a fresh
    accumulator, after which the old value is measured away and its phase
    bookkeeping is pushed for unloop3.
    """
    qpu = state.qpu
    params = config.params
    tables = config.prime_tables[j]
    p, w3, ell = tables.p, params.w3, params.ell
    with qpu.in_section(LOOP3_STARTUP):
        V = qpu.alloc_zero(ell, "V")
        qpu.lookup(tables.startup, state.S[0:2 * w3], V)

    with qpu.in_section(LOOP3_BODY):
        for i in range(2, params.W3):
            s_i = state.S[i * w3:(i + 1) * w3]
            A = qpu.alloc_zero(ell, "V")
            vents, borrow_results = [], []
            for (start, width), (_, complement) in zip(v_windows(ell, w3), tables.body[i - 2]):
                addr = concat(V[start:start + width], s_i)
                temp = qpu.alloc_zero(ell, "addend")
                qpu.lookup(complement, addr, temp)
                q = qpu.alloc_zero(1, "borrow")
                qpu.isub_quint(concat(A, q), temp)
                qpu.iadd_const(A, qpu.ghz_lookup(q, p))
                vent = qpu.new_vent(len(addr), f"loop3 window {i}")
                qpu.mx_rz(temp, vent=vent)
                # phase correction for the borrow bit is deferred to unloop3
                borrow_results.append(qpu.mx_rz(q))
                vents.append(vent)
            previous_result = qpu.mx_rz(V)
            qpu.push_uncompute_info({"vents": vents, "borrows": borrow_results,
                                     "previous": previous_result})
            V = A
    state.V = V


def unloop3(state, config, j):
    qpu = state.qpu
    params = config.params
    tables = config.prime_tables[j]
    p, w3, ell = tables.p, params.w3, params.ell
    A = state.V
    with qpu.in_section(UNLOOP3_BODY):
        for i in reversed(range(2, params.W3)):
            info = qpu.pop_uncompute_info()
            s_i = state.S[i * w3:(i + 1) * w3]

            # rebuild the value loop3 measured away
            B = qpu.alloc_zero(ell, "V")
            for (start, width), (table, complement) in zip(v_windows(ell, w3), tables.inverse[i - 2]):
                addr = concat(A[start:start + width], s_i)
                _measured_modular_add(qpu, B, addr, table, complement, p, ell)
            qpu.phase_flip_if(bin(info["previous"] & qpu.value(B)).count("1") & 1)

            # subtract the windowed products back out of A
            windows = list(zip(v_windows(ell, w3), tables.body[i - 2]))
            for t in reversed(range(len(windows))):
                (start, width), (table, complement) = windows[t]
                addr = concat(B[start:start + width], s_i)
                vent = info["vents"][t]
                temp = qpu.alloc_zero(ell, "addend")
                qpu.lookup(table, addr, temp)
                q = qpu.alloc_zero(1, "borrow")
                qpu.isub_quint(concat(A, q), temp)
                qpu.phase_flip_if(info["borrows"][t] and qpu.value(q) == 0)
                qpu.iadd_const(A, qpu.ghz_lookup(q, p))
                qpu.mx_rz(temp, vent=vent)
                _erase_comparison_bit(qpu, q, A, addr, complement, vent, ell)
                qpu.phaseup(vent, addr)
            qpu.del_by_equal_to(A, 0)
            A = B

    with qpu.in_section(UNLOOP3_CLEANUP):
        addr = state.S[0:2 * w3]
        vent = qpu.new_vent(len(addr), "loop3 startup")
        qpu.mx_rz(A, vent=vent, table=tables.startup)
        qpu.phaseup(vent, addr)
    state.V = None


def loop4(state, config, j):
    """Accumulate the prime's truncated contribution into the output register mod N_t."""
    qpu = state.qpu
    params = config.params
    tables = config.prime_tables[j]
    Nt = config.truncated_modulus
    skip = state.inject_bug == "skip-loop4-correction"
    with qpu.in_section(LOOP4):
        for (start, width), (table, complement) in zip(v_windows(params.ell, params.w4), tables.loop4):
            addr = state.V[start:start + width]
            temp = qpu.alloc_zero(params.f, "contribution")
            qpu.lookup(complement, addr, temp)
            q = qpu.alloc_zero(1, "borrow")
            qpu.isub_quint(concat(state.R, q), temp)
            # add-back of the modulus rides along with the subtraction's carry chain
            qpu.iadd_const(state.R, qpu.ghz_lookup(q, Nt), fused=True)
            qpu.unlookup(complement, addr, temp)
            qpu.del_by_equal_to(temp, 0)
            vent = qpu.new_vent(len(addr), "loop4")
            _erase_comparison_bit(qpu, q, state.R, addr, table, vent, params.f, skip=skip)
            qpu.phaseup(vent, addr)


@dataclass
class ShotRecord:
    seed: int
    e: int
    mask: int
    measurement: int
    expected_measurement: int
    clean: bool
    counters: dict
    actual_counters: dict
    high_water: int
    error: str | None = None
    trace: list | None = None

    @property
    def matches_oracle(self):
        return self.measurement == self.expected_measurement

    @property
    def passed(self):
        return self.clean and self.matches_oracle


def _counts_dict(counts):
    return {section: c.as_dict() for section, c in counts.items() if section in SECTIONS}


def run_shot(config, seed, forced_e=None, forced_mask=None, trace=False, inject_bug=None,
             raise_on_dirty=True):
    """
    Simulate one masked shot and compare its output with the classical oracle.
    DirtyFinish propagates unless raise_on_dirty is False.
    """
    if inject_bug is not None and inject_bug not in INJECTABLE_BUGS:
        raise SimulationError(f"Unknown injected bug '{inject_bug}'")
    params = config.params
    qpu = SimState(seed=seed, trace=trace)
    e = qpu.alloc_uniform(params.input_bits, "exponent", forced=forced_e)
    R = qpu.alloc_uniform_range(config.mask_bound, bits=params.f, label="output", forced=forced_mask)
    S = qpu.alloc_zero(params.sum_width, "dlog sum")
    e_value, mask = qpu.value(e), qpu.value(R)
    e_windows = [e[start:start + width] for start, width in config.exponent_windows]
    state = ModexpState(qpu=qpu, e=e, e_windows=e_windows, R=R, S=S,
                        exponent_vents=[qpu.new_vent(len(w), f"exponent window {i}")
                                        for i, w in enumerate(e_windows)],
                        inject_bug=inject_bug)

    for j in range(config.prime_count):
        loop1(state, config, j)
        loop2(state, config, j)
        loop3(state, config, j)
        loop4(state, config, j)
        unloop3(state, config, j)
        unloop2(state, config, j)
    loop1(state, config, config.prime_count)

    with qpu.in_section(VENT_FLUSH):
        if inject_bug != "skip-vent-flush":
            for addr, vent in zip(e_windows, state.exponent_vents):
                qpu.phaseup(vent, addr)
    qpu.del_by_equal_to(S, 0)
    measurement = qpu.measure(R, "output")
    qpu.measure(e, "exponent")

    error = None
    try:
        qpu.verify_clean_finish()
    except DirtyFinish as exc:
        if raise_on_dirty:
            logging.error(f"Shot {seed} finished dirty: {exc}")
            raise
        error = str(exc)

    expected = (mask + classical_oracle(config, e_value)) % config.truncated_modulus
    record = ShotRecord(seed=seed, e=e_value, mask=mask, measurement=measurement,
                        expected_measurement=expected, clean=error is None,
                        counters=_counts_dict(qpu.expected),
                        actual_counters=_counts_dict(qpu.actual), high_water=qpu.high_water,
                        error=error, trace=qpu.trace)
    if not record.matches_oracle:
        logging.error(f"Shot {seed}: measured {measurement}, oracle says {expected}")
    else:
        logging.debug(f"Shot {seed} verified (e={e_value}, mask={mask})")
    return record


_worker_config = None


def _init_shot_worker(config):
    global _worker_config
    _worker_config = config


def _run_shot_job(args):
    seed, inject_bug = args
    try:
        return run_shot(_worker_config, seed, inject_bug=inject_bug, raise_on_dirty=False)
    except QFEError as exc:
        return ShotRecord(seed=seed, e=-1, mask=-1, measurement=-1, expected_measurement=0,
                          clean=False, counters={}, actual_counters={}, high_water=0,
                          error=f"{type(exc).__name__}: {exc}")


def run_shots(config, seeds, workers=None, inject_bug=None):
    """Run independent shots in a process pool; records come back in seed order."""
    seeds = list(seeds)
    workers = min(worker_count(workers), max(1, len(seeds)))
    jobs = [(seed, inject_bug) for seed in seeds]
    if workers == 1:
        _init_shot_worker(config)
        records = [_run_shot_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_shot_worker,
                                 initargs=(config,)) as executor:
            records = list(executor.map(_run_shot_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    failed = sum(not r.passed for r in records)
    logging.info(f"Ran {len(records)} shots: {len(records) - failed} passed, {failed} failed")
    return records


def _json_number(x):
    x = Fraction(x)
    return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def counters_as_json(counters):
    return {section: {k: _json_number(v) for k, v in counts.items()}
            for section, counts in counters.items()}


def serialize_shot(record):
    counters = counters_as_json(record.counters)
    return (f"seed={record.seed} e={record.e} mask={record.mask} "
            f"measurement={record.measurement} clean={int(record.clean)} "
            f"counters={json.dumps(counters, sort_keys=True, separators=(',', ':'))}")


def recover_factors_from_d(N, d):
    """Factors p <= q of N from d = p + q - 2."""
    total = d + 2
    disc = total * total - 4 * N
    if disc < 0:
        raise QFEError(f"d={d} is inconsistent with N")
    root = int(gmpy2.isqrt(disc))
    if root * root != disc:
        raise QFEError(f"d={d} does not give integer factors of N")
    p, q = (total - root) // 2, (total + root) // 2
    if p * q != N:
        raise QFEError(f"d={d} does not give integer factors of N")
    return p, q
