import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from multiprocessing import Manager

import gmpy2
import numpy as np
import sympy

from app import random_bits, rng_stream, worker_count
from exceptions import (BudgetExhausted, DlogUndefined, InsufficientPrimes, NoGenerator,
                        ResidueError, ResidueFormatError)

FORMAT_HEADER = "# qfe-residue v1"

# RSA-2048 challenge modulus (617 decimal digits)
RSA2048_MODULUS = int(
    "25195908475657893494027183240048398571429282126204032027777137836043662020707595556264018525"
    "88078440691829064124951508218929855914917618450280848912007284499268739280728777673597141834"
    "72702618963750149718246911650776133798590957000973304597488084284017974291006424586918171951"
    "18746121515172654632282216869987549182422433637259085141865462043576798423387184774447920739"
    "93423658482382428119816381501067481045166037730605620161967625613384414360383390441495263443"
    "21901146575444541784240209246165157233507787077498171257724679629263863563732899121548314381"
    "67899885040445364023527381951378636564391212010397122822120720357"
)

# Extra primes listed next to the contiguous 22-bit range of the published RSA-2048 set
PUBLISHED_EXTRA_PRIMES = (2097769, 3484783, 3814501, 3814543, 3814561, 3814583, 3814609)
PUBLISHED_RANGE_START = 3814620
PUBLISHED_ELL = 22
PUBLISHED_F = 32

# Swap steps between checks of the shared best-so-far state
CHECK_INTERVAL = 4096
# Slack (in bits) kept above N^W1 when swapping primes under the float log-sum
LOG_MARGIN = 1e-3


@dataclass(frozen=True)
class Modulus:
    value: int

    def __post_init__(self):
        if self.value < 3 or self.value % 2 == 0:
            raise ResidueError(f"Modulus must be odd and at least 3, got {self.value}")

    @property
    def bit_length(self):
        # ceil(log2 N)
        return (self.value - 1).bit_length()

    def __int__(self):
        return self.value


def _as_int(N):
    return N.value if isinstance(N, Modulus) else int(N)


@dataclass(frozen=True)
class ResidueSystem:
    """
    A certified set of equal-width primes whose product L sits close to a multiple of N.

    Key features:
    - L is large enough to hold any product of W1 values below N without wrapping
    - deviation is the exact rational distance of L from a multiple of N
    - l_mod_n is the incrementally tracked L mod N, re-checked by verify_system
    """
    primes: tuple
    ell: int
    L: int
    deviation: Fraction
    f_target: int
    W1: int
    l_mod_n: int

    @classmethod
    def from_primes(cls, primes, N, f_target=0, W1=1):
        primes = tuple(int(p) for p in primes)
        if not primes:
            raise ResidueError("A residue system needs at least one prime")
        L = _product(primes)
        Nv = _as_int(N)
        return cls(primes=primes, ell=max(p.bit_length() for p in primes), L=L,
                   deviation=modular_deviation(L, Nv), f_target=f_target, W1=W1,
                   l_mod_n=L % Nv)

    def __len__(self):
        return len(self.primes)

    @property
    def certified(self):
        return self.deviation < Fraction(1, 2 ** self.f_target)


@dataclass(frozen=True)
class ContributionTable:
    u: tuple
    C: tuple
    t: int


@dataclass
class DlogTable:
    """
    Discrete logs of every windowed multiplier product, per prime.

    logs[p][i][v] is the exponent D with g_p^D = W_i[v] mod p. diffs[j][i][v]
    is the merged transition D_{p_j} - D_{p_{j-1}}; diffs has one more row than
    there are primes, the last row undoing the final prime's logs.
    """
    generators: dict
    logs: dict
    diffs: list = field(default_factory=list)


def modular_deviation(a, N):
    """Distance of a from the nearest multiple of N, as a fraction of N."""
    Nv = _as_int(N)
    r = a % Nv
    return Fraction(min(r, Nv - r), Nv)


def _product(values):
    values = [gmpy2.mpz(v) for v in values]
    if not values:
        return 1
    # Balanced product tree keeps the operands similar in size
    while len(values) > 1:
        paired = [values[i] * values[i + 1] for i in range(0, len(values) - 1, 2)]
        if len(values) % 2:
            paired.append(values[-1])
        values = paired
    return int(values[0])


@lru_cache(maxsize=None)
def ell_bit_prime_count(ell):
    """Number of odd primes with exactly ell bits."""
    if ell < 2:
        return 0
    return int(sympy.primepi(2 ** ell) - sympy.primepi(2 ** (ell - 1)))


def divides_any(values):
    """Predicate that rejects primes dividing any of the given values."""
    values = [gmpy2.mpz(v) for v in values]

    def forbidden(p):
        return any(v % p == 0 for v in values)

    return forbidden


def prime_candidates(ell, forbidden=None, N=None):
    """
    Odd ell-bit primes, minus those the exclusion predicate rejects.
    With N given, primes sharing a factor with N are dropped too.
    """
    lo = max(3, 1 << (ell - 1))
    primes = list(sympy.primerange(lo, 1 << ell))
    if forbidden is None and N is None:
        return primes
    Nz = gmpy2.mpz(_as_int(N)) if N is not None else None
    kept = [p for p in primes
            if (Nz is None or Nz % p != 0) and (forbidden is None or not forbidden(p))]
    if len(kept) < len(primes):
        logging.debug(f"Excluded {len(primes) - len(kept)} of {len(primes)} {ell}-bit primes")
    return kept


def windowed_multipliers(multipliers, w, N):
    """
    Group multipliers into windows of w and tabulate every product of a window's subset.

    Returns a list with one 2^w-entry table per window; entry v multiplies the
    multipliers selected by the bits of v, reduced mod N. A final short window
    still gets a full table whose unused high bits select nothing.
    """
    Nv = _as_int(N)
    tables = []
    for start in range(0, len(multipliers), w):
        window = [int(x) % Nv for x in multipliers[start:start + w]]
        table = [1] * (1 << w)
        for v in range(1, 1 << w):
            low = v & -v
            bit = low.bit_length() - 1
            factor = window[bit] if bit < len(window) else 1
            table[v] = table[v ^ low] * factor % Nv
        tables.append(table)
    return tables


def _swap_search_worker(args):
    """
    One seeded worker of the incremental swap search.

    Must be at module level so ProcessPoolExecutor can pickle it.
    """
    N, candidates, k, need_log2, f, seed, worker, steps, shared = args
    rng = rng_stream(seed, f"residue-swap-{worker}")
    Nz = gmpy2.mpz(N)
    logs = np.log2(np.asarray(candidates, dtype=np.float64))
    order = rng.permutation(len(candidates))
    chosen = [int(i) for i in order[:k]]
    unused = [int(i) for i in order[k:]]

    log_total = float(logs[chosen].sum())
    while log_total < need_log2 + LOG_MARGIN:
        if not unused:
            raise InsufficientPrimes(f"Worker {worker} ran out of primes while growing the set")
        idx = unused.pop()
        chosen.append(idx)
        log_total += float(logs[idx])

    lmod = gmpy2.mpz(_product(candidates[i] for i in chosen)) % Nz
    inverses = {}

    def inverse(i):
        if i not in inverses:
            inverses[i] = gmpy2.invert(candidates[i], Nz)
        return inverses[i]

    best = min(lmod, Nz - lmod)
    best_chosen = list(chosen)
    best_lmod = lmod
    done = best << f < Nz
    step = 0
    while not done and step < steps and unused:
        batch = min(CHECK_INTERVAL, steps - step)
        out_picks = rng.integers(0, len(chosen), size=batch)
        in_picks = rng.integers(0, len(unused), size=batch)
        for a, b in zip(out_picks, in_picks):
            step += 1
            old, new = chosen[a], unused[b]
            new_log = log_total - logs[old] + logs[new]
            if new_log < need_log2 + LOG_MARGIN:
                continue
            lmod = lmod * inverse(old) % Nz * candidates[new] % Nz
            chosen[a], unused[b] = new, old
            log_total = float(new_log)
            dev = min(lmod, Nz - lmod)
            if dev < best:
                best, best_lmod, best_chosen = dev, lmod, list(chosen)
                if best << f < Nz:
                    done = True
                    break
        if shared is not None:
            lock, found = shared
            with lock:
                if done:
                    found.value = min(found.value, worker)
                elif found.value < worker:
                    # a lower-numbered worker already succeeded and will be picked
                    break
    return worker, int(best), int(best_lmod), sorted(candidates[i] for i in best_chosen), step


def find_prime_set(N, W1, ell, f, forbidden_divisor_check=None, seed=0, budget=1_000_000,
                   workers=None):
    """
    Random swap search for a set of ell-bit primes with modular deviation below 2^-f.

    The set starts with ceil(n*W1/ell) random admissible primes (grown until
    their product exceeds N^W1), then single primes are swapped in and out
    while L mod N is updated with one inverse and one multiplication. Each
    worker walks its own seeded stream; the lowest-numbered successful worker
    wins so the result depends only on the seed and worker count.
    """
    modulus = N if isinstance(N, Modulus) else Modulus(int(N))
    Nv = modulus.value
    n = modulus.bit_length
    candidates = prime_candidates(ell, forbidden_divisor_check, Nv)
    need_log2 = W1 * math.log2(Nv)
    available_log2 = float(np.log2(np.asarray(candidates, dtype=np.float64)).sum()) if candidates else 0.0
    if available_log2 < need_log2 + LOG_MARGIN:
        raise InsufficientPrimes(
            f"{len(candidates)} admissible {ell}-bit primes cannot reach N^{W1} "
            f"({available_log2:.1f} of {need_log2:.1f} bits)")

    k = min(len(candidates), max(1, math.ceil(n * W1 / ell)))
    workers = worker_count(workers)
    per_worker = max(1, budget // workers)
    logging.info(f"Prime search: {len(candidates)} candidates, {k} primes of {ell} bits, "
                f"target 2^-{f}, budget {budget} over {workers} worker(s)")

    if workers == 1:
        results = [_swap_search_worker((Nv, candidates, k, need_log2, f, seed, 0, per_worker, None))]
    else:
        with Manager() as manager:
            shared = (manager.Lock(), manager.Value('i', workers))
            jobs = [(Nv, candidates, k, need_log2, f, seed, i, per_worker, shared)
                    for i in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(_swap_search_worker, jobs))

    results.sort(key=lambda r: r[0])
    successes = [r for r in results if r[1] << f < Nv]
    total_steps = sum(r[4] for r in results)
    if not successes:
        best = min(results, key=lambda r: (r[1], r[0]))
        deviation = Fraction(best[1], Nv)
        logging.error(f"Prime search exhausted {total_steps} swaps; best deviation {float(deviation):.3e}")
        raise BudgetExhausted(
            f"No prime set with deviation below 2^-{f} within {budget} swaps "
            f"(best {float(deviation):.3e})", best_deviation=deviation)

    worker, dev, lmod, primes, _ = successes[0]
    L = _product(primes)
    if L < Nv ** W1:
        raise ResidueError(f"Selected primes fall short of N^{W1}; raise LOG_MARGIN")
    system = ResidueSystem(primes=tuple(primes), ell=ell, L=L, deviation=Fraction(dev, Nv),
                           f_target=f, W1=W1, l_mod_n=lmod)
    logging.info(f"Prime search succeeded in worker {worker} after {total_steps} swaps: "
                f"{len(primes)} primes, deviation {float(system.deviation):.3e}")
    return system


def find_prime_set_with_retry(N, W1, ell, f, forbidden_divisor_check=None, seed=0,
                              budget=1_000_000, workers=None, max_increments=3):
    """find_prime_set, moving to ell+1 whenever exclusions leave too few primes."""
    for attempt in range(max_increments + 1):
        try:
            return find_prime_set(N, W1, ell + attempt, f, forbidden_divisor_check, seed,
                                  budget, workers)
        except InsufficientPrimes as exc:
            if attempt == max_increments:
                raise
            logging.warning(f"{exc}; retrying with ell={ell + attempt + 1}")


@lru_cache(maxsize=64)
def contribution_factors(primes):
    """u_j = (L/p_j) * ((L/p_j)^-1 mod p_j) for a tuple of primes."""
    L = _product(primes)
    factors = []
    for p in primes:
        rest = L // p
        factors.append(rest * int(gmpy2.invert(rest % p, p)))
    return tuple(factors)


def contribution_table(system, N, f):
    """
    Contribution factors plus the truncated per-bit constants C[j][k].

    C[j][k] keeps the top f bits of (u_j << k) mod L mod N, reduced mod N >> t
    where t = n - f.
    """
    modulus = N if isinstance(N, Modulus) else Modulus(int(N))
    Nv = modulus.value
    t = modulus.bit_length - f
    if t < 0:
        raise ResidueError(f"Cannot keep {f} bits of a {modulus.bit_length}-bit modulus")
    u = contribution_factors(system.primes)
    Nt = Nv >> t
    rows = []
    for uj in u:
        rows.append(tuple(((((uj << k) % system.L) % Nv) >> t) % Nt for k in range(system.ell)))
    return ContributionTable(u=u, C=tuple(rows), t=t)


def crt_reconstruct(system, residues, N=None):
    """Combine residues with the contribution factors; reduced mod N when given."""
    if len(residues) != len(system.primes):
        raise ResidueError(f"Expected {len(system.primes)} residues, got {len(residues)}")
    for r, p in zip(residues, system.primes):
        if not 0 <= r < p:
            raise ResidueError(f"Residue {r} is out of range for prime {p}")
    u = contribution_factors(system.primes)
    value = sum(int(r) * uj for r, uj in zip(residues, u)) % system.L
    return value % _as_int(N) if N is not None else value


def find_generator(p):
    """Smallest generator of the multiplicative group mod prime p."""
    if p == 2:
        return 1
    order = p - 1
    factors = sympy.primefactors(order)
    for g in range(2, p):
        if all(pow(g, order // q, p) != 1 for q in factors):
            return g
    raise NoGenerator(f"No generator found mod {p}; is it prime?")


class BabyStepGiantStep:
    """Shared baby-step table for repeated discrete logs base g mod p."""

    def __init__(self, g, p):
        self.g = g
        self.p = p
        self.order = p - 1
        self.step = math.isqrt(self.order) + 1
        self.baby = {}
        cur = 1
        for j in range(self.step):
            self.baby.setdefault(cur, j)
            cur = cur * g % p
        self.giant = pow(g, -self.step, p)

    def log(self, value):
        value %= self.p
        if value == 0:
            raise DlogUndefined(f"0 has no discrete log mod {self.p}")
        cur = value
        for i in range(self.step + 1):
            j = self.baby.get(cur)
            if j is not None:
                return (i * self.step + j) % self.order
            cur = cur * self.giant % self.p
        raise NoGenerator(f"{self.g} does not generate the group mod {self.p}")


def dlog_tables(system, multipliers, window_width=1, N=None, window_products=None):
    """
    Discrete logs of every windowed multiplier product for every prime.

    window_width is the window width w1. Pass window_products to reuse tables
    already built with windowed_multipliers; otherwise N is required when the
    window is wider than one bit.
    """
    if window_products is None:
        if window_width == 1 and N is None:
            window_products = [[1, int(x)] for x in multipliers]
        elif N is None:
            raise ResidueError("Windowed products need the modulus")
        else:
            window_products = windowed_multipliers(multipliers, window_width, N)

    generators, logs = {}, {}
    for p in system.primes:
        g = find_generator(p)
        solver = BabyStepGiantStep(g, p)
        per_window = []
        for table in window_products:
            row = []
            for value in table:
                if value % p == 0:
                    raise DlogUndefined(f"Multiplier product {value} is divisible by {p}")
                row.append(solver.log(value))
            per_window.append(row)
        generators[p] = g
        logs[p] = per_window

    diffs = []
    previous = None
    for p in list(system.primes) + [None]:
        current = logs[p] if p is not None else None
        diffs.append([
            [(current[i][v] if current else 0) - (previous[i][v] if previous else 0)
             for v in range(len(window_products[i]))]
            for i in range(len(window_products))
        ])
        previous = current
    logging.debug(f"Built discrete-log tables for {len(system.primes)} primes, "
                 f"{len(window_products)} windows")
    return DlogTable(generators=generators, logs=logs, diffs=diffs)


def verify_system(system, N, strict_width=True):
    """
    Recompute every certificate of a residue system from scratch.
    Returns True when all hold, logging the first failure otherwise.
    """
    Nv = _as_int(N)
    for p in system.primes:
        if not gmpy2.is_prime(p):
            logging.error(f"{p} is not prime")
            return False
        if strict_width and p.bit_length() != system.ell:
            logging.error(f"{p} does not have {system.ell} bits")
            return False
    if any(Nv % p == 0 for p in system.primes):
        logging.error("A prime of the residue system divides N")
        return False
    if len(set(system.primes)) != len(system.primes):
        logging.error("Residue system repeats a prime")
        return False
    L = math.prod(system.primes)
    if L != system.L:
        logging.error("Stored L does not match the product of the primes")
        return False
    if L % Nv != system.l_mod_n:
        logging.error("Incrementally tracked L mod N disagrees with direct recomputation")
        return False
    if L < Nv ** system.W1:
        logging.error(f"L is smaller than N^{system.W1}")
        return False
    deviation = modular_deviation(L, Nv)
    if deviation != system.deviation or deviation >= Fraction(1, 2 ** system.f_target):
        logging.error(f"Deviation certificate fails: {float(deviation):.3e}")
        return False
    return True


def serialize_system(system, N):
    lines = [
        FORMAT_HEADER,
        f"N {_as_int(N):x}",
        f"ell {system.ell}",
        f"f {system.f_target}",
        f"W1 {system.W1}",
        f"primes {len(system.primes)}",
    ]
    lines.extend(str(p) for p in system.primes)
    lines.append(f"deviation {system.deviation.numerator}/{system.deviation.denominator}")
    return "\n".join(lines) + "\n"


def parse_system(text):
    """Parse and re-verify a serialized residue system. Returns (system, N)."""
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ResidueFormatError("Missing residue system header")
    try:
        fields = {}
        for line in lines[1:6]:
            key, value = line.split()
            fields[key] = value
        N = int(fields["N"], 16)
        ell, f, W1 = int(fields["ell"]), int(fields["f"]), int(fields["W1"])
        count = int(fields["primes"])
        primes = tuple(int(x) for x in lines[6:6 + count])
        key, value = lines[6 + count].split()
        if key != "deviation" or len(primes) != count:
            raise ValueError("truncated prime list")
        num, den = value.split("/")
        deviation = Fraction(int(num), int(den))
    except (KeyError, ValueError, IndexError) as exc:
        raise ResidueFormatError(f"Malformed residue system: {exc}") from exc

    L = math.prod(primes)
    system = ResidueSystem(primes=primes, ell=ell, L=L, deviation=deviation, f_target=f,
                           W1=W1, l_mod_n=L % N)
    if not verify_system(system, N):
        raise ResidueFormatError("Residue system certificate does not verify")
    return system, N


def published_prime_set():
    """The published 22-bit prime set for the RSA-2048 challenge modulus."""
    primes = list(PUBLISHED_EXTRA_PRIMES)
    primes.extend(sympy.primerange(PUBLISHED_RANGE_START, 1 << PUBLISHED_ELL))
    return tuple(sorted(primes))


def certify_challenge_modulus(N, f=PUBLISHED_F):
    """
    Check a supplied modulus against the published prime set.
    Returns (certified, deviation).
    """
    deviation = modular_deviation(_product(published_prime_set()), N)
    certified = deviation < Fraction(1, 2 ** f)
    logging.info(f"Published prime set deviation {float(deviation):.3e} "
                f"({'certified' if certified else 'not certified'} below 2^-{f})")
    return certified, deviation


def random_semiprime(bits, seed=0):
    """
    Reproducible product of two distinct primes with exactly `bits` bits.
    Both factors have about bits/2 bits; used for desk-scale moduli.
    """
    if bits < 6:
        raise ResidueError(f"Cannot build a {bits}-bit semiprime of two odd primes")
    rng = rng_stream(seed, f"semiprime-{bits}")
    low = bits // 2
    while True:
        p = int(sympy.nextprime(random_bits(rng, low - 1) | (1 << (low - 1))))
        q = int(sympy.nextprime(random_bits(rng, bits - low - 1) | (1 << (bits - low - 1))))
        N = p * q
        if p != q and N.bit_length() == bits:
            return N
