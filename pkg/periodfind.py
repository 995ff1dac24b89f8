import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.special import comb, xlogy
from scipy.stats import norm
from sympy import n_order, primerange

from app import rng_stream, worker_count
from exceptions import DegeneratePeriod, StateTooLarge, ZeroProbabilityOutput

MAX_MODULUS = 1 << 16
MAX_DENSE_ENTRIES = 1 << 24
MAX_EXHAUSTIVE_SUBSETS = 10 ** 5
MIN_ORDER = 8

# Lowest suppression factor accepted at each masking proportion
SUPPRESSION_FLOORS = {0.1: 0.80, 0.01: 0.97}

CSV_COLUMNS = ("N", "g", "S", "shots", "masked_success", "unmasked_success", "suppression",
               "ci_low", "ci_high")


def multiplicative_order(g, N):
    if math.gcd(g, N) != 1:
        raise DegeneratePeriod(f"{g} is not invertible mod {N}")
    return int(n_order(g, N))


def input_bits_for(N):
    """Exponent register width giving 2^m > N^2."""
    return 2 * N.bit_length() + 1


def mask_width(S, N):
    return max(1, math.ceil(S * N))


# Dense states

@dataclass
class DenseState:
    """
    Pre-measurement state over (exponent, output) pairs, stored sparse.

    Key features:
    - amplitudes are real, nonnegative and uniform over the support
    - rows index the m-bit exponent register, columns the output value mod N
    """
    N: int
    g: int
    m: int
    mask_width: int
    amplitudes: sparse.csc_matrix

    def norm(self):
        return math.sqrt(float(np.sum(np.abs(self.amplitudes.data) ** 2)))

    @property
    def support_size(self):
        return self.amplitudes.nnz

    def output_marginal(self):
        return np.asarray(self.amplitudes.multiply(self.amplitudes).sum(axis=0)).ravel()


def masked_premeasure_state(N, g, m, S):
    """
    Uniform superposition over e of |e>|(s + g^e) mod N>, with the output register
    started in a uniform mask s < ceil(S*N). S = 0 gives the plain Shor state.
    """
    width = mask_width(S, N)
    entries = (1 << m) * width
    if N > MAX_MODULUS or entries > MAX_DENSE_ENTRIES:
        raise StateTooLarge(f"dense state for N={N}, m={m}, mask width {width} needs "
                            f"{entries} entries")
    if math.gcd(g, N) != 1:
        raise DegeneratePeriod(f"{g} is not invertible mod {N}")
    exponents = np.arange(1 << m)
    powers = np.array([pow(g, int(e), N) for e in exponents], dtype=np.int64)
    rows = np.repeat(exponents, width)
    cols = ((powers[:, None] + np.arange(width)[None, :]) % N).ravel()
    data = np.full(entries, 1 / math.sqrt(entries))
    amplitudes = sparse.csc_matrix((data, (rows, cols)), shape=(1 << m, N))
    return DenseState(N=N, g=g, m=m, mask_width=width, amplitudes=amplitudes)


@dataclass
class PeakSpectrum:
    """Frequency distribution of the exponent register after measuring the output."""
    probabilities: np.ndarray
    period: int
    m: int
    multiplier: int
    N: int
    output: int

    def peak_masses(self):
        """Probability bucketed to the nearest multiple of 2^m/P."""
        size = 1 << self.m
        ks = np.rint(np.arange(size) * self.period / size).astype(np.int64) % self.period
        return np.bincount(ks, weights=self.probabilities, minlength=self.period)

    def near_peak_mass(self):
        """Mass within 1/(2P^2) of some k/P, the window continued fractions can use."""
        size = 1 << self.m
        y = np.arange(size)
        ks = np.rint(y * self.period / size)
        distance = np.abs(y / size - ks / self.period)
        return float(self.probabilities[distance <= 1 / (2 * self.period ** 2)].sum())


def collapse_and_spectrum(state, output):
    column = state.amplitudes[:, output].toarray().ravel()
    weight = float(np.sum(column ** 2))
    if weight == 0:
        raise ZeroProbabilityOutput(f"output {output} has zero probability for N={state.N}")
    transformed = np.fft.fft(column / math.sqrt(weight), norm="ortho")
    return PeakSpectrum(probabilities=np.abs(transformed) ** 2,
                        period=multiplicative_order(state.g, state.N), m=state.m,
                        multiplier=state.g, N=state.N, output=output)


# Random-R peak law

def peak_prob_random_R(P, w, k):
    """Expected peak k probability when the w consistent exponents are a random subset."""
    if not 1 <= w <= P:
        raise ValueError(f"need 1 <= w <= P, got w={w}, P={P}")
    if k % P == 0:
        return Fraction(w, P)
    return Fraction(P - w, P * (P - 1))


def _subset_peaks(indicators, w):
    spectrum = np.abs(np.fft.fft(indicators, axis=-1)) ** 2
    return spectrum / (indicators.shape[-1] * w)


def exhaustive_R_average(P, w):
    """
    Exact average of every peak probability over all w-subsets of range(P).

    Counts ordered pair differences across all subsets; the k-th peak then
    depends only on that histogram, and the sum over it of k-th roots of unity
    is exact when the histogram is flat.
    """
    total = comb(P, w, exact=True)
    if total > MAX_EXHAUSTIVE_SUBSETS:
        raise StateTooLarge(f"C({P},{w}) = {total} subsets is too many to enumerate")
    histogram = np.zeros(P, dtype=np.int64)
    combos = itertools.combinations(range(P), w)
    while True:
        chunk = np.array(list(itertools.islice(combos, 10_000)), dtype=np.int64)
        if chunk.size == 0:
            break
        diffs = (chunk[:, :, None] - chunk[:, None, :]) % P
        histogram += np.bincount(diffs.ravel(), minlength=P)
    histogram[0] -= total * w
    off_diagonal = set(histogram[1:].tolist())
    if len(off_diagonal) > 1:
        raise ValueError(f"difference histogram for P={P}, w={w} is not flat")
    per_difference = Fraction(off_diagonal.pop() if off_diagonal else 0, total)
    averages = []
    for k in range(P):
        roots = P - 1 if k == 0 else -1
        averages.append((w + per_difference * roots) / (P * w))
    return averages


@dataclass
class MonteCarloPeaks:
    P: int
    w: int
    trials: int
    means: np.ndarray
    standard_errors: np.ndarray

    def outside_fraction(self, sigmas=3.0):
        """Share of peaks whose sample mean misses the closed form by more than sigmas."""
        expected = np.array([float(peak_prob_random_R(self.P, self.w, k)) for k in range(self.P)])
        slack = sigmas * self.standard_errors + 1e-12
        return float(np.mean(np.abs(self.means - expected) > slack))

    def agrees_with_closed_form(self, sigmas=3.0):
        return self.outside_fraction(sigmas) == 0


def random_R_monte_carlo(P, w, trials, seed=0):
    if P > 1 << 12:
        raise StateTooLarge(f"P={P} is above the sampled limit {1 << 12}")
    rng = rng_stream(seed, "random-R")
    indicators = np.zeros((trials, P))
    for t in range(trials):
        indicators[t, rng.choice(P, size=w, replace=False)] = 1
    peaks = _subset_peaks(indicators, w)
    se = peaks.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(P)
    return MonteCarloPeaks(P=P, w=w, trials=trials, means=peaks.mean(axis=0),
                           standard_errors=se)


# Order recovery

def continued_fraction_convergents(numerator, denominator):
    """Yields the convergents of numerator/denominator as Fractions."""
    h_prev, h = 0, 1
    k_prev, k = 1, 0
    while denominator:
        a, remainder = divmod(numerator, denominator)
        h_prev, h = h, a * h + h_prev
        k_prev, k = k, a * k + k_prev
        yield Fraction(h, k)
        numerator, denominator = denominator, remainder


def recover_order(y, m, g, N):
    """Smallest convergent denominator d of y/2^m with g^d = 1 mod N, or None."""
    for convergent in continued_fraction_convergents(y, 1 << m):
        d = convergent.denominator
        if d > N:
            break
        if pow(g, d, N) == 1:
            return d
    return None


def success_table(P, m, g, N):
    """Whether the peak at each k in range(P) recovers the order P."""
    size = 1 << m
    return np.array([recover_order(round(k * size / P), m, g, N) == P for k in range(P)])


# Intervals

def _binomial_loglik(p, successes, trials):
    return xlogy(successes, p) + xlogy(trials - successes, 1 - p)


def likelihood_interval(successes, trials, ratio=100):
    """Binomial hypotheses whose likelihood is within `ratio` of the maximum."""
    if trials <= 0:
        return 0.0, 1.0
    best = successes / trials
    peak = _binomial_loglik(best, successes, trials)
    drop = lambda p: _binomial_loglik(p, successes, trials) - peak + math.log(ratio)
    low = 0.0 if successes == 0 else brentq(drop, 1e-300, best)
    high = 1.0 if successes == trials else brentq(drop, best, 1 - 1e-16)
    return low, high


def suppression_interval(masked, unmasked):
    """Smallest and largest success ratios consistent with two (low, high) intervals."""
    low = masked[0] / unmasked[1] if unmasked[1] > 0 else 0.0
    high = masked[1] / unmasked[0] if unmasked[0] > 0 else math.inf
    return low, high


def ratio_interval(s1, n1, s2, n2, confidence=0.95):
    """Log-normal interval for the ratio of two binomial proportions."""
    p1, p2 = s1 / n1, s2 / n2
    if s1 == 0 or s2 == 0:
        return 0.0, math.inf
    z = norm.ppf(0.5 + confidence / 2)
    spread = z * math.sqrt((1 - p1) / s1 + (1 - p2) / s2)
    ratio = p1 / p2
    return ratio * math.exp(-spread), ratio * math.exp(spread)


# Suppression experiments

@dataclass
class SuppressionResult:
    N: int
    g: int
    S: float
    shots: int
    estimator: str
    period: int
    mask_width: int
    masked_success: float
    unmasked_success: float
    suppression: float
    ci_low: float
    ci_high: float
    zero_frequency: float
    likelihood_low: float | None = None
    likelihood_high: float | None = None

    def as_row(self):
        return {column: getattr(self, column) for column in CSV_COLUMNS}


def _consistent_exponents(powers, output, width, N):
    return ((output - powers) % N) < width


def suppression_experiment(N, g, S, shots, seed=0, estimator="conditional", likelihood=False):
    """
    Success rate with a mask of proportion S divided by the unmasked success rate.

    Each shot samples the output, forms the exponents consistent with it, and
    takes the frequency distribution of their indicator over one period: an
    exact P-point DFT, not the dense mod-2^m spectrum of collapse_and_spectrum,
    so N is not limited by the dense state size. Peak k of the P-point
    spectrum stands for the k-th peak of the dense one. The
    `conditional` estimator averages the exact success probability of that
    distribution; `sampled` draws one frequency per shot.
    """
    if estimator not in ("conditional", "sampled"):
        raise ValueError(f"unknown estimator '{estimator}'")
    P = multiplicative_order(g, N)
    if P == 1:
        raise DegeneratePeriod(f"{g} has order 1 mod {N}")
    m = input_bits_for(N)
    width = mask_width(S, N)
    wins = success_table(P, m, g, N)
    powers = np.array([pow(g, r, N) for r in range(P)], dtype=np.int64)
    rng = rng_stream(seed, f"mask-{N}-{g}-{S}-{estimator}")
    unmasked_rate = float(wins.mean())

    masked = np.empty(shots)
    zero_frequency = np.empty(shots)
    for shot in range(shots):
        output = (int(powers[rng.integers(P)]) + int(rng.integers(width))) % N
        indicator = _consistent_exponents(powers, output, width, N).astype(float)
        peaks = _subset_peaks(indicator, indicator.sum())
        zero_frequency[shot] = peaks[0]
        if estimator == "conditional":
            masked[shot] = float(peaks[wins].sum())
        else:
            masked[shot] = float(wins[rng.choice(P, p=peaks / peaks.sum())])

    masked_rate = float(masked.mean())
    suppression = masked_rate / unmasked_rate if unmasked_rate else 0.0
    if estimator == "conditional":
        half = norm.ppf(0.975) * masked.std(ddof=1) / math.sqrt(shots) if shots > 1 else 0.0
        ci_low = (masked_rate - half) / unmasked_rate
        ci_high = (masked_rate + half) / unmasked_rate
        baseline = (int(round(unmasked_rate * shots)), shots)
    else:
        unmasked_hits = int(wins[rng.integers(P, size=shots)].sum())
        baseline = (unmasked_hits, shots)
        ci_low, ci_high = ratio_interval(int(masked.sum()), shots, unmasked_hits, shots)
    result = SuppressionResult(
        N=N, g=g, S=S, shots=shots, estimator=estimator, period=P, mask_width=width,
        masked_success=masked_rate, unmasked_success=unmasked_rate, suppression=suppression,
        ci_low=ci_low, ci_high=ci_high, zero_frequency=float(zero_frequency.mean()))
    if likelihood:
        interval = suppression_interval(
            likelihood_interval(int(round(masked.sum())), shots),
            likelihood_interval(*baseline))
        result.likelihood_low, result.likelihood_high = interval
    logging.debug(f"N={N} g={g} S={S}: suppression {suppression:.4f} "
                 f"[{ci_low:.4f}, {ci_high:.4f}]")
    return result


def small_instances(count, seed=0, max_N=MAX_MODULUS):
    """Reproducible (N, g) pairs: N = p*q of distinct odd primes, g of order >= 8."""
    rng = rng_stream(seed, "instances")
    small = list(primerange(3, math.isqrt(max_N) + 1))
    instances, seen = [], set()
    attempts = 0
    while len(instances) < count:
        attempts += 1
        if attempts > 100 * count + 1000:
            raise ValueError(f"could not find {count} instances below {max_N}")
        p = int(rng.choice(small))
        partners = [q for q in primerange(3, max_N // p + 1) if q != p]
        if not partners:
            continue
        q = int(rng.choice(partners))
        N = p * q
        if N > max_N or N in seen:
            continue
        g = int(rng.integers(2, N))
        if math.gcd(g, N) != 1 or multiplicative_order(g, N) < MIN_ORDER:
            continue
        seen.add(N)
        instances.append((N, g))
    return instances


def _suppression_job(args):
    N, g, S, shots, seed, estimator, likelihood = args
    return suppression_experiment(N, g, S, shots, seed, estimator, likelihood)


def run_suppression_grid(instances, S_values, shots, seed=0, estimator="conditional",
                         likelihood=False, workers=None):
    """One suppression experiment per (instance, S), in a process pool; input order kept."""
    jobs = [(N, g, S, shots, seed, estimator, likelihood)
            for N, g in instances for S in S_values]
    workers = worker_count(workers)
    if workers == 1 or len(jobs) == 1:
        return [_suppression_job(job) for job in jobs]
    results = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(_suppression_job, job): i for i, job in enumerate(jobs)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    logging.info(f"Finished {len(jobs)} suppression experiments")
    return results


def write_csv(results, stream):
    writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for result in results:
        writer.writerow(result.as_row())


def as_dicts(results):
    return [asdict(result) for result in results]
