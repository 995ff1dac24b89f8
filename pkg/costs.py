import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from app import worker_count
from exceptions import EmptyFeasibleSet, InfeasibleParams
from modexp import (LOOP1, LOOP2, LOOP3_BODY, LOOP3_STARTUP, LOOP4, UNLOOP2, UNLOOP3_BODY,
                    UNLOOP3_CLEANUP, VENT_FLUSH, AlgorithmParams)
from residue import ell_bit_prime_count

SHOT_RETRY_FACTOR = 0.99

DEFAULT_RANGES = {
    "s": range(2, 15),
    "ell": range(18, 26),
    "w1": range(2, 9),
    "w3": range(2, 7),
    "w4": range(2, 9),
    "f": range(24, 60),
}

CSV_COLUMNS = ("n", "s", "ell", "w1", "w3", "w4", "f", "m", "P_deviant", "expected_shots",
               "toffolis", "qubits", "q3t", "pareto_flag")


def addition_toffolis(width):
    return max(width - 1, 0)


def lookup_toffolis(address):
    return (1 << address) - address - 1


def phaseup_toffolis(address):
    # ceil(sqrt(2^a))
    return math.isqrt((1 << address) - 1) + 1


@dataclass(frozen=True)
class TallyRow:
    name: str
    iterations: int
    register: int
    address: int
    additions: Fraction
    lookups: Fraction
    phaseups: Fraction

    @property
    def toffolis_per_iteration(self):
        return (self.additions * addition_toffolis(self.register)
                + self.lookups * lookup_toffolis(self.address)
                + self.phaseups * phaseup_toffolis(self.address))

    @property
    def totals(self):
        return {"additions": self.iterations * self.additions,
                "lookups": self.iterations * self.lookups,
                "phaseups": self.iterations * self.phaseups}


@dataclass(frozen=True)
class SubroutineTally:
    params: AlgorithmParams
    prime_count: int
    rows: tuple

    def row(self, name):
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def totals(self):
        out = {"additions": Fraction(0), "lookups": Fraction(0), "phaseups": Fraction(0)}
        for row in self.rows:
            for key, value in row.totals.items():
                out[key] += value
        return out


def tally(params, prime_count=None):
    """
    Symbolic per-shot tally of additions, lookups and phaseups, one row per subroutine.

    prime_count defaults to the |P| estimate; pass the actual size of a residue
    system to compare against a simulated shot.
    """
    if params.W3 < 2:
        raise InfeasibleParams(f"W3={params.W3} leaves no room for the loop3 startup windows")
    P = params.prime_count_estimate if prime_count is None else prime_count
    ell, f, lm = params.ell, params.f, params.len_m
    W1, W3, W4 = params.W1, params.W3, params.W4
    sum_width = ell + lm
    body_addr = params.loop3_address_bits
    F = Fraction
    rows = (
        TallyRow(LOOP1, (P + 1) * W1, sum_width, params.w1, F(1), F(1), F(0)),
        TallyRow(LOOP2, P * lm, sum_width, 0, F(2), F(0), F(0)),
        TallyRow(LOOP3_STARTUP, P, ell, 2 * params.w3, F(0), F(1), F(0)),
        TallyRow(LOOP3_BODY, P * (W3 - 2) * W3, ell, body_addr, F(2), F(1), F(0)),
        TallyRow(LOOP4, P * W4, f, params.w4, F(3, 2), F(5, 2), F(1)),
        TallyRow(UNLOOP3_BODY, P * (W3 - 2) * 2 * W3, ell, body_addr, F(5, 2), F(3, 2), F(1)),
        TallyRow(UNLOOP3_CLEANUP, P, ell, 2 * params.w3, F(0), F(0), F(1)),
        TallyRow(UNLOOP2, P * lm, sum_width, 0, F(2), F(0), F(0)),
        TallyRow(VENT_FLUSH, W1, 0, params.w1, F(0), F(0), F(1)),
    )
    return SubroutineTally(params=params, prime_count=P, rows=rows)


def tally_mismatches(subroutine_tally, counters):
    """
    (section, kind, tallied, counted) for every row a simulated shot disagrees with.
    counters maps section names to expected operation counts, as on a ShotRecord.
    """
    mismatches = []
    for row in subroutine_tally.rows:
        counted = counters.get(row.name, {})
        for kind, tallied in row.totals.items():
            got = Fraction(counted.get(kind, 0))
            if got != tallied:
                mismatches.append((row.name, kind, tallied, got))
    return mismatches


def toffoli_count(subroutine_tally):
    """Toffolis per shot: additions n-1, lookups 2^a-a-1, phaseups ceil(sqrt(2^a))."""
    return sum((row.iterations * row.toffolis_per_iteration for row in subroutine_tally.rows),
               Fraction(0))


def epsilon_and_p_deviant(params, prime_count=None):
    """Three worst-case charges per truncated accumulator addition, and the failure rate 2*sqrt(eps)."""
    P = params.prime_count_estimate if prime_count is None else prime_count
    eps = 3 * P * params.W4 / 2 ** params.f
    return eps, 2 * math.sqrt(eps)


def expected_shots(s, p_deviant):
    if not 0 <= p_deviant < 1:
        raise InfeasibleParams(f"P_deviant={p_deviant} leaves no successful shots")
    return (s + 1) / (1 - p_deviant) / SHOT_RETRY_FACTOR


@dataclass(frozen=True)
class QubitPhaseTally:
    phase: str
    added: int
    temporary: int
    total: int


def qubit_profile(params):
    """
    Live logical qubits per phase of a shot.

    total counts the registers present before the phase, any it adds, and its
    temporaries; a phase that releases qubits still holds them while it runs.
    """
    m, f, ell, lm = params.input_bits, params.f, params.ell, params.len_m
    loop4_temp = f if params.loop4_temporary == "shared" else 2 * f
    phases = (
        ("startup", m + f, 0),
        ("enter outer loop", ell + lm, 0),
        ("loop1", 0, 2 * (ell + lm)),
        ("loop2", 0, ell + lm),
        ("loop3", ell, 2 * ell),
        ("loop4", 0, loop4_temp),
        ("unloop3", -ell, 2 * ell),
        ("unloop2", 0, ell + lm),
        ("exit outer loop", -ell - lm, 2 * (ell + lm)),
        ("measure", -f, 0),
        ("frequency measurement", -m, 0),
    )
    live = 0
    rows = []
    for name, added, temporary in phases:
        total = live + max(added, 0) + temporary
        rows.append(QubitPhaseTally(name, added, temporary, total))
        live += added
    return rows


def logical_qubits(params):
    """Peak live qubits over all phases, with the per-phase profile."""
    profile = qubit_profile(params)
    return max(row.total for row in profile), profile


@dataclass(frozen=True, slots=True)
class CostEstimate:
    params: AlgorithmParams
    prime_count: int
    epsilon: float
    p_deviant: float
    expected_shots: float
    toffolis_per_shot: int
    expected_toffolis: float
    logical_qubits: int

    @property
    def q3t(self):
        return q3t(self)

    def as_row(self, pareto_flag=False):
        p = self.params
        return {"n": p.n, "s": p.s, "ell": p.ell, "w1": p.w1, "w3": p.w3, "w4": p.w4, "f": p.f,
                "m": p.input_bits, "P_deviant": self.p_deviant,
                "expected_shots": self.expected_shots, "toffolis": self.expected_toffolis,
                "qubits": self.logical_qubits, "q3t": self.q3t, "pareto_flag": int(pareto_flag)}


def q3t(cost):
    return float(cost.logical_qubits) ** 3 * cost.expected_toffolis


def feasible(params):
    """Returns (True, None) or (False, reason)."""
    try:
        params.validate()
    except InfeasibleParams as exc:
        return False, str(exc)
    _, p_deviant = epsilon_and_p_deviant(params)
    if p_deviant >= 1:
        return False, f"P_deviant={p_deviant:.3f} >= 1"
    available = ell_bit_prime_count(params.ell)
    if params.prime_count_estimate > available:
        return False, f"|P|={params.prime_count_estimate} exceeds the {available} {params.ell}-bit primes"
    return True, None


def estimate(params, prime_count=None):
    ok, reason = feasible(params)
    if not ok:
        raise InfeasibleParams(reason)
    P = params.prime_count_estimate if prime_count is None else prime_count
    eps, p_deviant = epsilon_and_p_deviant(params, P)
    shots = expected_shots(params.s, p_deviant)
    per_shot = toffoli_count(tally(params, P))
    qubits, _ = logical_qubits(params)
    return CostEstimate(params=params, prime_count=P, epsilon=eps, p_deviant=p_deviant,
                        expected_shots=shots, toffolis_per_shot=math.ceil(per_shot),
                        expected_toffolis=float(per_shot) * shots, logical_qubits=qubits)


def _scan_chunk(args):
    """Estimates for every feasible point sharing one (s, ell); module level for pickling."""
    n, s, ell, ranges, switches = args
    out = []
    for w1, w3, w4, f in itertools.product(ranges["w1"], ranges["w3"], ranges["w4"], ranges["f"]):
        params = AlgorithmParams(n=n, s=s, ell=ell, w1=w1, w3=w3, w4=w4, f=f, **switches)
        if feasible(params)[0]:
            out.append(estimate(params))
    return out


def grid_scan(n, ranges=None, workers=None, **switches):
    """
    Cost estimates for every feasible point of the parameter grid.

    ranges maps s, ell, w1, w3, w4, f to iterables; missing keys use the
    published scan ranges. Infeasible points are dropped. Output order is
    canonical (by s, ell, w1, w3, w4, f) whatever the worker count.
    """
    ranges = {**DEFAULT_RANGES, **(ranges or {})}
    ranges = {key: list(values) for key, values in ranges.items()}
    jobs = [(n, s, ell, ranges, switches) for s in ranges["s"] for ell in ranges["ell"]]
    workers = min(worker_count(workers), max(1, len(jobs)))
    total = len(jobs) * len(ranges["w1"]) * len(ranges["w3"]) * len(ranges["w4"]) * len(ranges["f"])
    logging.info(f"Grid scan at n={n}: {total} points over {workers} worker(s)")
    if workers == 1:
        chunks = [_scan_chunk(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(_scan_chunk, jobs))
    estimates = [e for chunk in chunks for e in chunk]
    if not estimates:
        logging.error(f"Grid scan at n={n} found no feasible points")
        raise EmptyFeasibleSet(f"No feasible parameters among {total} grid points at n={n}")
    logging.info(f"Grid scan kept {len(estimates)} feasible points")
    return estimates


def pareto(estimates):
    """Points not dominated in (qubits, expected Toffolis), sorted by qubits."""
    ordered = sorted(estimates, key=lambda e: (e.logical_qubits, e.expected_toffolis))
    frontier = []
    best_toffolis = math.inf
    for e in ordered:
        if e.expected_toffolis < best_toffolis:
            frontier.append(e)
            best_toffolis = e.expected_toffolis
    return frontier


def q3t_optimum(estimates):
    if not estimates:
        raise EmptyFeasibleSet("No estimates to choose from")
    return min(estimates, key=q3t)


def estimate_rows(estimates, frontier=None):
    frontier_ids = {id(e) for e in (frontier if frontier is not None else pareto(estimates))}
    return [e.as_row(id(e) in frontier_ids) for e in estimates]


def write_csv(estimates, stream, frontier=None):
    writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for row in estimate_rows(estimates, frontier):
        writer.writerow(row)


def write_json(estimates, stream, frontier=None):
    json.dump(estimate_rows(estimates, frontier), stream, indent=2)
    stream.write("\n")


# Published logical cost table: parameters and the values it reports
PUBLISHED_ROWS = (
    # n, s, ell, w1, w3, w4, f, m, P_deviant, shots, toffolis, qubits
    (1024, 8, 18, 6, 3, 6, 28, 640, 0.0287, 9.4, 1.1e9, 742),
    (1536, 8, 21, 6, 3, 5, 31, 960, 0.0183, 9.3, 3.1e9, 1074),
    (2048, 8, 21, 6, 3, 5, 33, 1280, 0.0125, 9.2, 6.5e9, 1399),
    (3072, 8, 21, 6, 3, 5, 35, 1920, 0.0091, 9.2, 1.9e10, 2043),
    (4096, 8, 24, 6, 3, 5, 36, 2560, 0.0080, 9.2, 4.0e10, 2692),
    (6144, 8, 24, 6, 3, 5, 39, 3840, 0.0042, 9.1, 1.2e11, 3978),
    (8192, 8, 24, 6, 3, 5, 40, 5120, 0.0040, 9.1, 2.7e11, 5261),
)


def published_rows():
    rows = []
    for n, s, ell, w1, w3, w4, f, m, p_dev, shots, toffolis, qubits in PUBLISHED_ROWS:
        rows.append({
            "params": AlgorithmParams(n=n, s=s, ell=ell, w1=w1, w3=w3, w4=w4, f=f),
            "m": m, "P_deviant": p_dev, "expected_shots": shots, "toffolis": toffolis,
            "qubits": qubits,
        })
    return rows


def reproduction_report(rows=None):
    """Side-by-side comparison of the model against the published table."""
    report = []
    for row in rows or published_rows():
        cost = estimate(row["params"])
        report.append({
            "n": row["params"].n,
            "m": (cost.params.input_bits, row["m"]),
            "P_deviant": (cost.p_deviant, row["P_deviant"]),
            "expected_shots": (cost.expected_shots, row["expected_shots"]),
            "toffolis": (cost.expected_toffolis, row["toffolis"]),
            "qubits": (cost.logical_qubits, row["qubits"]),
        })
        logging.debug(f"n={row['params'].n}: toffolis {cost.expected_toffolis:.3e} "
                     f"vs {row['toffolis']:.1e}, qubits {cost.logical_qubits} vs {row['qubits']}")
    return report
