import logging
import math
from dataclasses import asdict, dataclass

from costs import estimate, tally

US_PER_HOUR = 3600 * 10 ** 6


@dataclass(frozen=True)
class PhysicalAssumptions:
    """
    Hardware and layout assumptions for turning logical costs into physical ones.

    Key features:
    - hot storage is plain surface code at distance d, 2(d+1)^2 qubits per patch
    - cold storage uses the quoted yoked-code density
    - CCZ states come from cultivation-fed factories, rounded up for slack
    """
    cycle_time_us: float = 1.0
    reaction_time_us: float = 10.0
    code_distance: int = 25
    cold_density: int = 430
    factory_count: int = 6
    factory_rows: int = 3
    factory_cols: int = 4
    cultivation_volume: int = 30000
    t_states_per_ccz: int = 8
    surgery_layers: int = 6
    ccz_rounds: int = 150
    t_state_error: float = 1e-7
    target_logical_error: float = 1e-15
    hot_logical: int = 131
    compute_rows: int = 7
    compute_cols: int = 18
    addition_ccz_periods: int = 2
    addition_bits: int = 33
    lookup_address: int = 6

    @property
    def hot_density(self):
        return 2 * (self.code_distance + 1) ** 2

    @property
    def factory_footprint(self):
        return self.factory_rows * self.factory_cols * self.hot_density

    @property
    def compute_patches(self):
        return self.compute_rows * self.compute_cols


@dataclass(frozen=True)
class OperationDurations:
    addition_us: float
    lookup_us: float
    phaseup_us: float
    addition_ms: int
    lookup_ms: int
    phaseup_ms: int


@dataclass(frozen=True)
class CCZTiming:
    cultivation_rounds: float
    surgery_rounds: float
    total_rounds: float
    ccz_rounds: int
    ccz_period_us: float
    durations: OperationDurations


@dataclass(frozen=True)
class PhysicalEstimate:
    cold_qubits: int
    hot_qubits: int
    compute_qubits: int
    total_qubits: int
    shot_hours: float = 0.0
    success_probability: float = 1.0
    expected_days: float = 0.0


def cultivation_rounds(assumptions):
    """Rounds for one factory to cultivate the T states of one CCZ."""
    per_t = assumptions.cultivation_volume / assumptions.factory_footprint
    return per_t * assumptions.t_states_per_ccz


def ccz_error(assumptions):
    """CCZ infidelity after 8T-to-CCZ distillation."""
    return 28 * assumptions.t_state_error ** 2


def ccz_timing(assumptions=None):
    """
    CCZ production period and the operation durations it implies.

    Raw durations (before rounding up to whole milliseconds) are kept next to
    the rounded ones.
    """
    a = assumptions or PhysicalAssumptions()
    cultivation = cultivation_rounds(a)
    surgery = a.surgery_layers * 2 * a.code_distance / 3
    period = a.ccz_rounds * a.cycle_time_us / a.factory_count
    addition_us = (a.addition_bits - 1) * period * a.addition_ccz_periods
    lookup_us = ((1 << a.lookup_address) - 1) * period
    phaseup_us = lookup_us / 2
    durations = OperationDurations(
        addition_us=addition_us, lookup_us=lookup_us, phaseup_us=phaseup_us,
        addition_ms=math.ceil(addition_us / 1000), lookup_ms=math.ceil(lookup_us / 1000),
        phaseup_ms=math.ceil(phaseup_us / 1000))
    return CCZTiming(cultivation_rounds=cultivation, surgery_rounds=surgery,
                     total_rounds=cultivation + surgery, ccz_rounds=a.ccz_rounds,
                     ccz_period_us=period, durations=durations)


def qubit_footprint(cold_logical, hot_logical, compute_patches, assumptions=None):
    a = assumptions or PhysicalAssumptions()
    cold = cold_logical * a.cold_density
    hot = hot_logical * a.hot_density
    compute = compute_patches * a.hot_density
    return PhysicalEstimate(cold_qubits=cold, hot_qubits=hot, compute_qubits=compute,
                            total_qubits=cold + hot + compute)


def symbolic_hot_qubits(params):
    """Hot logical qubits implied by the qubit tally: 3f + 2*ell + len m."""
    return 3 * params.f + 2 * params.ell + params.len_m


def subroutine_hours(subroutine_tally, durations):
    hours = {}
    for row in subroutine_tally.rows:
        ms = (row.additions * durations.addition_ms + row.lookups * durations.lookup_ms
              + row.phaseups * durations.phaseup_ms)
        hours[row.name] = float(row.iterations * ms) / 3_600_000
    return hours


def shot_time(subroutine_tally, durations):
    """Hours per shot, charging every operation its rounded duration."""
    return sum(subroutine_hours(subroutine_tally, durations).values())


def success_probability(logical_qubit_rounds, assumptions=None):
    a = assumptions or PhysicalAssumptions()
    return math.exp(logical_qubit_rounds * math.log1p(-a.target_logical_error))


def logical_qubit_rounds(logical_qubits, hours, assumptions=None):
    a = assumptions or PhysicalAssumptions()
    return logical_qubits * hours * US_PER_HOUR / a.cycle_time_us


def total_runtime(shot_hours, expected_shots, qubit_rounds, assumptions=None):
    """Returns (no-logical-error probability per shot, expected days per factoring)."""
    success = success_probability(qubit_rounds, assumptions)
    return success, shot_hours * expected_shots / 24 / success


def physical_report(cost, assumptions=None):
    """
    JSON-ready physical estimate for a logical CostEstimate.
    Both hot-storage conventions are reported; the footprint uses the assumed one.
    """
    a = assumptions or PhysicalAssumptions()
    params = cost.params
    timing = ccz_timing(a)
    sub_tally = tally(params, cost.prime_count)
    hours_by_row = subroutine_hours(sub_tally, timing.durations)
    hours = sum(hours_by_row.values())
    footprint = qubit_footprint(params.input_bits, a.hot_logical, a.compute_patches, a)
    logical_patches = params.input_bits + a.hot_logical + a.compute_patches
    rounds = logical_qubit_rounds(logical_patches, hours, a)
    success, days = total_runtime(hours, cost.expected_shots, rounds, a)
    if a.hot_logical != symbolic_hot_qubits(params):
        logging.debug(f"Assumed hot logical count {a.hot_logical} differs from the tally's "
                     f"{symbolic_hot_qubits(params)}")
    estimate_ = PhysicalEstimate(
        cold_qubits=footprint.cold_qubits, hot_qubits=footprint.hot_qubits,
        compute_qubits=footprint.compute_qubits, total_qubits=footprint.total_qubits,
        shot_hours=hours, success_probability=success, expected_days=days)
    return {
        "assumptions": asdict(a),
        "densities": {"hot": a.hot_density, "cold": a.cold_density,
                      "factory_footprint": a.factory_footprint},
        "ccz": {"cultivation_rounds": timing.cultivation_rounds,
                "surgery_rounds": timing.surgery_rounds, "total_rounds": timing.total_rounds,
                "ccz_rounds": timing.ccz_rounds, "period_us": timing.ccz_period_us,
                "ccz_error": ccz_error(a)},
        "durations": asdict(timing.durations),
        "hot_logical": {"assumed": a.hot_logical, "symbolic": symbolic_hot_qubits(params)},
        "logical_qubit_rounds": rounds,
        "time_shares": {name: (h / hours if hours else 0.0) for name, h in hours_by_row.items()},
        "estimate": asdict(estimate_),
    }


def estimate_physical(params, assumptions=None):
    """Logical estimate plus physical report for one parameter point."""
    return physical_report(estimate(params), assumptions)
