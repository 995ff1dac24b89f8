import logging
import math
import os
from dataclasses import dataclass
from functools import reduce

import numpy as np

from app import rng_stream, settings
from exceptions import SequenceFormatError, TableSizeMismatch

NORM_TOLERANCE = 1e-12
GRADIENT_TABLES = {"1e-06": "gradient_1e-06.txt", "1e-15": "gradient_1e-15.txt"}

# Smallest value the published tables print as nonzero
PRINT_FLOOR = 1e-16

_SQRT_HALF = 1 / math.sqrt(2)
_H = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF
_TZ = np.diag([1, np.exp(1j * np.pi / 4)])
_TX = _H @ _TZ @ _H
CLIFFORDS = {
    "H": _H,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
    "S": np.diag([1, 1j]),
}
INIT_STATES = {
    "R_X": np.array([1, 1], dtype=complex) * _SQRT_HALF,
    "R_Y": np.array([1, 1j], dtype=complex) * _SQRT_HALF,
    "R_Z": np.array([1, 0], dtype=complex),
}

# Lower-triangular zeta matrix for the high half, its transpose for the low half
_ZETA_HIGH = np.array([[1, 0], [1, 1]], dtype=np.int64)
_ZETA_LOW = np.array([[1, 1], [0, 1]], dtype=np.int64)


# Adder identity

def adder_bit_step(a_k, b_k, s_k, a_k1, b_k1):
    """Next sum bit from the current bits and sum bit, without an explicit carry."""
    return ((a_k ^ s_k) & (b_k ^ s_k)) ^ (a_k ^ b_k ^ s_k ^ a_k1 ^ b_k1)


def ripple_add_via_identity(a, b, width):
    """(a + b) as a width+1 bit number, built only from adder_bit_step."""
    bit = lambda x, k: (x >> k) & 1
    s = bit(a, 0) ^ bit(b, 0)
    total = s
    for k in range(width):
        s = adder_bit_step(bit(a, k), bit(b, k), s, bit(a, k + 1), bit(b, k + 1))
        total |= s << (k + 1)
    return total


# Power products and phaseups

@dataclass(frozen=True)
class BitTable:
    """Phase-flip indicators for every value of a width-bit register."""
    width: int
    bits: tuple

    def __post_init__(self):
        if len(self.bits) != 1 << self.width:
            raise TableSizeMismatch(f"table of width {self.width} needs {1 << self.width} "
                                    f"entries, got {len(self.bits)}")

    @classmethod
    def random(cls, width, rng):
        return cls(width, tuple(int(b) for b in rng.integers(0, 2, size=1 << width)))

    @classmethod
    def indicator(cls, width, value):
        return cls(width, tuple(int(v == value) for v in range(1 << width)))


def power_product(bits):
    """
    Every AND-monomial of the given bits, indexed by the mask of selected bits.
    bits[0] is the least significant. Entry 0 (the empty product) is 1; printed
    most significant first this is the ket |cba, cb, ca, c, ab, b, a, 1>.
    """
    products = [1]
    for b in bits:
        products = products + [p & b for p in products]
    return products


def _bits_of(value, width):
    return [(value >> k) & 1 for k in range(width)]


def _split_of(width, split):
    if split is None:
        high = width // 2
        return width - high, high
    low, high = split
    if low + high != width or low < 0 or high < 0:
        raise TableSizeMismatch(f"split {split} does not cover width {width}")
    return low, high


def _sandwich(matrix, low, high):
    left = reduce(np.kron, [_ZETA_HIGH] * high, np.ones((1, 1), dtype=np.int64))
    right = reduce(np.kron, [_ZETA_LOW] * low, np.ones((1, 1), dtype=np.int64))
    return (left @ matrix @ right) % 2


def exor_transform(table, split=None):
    """
    EXOR-polynomial coefficients of a phaseup table.

    The table is viewed as a matrix with rows indexed by the high half of the
    address and columns by the low half; entry [i][j] of the result says whether
    CZ(H*_i, L*_j) appears in the phaseup.
    """
    low, high = _split_of(table.width, split)
    matrix = np.array(table.bits, dtype=np.int64).reshape(1 << high, 1 << low)
    return _sandwich(matrix, low, high)


def exor_inverse(coefficients, split):
    """Recovers the BitTable whose exor_transform gave these coefficients."""
    low, high = split
    coefficients = np.asarray(coefficients, dtype=np.int64)
    if coefficients.shape != (1 << high, 1 << low):
        raise TableSizeMismatch(f"coefficient matrix {coefficients.shape} does not match "
                                f"split {split}")
    # The zeta sandwich is its own inverse mod 2
    table = _sandwich(coefficients, low, high)
    return BitTable(low + high, tuple(int(b) for b in table.reshape(-1)))


def masked_phase_flip(products, mask_bits):
    """Parity of the power-product entries selected by mask_bits."""
    return int(np.dot(products, mask_bits) % 2)


def phaseup_equivalence(table, split=None):
    """
    Exhaustively checks that masked phase flips over the two power products,
    selected by the EXOR coefficients, negate exactly the values the table marks.
    """
    low, high = _split_of(table.width, split)
    coefficients = exor_transform(table, (low, high))
    low_products = np.array([power_product(_bits_of(v, low)) for v in range(1 << low)])
    for h in range(1 << high):
        high_products = np.array(power_product(_bits_of(h, high)))
        selected = (high_products @ coefficients) % 2
        for l in range(1 << low):
            if masked_phase_flip(low_products[l], selected) != table.bits[(h << low) | l]:
                logging.debug(f"phaseup mismatch at value {(h << low) | l} of width {table.width}")
                return False
    return True


# Phase gradient preparation sequences

@dataclass(frozen=True)
class GateSequence:
    """
    Clifford+T preparation of one phase gradient qubit.

    Key features:
    - init is the +1 eigenstate of X, Y or Z
    - signs drive T gates alternating between the X and Z axes, X first
    - finish Cliffords are applied in the listed order
    """
    init: str
    signs: str = ""
    finish: tuple = ()

    def __post_init__(self):
        if self.init not in INIT_STATES:
            raise SequenceFormatError(f"unknown initial basis '{self.init}'")
        if any(c not in "+-" for c in self.signs):
            raise SequenceFormatError(f"malformed sign string '{self.signs}'")
        unknown = [g for g in self.finish if g not in CLIFFORDS]
        if unknown:
            raise SequenceFormatError(f"unknown finishing gates {unknown}")

    @property
    def t_count(self):
        return len(self.signs)

    def reversed_signs(self):
        flipped = self.signs.translate(str.maketrans("+-", "-+"))
        return GateSequence(self.init, flipped, self.finish)


@dataclass(frozen=True)
class GradientRow:
    index: int
    sequence: GateSequence
    t_count: int
    infidelity: float


def sequence_states(sequence):
    """Every intermediate state of the sequence, the initial state first."""
    state = INIT_STATES[sequence.init].copy()
    yield state
    for position, sign in enumerate(sequence.signs):
        gate = _TX if position % 2 == 0 else _TZ
        if sign == "-":
            gate = gate.conj().T
        state = gate @ state
        yield state
    for name in sequence.finish:
        state = CLIFFORDS[name] @ state
        yield state


def sequence_state(sequence):
    state = None
    for state in sequence_states(sequence):
        pass
    return state


def gradient_infidelity(sequence, k):
    """1 - |<target|state>|^2 for the target Z^(2^-k)|+>, up to global phase."""
    state = sequence_state(sequence)
    # Overlap with the orthogonal complement keeps tiny infidelities exact
    orthogonal = np.array([1, -np.exp(1j * np.pi * 2.0 ** -k)]) * _SQRT_HALF
    return float(abs(np.vdot(orthogonal, state)) ** 2)


def gradient_table_path(target, data_dir=None):
    return os.path.join(data_dir or settings.data_dir, GRADIENT_TABLES[target])


def load_gradient_table(path):
    """
    Reads a gradient table: index, init, signs, finish, t_count, infidelity per
    line, with '.' for an empty column and '#' comments.
    """
    rows = []
    with open(path) as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 6:
                raise SequenceFormatError(f"{path}:{number}: expected 6 columns, got {len(fields)}")
            index, init, signs, finish, t_count, infidelity = fields
            sequence = GateSequence(
                init=init,
                signs="" if signs == "." else signs,
                finish=() if finish == "." else tuple(finish.split(",")),
            )
            if sequence.t_count != int(t_count):
                raise SequenceFormatError(f"{path}:{number}: {sequence.t_count} signs but "
                                          f"T count {t_count}")
            rows.append(GradientRow(int(index), sequence, int(t_count), float(infidelity)))
    logging.debug(f"Loaded {len(rows)} gradient rows from {path}")
    return rows


def gradient_table_totals(rows):
    """(total T count, total computed infidelity)."""
    return (sum(row.t_count for row in rows),
            sum(gradient_infidelity(row.sequence, row.index) for row in rows))


def infidelity_matches(expected, got):
    """Agreement at the two significant figures the tables print."""
    if expected == 0:
        return got < PRINT_FLOOR
    exponent = math.floor(math.log10(expected))
    return abs(got - expected) <= 0.06 * 10.0 ** exponent


def gradient_rounding_error(bits_g, additions):
    """Phase error bound from a bits_g-qubit gradient used for that many kickbacks."""
    return additions * math.pi / 2 ** bits_g


# Suite

def _check_adder():
    cases = 0
    for a_k in range(2):
        for b_k in range(2):
            for c_k in range(2):
                for a_k1 in range(2):
                    for b_k1 in range(2):
                        s_k = a_k ^ b_k ^ c_k
                        carry = (a_k + b_k + c_k) >> 1
                        if adder_bit_step(a_k, b_k, s_k, a_k1, b_k1) != a_k1 ^ b_k1 ^ carry:
                            return False, cases
                        cases += 1
    return True, cases


def _check_ripple(max_width):
    for width in range(1, max_width + 1):
        for a in range(1 << width):
            for b in range(1 << width):
                if ripple_add_via_identity(a, b, width) != a + b:
                    logging.error(f"ripple addition failed for {a}+{b} at width {width}")
                    return False
    return True


def run_kernel_suite(seed=0, data_dir=None, tables_per_width=50, max_phaseup_width=8):
    """Runs every kernel check and returns a JSON-ready report with an overall verdict."""
    rng = rng_stream(seed, "kernels")
    report = {}

    adder_ok, adder_cases = _check_adder()
    report["adder_identity"] = {"passed": adder_ok, "cases": adder_cases}
    report["ripple_addition"] = {"passed": _check_ripple(6), "max_width": 6}

    example = power_product([1, 0, 1])[::-1]
    report["power_product"] = {"passed": example == [0, 0, 1, 1, 0, 0, 1, 1], "ket": example}

    involution_ok = True
    for width in range(1, 11):
        table = BitTable.random(width, rng)
        split = _split_of(width, None)
        if exor_inverse(exor_transform(table, split), split) != table:
            involution_ok = False
    report["exor_involution"] = {"passed": involution_ok, "max_width": 10}

    phaseup = {}
    for width in range(1, max_phaseup_width + 1):
        phaseup[width] = sum(phaseup_equivalence(BitTable.random(width, rng))
                             for _ in range(tables_per_width))
    report["phaseup_equivalence"] = {
        "passed": all(count == tables_per_width for count in phaseup.values()),
        "tables_per_width": tables_per_width,
        "passing": phaseup,
    }

    gradients = {}
    for target in GRADIENT_TABLES:
        rows = load_gradient_table(gradient_table_path(target, data_dir))
        per_row = []
        for row in rows:
            got = gradient_infidelity(row.sequence, row.index)
            per_row.append({"index": row.index, "t_count": row.t_count,
                            "expected": row.infidelity, "computed": got,
                            "matches": infidelity_matches(row.infidelity, got)})
        t_count, total = gradient_table_totals(rows)
        gradients[target] = {"passed": all(r["matches"] for r in per_row),
                             "t_count": t_count, "total_infidelity": total, "rows": per_row}
    report["gradient_tables"] = gradients

    report["passed"] = (all(report[key]["passed"] for key in
                            ("adder_identity", "ripple_addition", "power_product",
                             "exor_involution", "phaseup_equivalence"))
                        and all(g["passed"] for g in gradients.values()))
    if report["passed"]:
        logging.info("Kernel suite passed")
    else:
        logging.error("Kernel suite reported failures")
    return report
