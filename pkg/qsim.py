import logging
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction

from app import random_below, random_bits, rng_stream
from exceptions import (DirtyFinish, NonzeroOutput, OverlappingViews, SimulationError,
                        TableSizeMismatch, UnbalancedStack, ValueMismatch, WidthError)


def _parity(x):
    return bin(x).count("1") & 1


@dataclass(frozen=True)
class QuintView:
    """
    A little-endian window onto one or more registers.

    segments holds (register id, bit offset, bit length) triples, least
    significant first. Slicing and concatenation build new views; neither
    touches the simulated values.
    """
    segments: tuple

    def __len__(self):
        return sum(length for _, _, length in self.segments)

    def __getitem__(self, item):
        if isinstance(item, int):
            if item < 0:
                item += len(self)
            item = slice(item, item + 1)
        start, stop, step = item.indices(len(self))
        if step != 1:
            raise SimulationError("Quint views only support contiguous slices")
        picked = []
        pos = 0
        for reg, offset, length in self.segments:
            lo, hi = max(start, pos), min(stop, pos + length)
            if lo < hi:
                picked.append((reg, offset + lo - pos, hi - lo))
            pos += length
        return QuintView(tuple(picked))

    def bits(self):
        for reg, offset, length in self.segments:
            for b in range(offset, offset + length):
                yield reg, b

    def overlaps(self, other):
        return bool(set(self.bits()) & set(other.bits()))

    @property
    def registers(self):
        return {reg for reg, _, _ in self.segments}


def concat(*views):
    """Join views, the first one supplying the least significant bits."""
    segments = []
    for i, view in enumerate(views):
        for other in views[:i]:
            if view.overlaps(other):
                raise OverlappingViews("Concatenated views must reference disjoint bits")
        segments.extend(view.segments)
    return QuintView(tuple(segments))


@dataclass
class Register:
    length: int
    label: str
    value: int = 0
    opaque: bool = False
    # (table, address view) of the lookup that last wrote this register
    origin: tuple | None = None


@dataclass(eq=False)
class Vent:
    """Pending sign corrections over the values of an address register."""
    width: int
    label: str = ""
    bits: int = 0

    def absorb(self, table, result):
        if len(table) != 1 << self.width:
            raise TableSizeMismatch(f"Vent of width {self.width} cannot absorb a {len(table)}-entry table")
        for a, value in enumerate(table):
            if _parity(value & result):
                self.bits ^= 1 << a

    def addresses(self):
        return {a for a in range(1 << self.width) if (self.bits >> a) & 1}

    def __bool__(self):
        return self.bits != 0


@dataclass
class OpCounts:
    additions: Fraction = Fraction(0)
    lookups: Fraction = Fraction(0)
    phaseups: Fraction = Fraction(0)
    fused_additions: Fraction = Fraction(0)

    def add(self, kind, amount):
        setattr(self, kind, getattr(self, kind) + amount)

    def as_dict(self):
        return {"additions": self.additions, "lookups": self.lookups,
                "phaseups": self.phaseups, "fused_additions": self.fused_additions}


@dataclass
class Trajectory:
    values: dict = field(default_factory=dict)
    sign: int = 1
    measurements: list = field(default_factory=list)


class SimState:
    """
    Classical trajectory simulator for reversible integer registers.

    Key features:
    - One sampled computational-basis trajectory with a +/-1 global sign
    - X-basis measurement erasure with phase kickback routed into vents
    - Per-section operation counters, both expected (exact fractions) and actual
    - Clean-finish verification of registers, vents, the uncompute stack and the sign
    """

    def __init__(self, seed=0, trace=False):
        self.seed = seed
        self.rng = rng_stream(seed, "qsim")
        self.registers = {}
        self.trajectory = Trajectory()
        self.stack = []
        self.open_vents = []
        self.section = "setup"
        self.expected = {}
        self.actual = {}
        self.live_qubits = 0
        self.high_water = 0
        self.allocations = 0
        self.releases = 0
        self.trace = [] if trace else None
        self._next_id = 0
        self._charging = True
        self._forced = deque()

    # -- bookkeeping -------------------------------------------------------

    @property
    def sign(self):
        return self.trajectory.sign

    @contextmanager
    def in_section(self, name):
        previous, self.section = self.section, name
        try:
            yield
        finally:
            self.section = previous

    @contextmanager
    def uncharged(self):
        """Ops inside count as actual work only; the caller charges their expectation."""
        previous, self._charging = self._charging, False
        try:
            yield
        finally:
            self._charging = previous

    def charge(self, additions=0, lookups=0, phaseups=0):
        counts = self.expected.setdefault(self.section, OpCounts())
        counts.add("additions", Fraction(additions))
        counts.add("lookups", Fraction(lookups))
        counts.add("phaseups", Fraction(phaseups))

    def _count(self, kind, opcode, widths):
        self.actual.setdefault(self.section, OpCounts()).add(kind, 1)
        if self._charging:
            self.expected.setdefault(self.section, OpCounts()).add(kind, Fraction(1))
        if self.trace is not None:
            totals = self.actual[self.section]
            self.trace.append(
                f"{self.section}\t{opcode}\t{','.join(str(w) for w in widths)}\t"
                f"add={totals.additions} lookup={totals.lookups} phaseup={totals.phaseups}")

    def counts(self, expected=True):
        return self.expected if expected else self.actual

    def force_results(self, *results):
        """Queue measurement outcomes (packed bits) for the next mx_rz calls."""
        self._forced.extend(results)

    # -- register access ---------------------------------------------------

    def _register(self, reg):
        try:
            return self.registers[reg]
        except KeyError:
            raise SimulationError(f"Register {reg} is not live") from None

    def value(self, view):
        out, pos = 0, 0
        for reg, offset, length in view.segments:
            r = self._register(reg)
            out |= ((r.value >> offset) & ((1 << length) - 1)) << pos
            pos += length
        return out

    def _write(self, view, value):
        pos = 0
        for reg, offset, length in view.segments:
            r = self._register(reg)
            if r.opaque:
                raise SimulationError(f"Register '{r.label}' is not arithmetic-visible")
            mask = ((1 << length) - 1) << offset
            r.value = (r.value & ~mask) | (((value >> pos) << offset) & mask)
            r.origin = None
            self.trajectory.values[reg] = r.value
            pos += length

    def _full_registers(self, view):
        """Registers entirely covered by the view."""
        covered = {}
        for reg, offset, length in view.segments:
            covered.setdefault(reg, 0)
            covered[reg] += length
        return [reg for reg, bits in covered.items() if bits == self._register(reg).length]

    def _release(self, view):
        for reg in self._full_registers(view):
            self.live_qubits -= self.registers[reg].length
            del self.registers[reg]
            self.trajectory.values.pop(reg, None)
            self.releases += 1

    # -- allocation --------------------------------------------------------

    def _alloc(self, bits, label, value=0, opaque=False):
        if bits < 1:
            raise WidthError(f"Cannot allocate a register of {bits} bits")
        reg = self._next_id
        self._next_id += 1
        self.registers[reg] = Register(length=bits, label=label, value=value, opaque=opaque)
        self.trajectory.values[reg] = value
        self.live_qubits += bits
        self.high_water = max(self.high_water, self.live_qubits)
        self.allocations += 1
        return QuintView(((reg, 0, bits),))

    def alloc_zero(self, bits, label="zero"):
        return self._alloc(bits, label)

    def alloc_uniform(self, bits, label="uniform", forced=None):
        value = random_bits(self.rng, bits) if forced is None else forced
        if not 0 <= value < 1 << bits:
            raise WidthError(f"Forced value {value} does not fit {bits} bits")
        return self._alloc(bits, label, value)

    def alloc_uniform_range(self, bound, bits=None, label="range", forced=None):
        if bound < 1:
            raise WidthError(f"Range bound must be positive, got {bound}")
        width = max(1, (bound - 1).bit_length())
        if bits is not None:
            if bits < width:
                raise WidthError(f"{bits} bits cannot hold values below {bound}")
            width = bits
        value = random_below(self.rng, bound) if forced is None else forced
        if not 0 <= value < bound:
            raise WidthError(f"Forced value {value} is outside [0, {bound})")
        return self._alloc(width, label, value)

    def alloc_phase_gradient(self, bits, label="phase gradient"):
        """Opaque register; it is never read or written by arithmetic."""
        return self._alloc(bits, label, opaque=True)

    def release_phase_gradient(self, view):
        for reg in view.registers:
            if not self._register(reg).opaque:
                raise SimulationError("Only phase gradient registers can be released this way")
        self._release(view)

    def new_vent(self, width, label=""):
        vent = Vent(width=width, label=label)
        self.open_vents.append(vent)
        return vent

    # -- arithmetic --------------------------------------------------------

    def _check_live(self, view):
        for reg in view.registers:
            self._register(reg)

    def iadd_const(self, target, k, fused=False):
        self._check_live(target)
        width = len(target)
        self._write(target, (self.value(target) + k) % (1 << width))
        self._count("fused_additions" if fused else "additions", "add" if k >= 0 else "sub", (width,))

    def isub_const(self, target, k, fused=False):
        self.iadd_const(target, -k, fused=fused)

    def iadd_quint(self, target, source, sign=1):
        if target.overlaps(source):
            raise OverlappingViews("Addition source and target share bits")
        width = len(target)
        self._write(target, (self.value(target) + sign * self.value(source)) % (1 << width))
        self._count("additions", "add_quint" if sign > 0 else "sub_quint", (width, len(source)))

    def isub_quint(self, target, source):
        self.iadd_quint(target, source, sign=-1)

    def ghz_lookup(self, ctrl, k):
        """Offset selected by a single control qubit; free, and never tallied as a lookup."""
        if len(ctrl) != 1:
            raise WidthError(f"GHZ lookups take one control qubit, got {len(ctrl)}")
        return k if self.value(ctrl) else 0

    def lookup(self, table, addr, out):
        if addr.overlaps(out):
            raise OverlappingViews("Lookup address and output share bits")
        if len(table) != 1 << len(addr):
            raise TableSizeMismatch(f"Table has {len(table)} entries for a {len(addr)}-bit address")
        if self.value(out) != 0:
            raise NonzeroOutput("Lookup output register must start at zero")
        entry = table[self.value(addr)]
        if not 0 <= entry < 1 << len(out):
            raise WidthError(f"Table entry {entry} does not fit {len(out)} bits")
        self._write(out, entry)
        full = self._full_registers(out)
        if len(full) == 1 and len(out.segments) == 1:
            self.registers[full[0]].origin = (table, addr)
        self._count("lookups", "lookup", (len(addr), len(out)))

    def unlookup(self, table, addr, out):
        """Erase a lookup output by xoring the same entry back in."""
        if len(table) != 1 << len(addr):
            raise TableSizeMismatch(f"Table has {len(table)} entries for a {len(addr)}-bit address")
        self._write(out, self.value(out) ^ table[self.value(addr)])
        self._count("lookups", "unlookup", (len(addr), len(out)))

    # -- phases ------------------------------------------------------------

    def phase_flip_if(self, condition):
        if callable(condition):
            condition = condition()
        if condition:
            self.trajectory.sign = -self.trajectory.sign

    def phase_flip_compare(self, view, threshold, op=">="):
        """Flip the sign when view op threshold; costs one addition."""
        value = self.value(view)
        bound = self.value(threshold) if isinstance(threshold, QuintView) else threshold
        holds = {">=": value >= bound, "<": value < bound, ">": value > bound,
                 "<=": value <= bound}[op]
        self.phase_flip_if(holds)
        self._count("additions", f"cmp{op}", (len(view),))

    def phaseup(self, vent, addr):
        if vent not in self.open_vents:
            raise SimulationError(f"Vent '{vent.label}' is not open")
        if len(addr) != vent.width:
            raise WidthError(f"Vent of width {vent.width} addressed by {len(addr)} bits")
        self.phase_flip_if((vent.bits >> self.value(addr)) & 1)
        vent.bits = 0
        self.open_vents.remove(vent)
        self._count("phaseups", "phaseup", (vent.width,))

    def _next_result(self, bits):
        if self._forced:
            return self._forced.popleft() & ((1 << bits) - 1)
        return random_bits(self.rng, bits)

    def mx_rz(self, view, vent=None, table=None, label=None):
        """
        Measure qubits in the X basis and clear them.

        A qubit holding 1 with result 1 flips the sign. When a vent is given, the
        function a -> parity(result & table[a]) is folded into it so a later
        phaseup on the lookup's address can undo the kickback; table defaults to
        the lookup that produced the register.
        """
        self._check_live(view)
        value = self.value(view)
        result = self._next_result(len(view))
        if _parity(value & result):
            self.trajectory.sign = -self.trajectory.sign
        if vent is not None:
            if table is None:
                regs = list(view.registers)
                origin = self.registers[regs[0]].origin if len(regs) == 1 else None
                if origin is None:
                    raise SimulationError("No lookup table recorded for vented measurement")
                table = origin[0]
            vent.absorb(table, result)
        self._write(view, 0)
        self.trajectory.measurements.append((label or self.section, result))
        self._release(view)
        return result

    def measure(self, view, label=None):
        """Computational basis measurement; frees the measured registers."""
        self._check_live(view)
        value = self.value(view)
        self.trajectory.measurements.append((label or "measure", value))
        self._write(view, 0)
        self._release(view)
        return value

    def del_by_equal_to(self, view, k):
        actual = self.value(view)
        if actual != k:
            labels = ", ".join(self._register(reg).label for reg in view.registers)
            logging.error(f"del_by_equal_to({labels}) expected {k}, found {actual}")
            raise ValueMismatch(f"Register '{labels}' holds {actual}, expected {k}")
        if len(self._full_registers(view)) != len(view.registers):
            raise SimulationError("del_by_equal_to needs whole registers")
        self._write(view, 0)
        self._release(view)

    # -- deferred uncompute info ------------------------------------------

    def push_uncompute_info(self, info):
        self.stack.append(info)

    def pop_uncompute_info(self):
        if not self.stack:
            raise UnbalancedStack("pop_uncompute_info on an empty stack")
        return self.stack.pop()

    def verify_clean_finish(self):
        live = [f"{r.label}({r.length})" for r in self.registers.values()]
        open_vents = len(self.open_vents)
        problems = []
        if live:
            problems.append(f"live registers {', '.join(live)}")
        if open_vents:
            problems.append(f"{open_vents} open vent(s)")
        if self.stack:
            problems.append(f"{len(self.stack)} uncompute record(s) on the stack")
        if self.sign != 1:
            problems.append("sign is -1")
        if problems:
            raise DirtyFinish("Dirty finish: " + "; ".join(problems),
                              live_registers=live, open_vents=open_vents, sign=self.sign)
        return True
