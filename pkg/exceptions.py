"""Error hierarchy shared by every module.

Library code raises these; only the command line layer turns them into exit codes.
"""


class QFEError(Exception):
    """Root of all errors raised by this package."""

    exit_code = 1


class InfeasibleParams(QFEError):
    exit_code = 2


class EmptyFeasibleSet(QFEError):
    exit_code = 2


# Residue systems

class ResidueError(QFEError):
    pass


class BudgetExhausted(ResidueError):
    def __init__(self, message, best_deviation=None):
        super().__init__(message)
        self.best_deviation = best_deviation


class InsufficientPrimes(ResidueError):
    exit_code = 2


class NoGenerator(ResidueError):
    pass


class DlogUndefined(ResidueError):
    pass


class ResidueFormatError(ResidueError):
    exit_code = 2


# Trajectory simulation

class SimulationError(QFEError):
    pass


class ValueMismatch(SimulationError):
    pass


class UnbalancedStack(SimulationError):
    pass


class DirtyFinish(SimulationError):
    def __init__(self, message, live_registers=(), open_vents=0, sign=1):
        super().__init__(message)
        self.live_registers = tuple(live_registers)
        self.open_vents = open_vents
        self.sign = sign


class OverlappingViews(SimulationError):
    pass


class TableSizeMismatch(SimulationError):
    pass


class NonzeroOutput(SimulationError):
    pass


class WidthError(SimulationError):
    pass


# Dense period finding

class StateTooLarge(QFEError):
    exit_code = 2


class DegeneratePeriod(QFEError):
    exit_code = 2


class ZeroProbabilityOutput(QFEError):
    pass


# Kernels

class SequenceFormatError(QFEError):
    exit_code = 2
