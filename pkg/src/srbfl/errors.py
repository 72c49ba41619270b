"""Exception hierarchy shared by every module."""


class SRBFLError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(SRBFLError, ValueError):
    """A precondition or type invariant was broken by the caller."""


class DivergenceError(SRBFLError, ArithmeticError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class UnsupportedMetricError(SRBFLError):
    pass


class IntegrityError(SRBFLError):
    """Stored content no longer matches its digest."""


class DanglingPayloadError(SRBFLError):
    pass


class NothingToPromoteError(SRBFLError):
    pass


class LedgerFormatError(SRBFLError):
    """A serialized block, header or transaction could not be decoded."""


class UndefinedFusionError(SRBFLError):
    pass


class NoEligibleShardError(SRBFLError):
    pass


class ConfigError(SRBFLError):
    """Invalid simulation config; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


class SimulationError(SRBFLError):
    """Wraps a submodule failure with the round/device where it happened."""

    def __init__(self, message: str, *, round: int | None = None, device: int | None = None):
        where = []
        if round is not None:
            where.append(f"round {round}")
        if device is not None:
            where.append(f"device {device}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.round = round
        self.device = device
