"""Exception hierarchy shared by every stage of the pipeline."""


class KeepError(Exception):
    """Base class for all errors raised by this package."""


class OntologyError(KeepError):
    """The concept hierarchy is malformed (missing root, broken reachability)."""


class CycleError(OntologyError):
    def __init__(self, edge, cycle=None):
        self.edge = edge
        self.cycle = cycle or []
        super().__init__(f"is-a cycle detected at edge {edge[0]} -> {edge[1]}")


class ConfigError(KeepError, ValueError):
    """A configuration field holds an invalid value."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DivergenceError(KeepError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss=float("nan")):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")


class UnknownConceptError(KeepError, KeyError):
    pass
