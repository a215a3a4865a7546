"""Exception types shared across the package."""


class EdgeListParseError(ValueError):
    """Malformed edge-list input. Carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigError(ValueError):
    """Invalid run configuration. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StoreError(RuntimeError):
    """A storage shard rejected or failed an operation."""


class TransportError(RuntimeError):
    """Connection lost, endpoint unreachable, or request timed out."""


class ProtocolError(RuntimeError):
    """Endpoints disagree about protocol state (e.g. mismatched barrier counters)."""


class BarrierAborted(RuntimeError):
    """The barrier round was aborted because a participant died."""
