class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class NotFoundError(LookupError):
    """Raised when a requested point (e.g. a collapse step) does not exist."""


class MissingClusterError(LookupError):
    """A checkpoint has no records for one or more semantic clusters."""

    def __init__(self, step: int, clusters: list[str]):
        self.step = step
        self.clusters = list(clusters)
        super().__init__(f"step {step}: no records for cluster(s) {', '.join(self.clusters)}")
