"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class IntegrationError(RuntimeError):
    """Raised when the event-driven integrator cannot continue.

    Carries the model time, the state and the mark at which the failure
    happened so that the offending event can be replayed.
    """

    def __init__(self, message, time=None, state=None, mark=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.mark = mark

    def diagnostic(self):
        mark = self.mark
        if mark is not None and hasattr(mark, "dtype") and mark.dtype.names:
            mark = {name: float(mark[name]) for name in mark.dtype.names}
        return {
            "error": str(self.args[0]),
            "time": self.time,
            "state": self.state,
            "mark": mark,
        }
