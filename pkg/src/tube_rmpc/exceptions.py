class GeometryError(Exception):
    pass


class Unbounded(GeometryError):
    pass


class Infeasible(GeometryError):
    pass


class Degenerate(GeometryError):
    """Lower-dimensional input; ``origin`` and ``basis`` describe its affine hull."""

    def __init__(self, msg, origin=None, basis=None):
        super().__init__(msg)
        self.origin = origin
        self.basis = basis


class AssumptionViolated(Exception):
    def __init__(self, assumption: str, detail: str = ""):
        super().__init__(f"{assumption} violated: {detail}" if detail else f"{assumption} violated")
        self.assumption = assumption


class NoAdmissibleGamma(Exception):
    pass


class EmptyTerminalSet(Exception):
    pass


class IterationCap(Exception):
    def __init__(self, msg, gamma_trace=None):
        super().__init__(msg)
        self.gamma_trace = list(gamma_trace or [])


class NoFiniteLambda(Exception):
    pass
