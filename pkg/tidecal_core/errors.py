# tidecal_core/errors.py


class TidecalHalt(Exception):
    """Raised when a tidecal chain must halt due to integrity or data issues."""
    pass


class InvalidParameter(TidecalHalt, ValueError):
    """Physical parameter outside its admissible range (d <= 0, nu = 0.5, ...)."""
    pass


class ModelConfigError(TidecalHalt):
    """Model or watch configuration file is invalid."""
    pass


# --- Sensor CSV / series ---------------------------------------------------
class BadHeader(TidecalHalt):
    pass


class BadUnit(TidecalHalt):
    pass


class NonMonotonicTime(TidecalHalt):
    pass


class UnparsableRow(TidecalHalt):
    def __init__(self, line, detail=""):
        self.line = line
        super().__init__(f"unparsable row at line {line}{': ' + detail if detail else ''}")


class TooShort(TidecalHalt):
    pass


class NoOverlap(TidecalHalt):
    pass


# --- Solvers ---------------------------------------------------------------
class NewtonDivergence(TidecalHalt):
    def __init__(self, step, t=None, detail=""):
        self.step = step
        self.t = t
        super().__init__(f"Newton diverged at step {step} (t={t}) {detail}".strip())


class NoConvergence(TidecalHalt):
    """Multi-start root finding failed; `best` carries the best layout found."""

    def __init__(self, best, residual_norm):
        self.best = best
        self.residual_norm = residual_norm
        super().__init__(f"no start converged (best residual norm {residual_norm:.3e})")


class NonConvergent(TidecalHalt):
    pass


class BudgetExhausted(TidecalHalt):
    def __init__(self, result):
        self.result = result
        super().__init__(f"forward-run budget exhausted after {result.forward_runs} runs "
                         f"(best objective {result.objective:.4e})")


class SimulationFailure(TidecalHalt):
    def __init__(self, params, cause):
        self.params = params
        self.cause = cause
        super().__init__(f"simulation failed for parameters {params}: {cause}")


# --- Live mode -------------------------------------------------------------
class MalformedInput(TidecalHalt):
    def __init__(self, file, detail=""):
        self.file = file
        super().__init__(f"malformed input {file}{': ' + detail if detail else ''}")


class ClockRegression(TidecalHalt):
    pass


class MeshTooCoarseWarning(UserWarning):
    pass
