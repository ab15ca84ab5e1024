class InputError(ValueError):
    """Bad user input: mismatched dimensions, invalid parameters, malformed configs."""


class EvaluationError(RuntimeError):
    """Numerical evaluation failed (underflow to an empty log-sum, degenerate system)."""
