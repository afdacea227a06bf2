"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (bad state, not bad shapes)."""


class PrecisionError(RuntimeError):
    """An operation requires a different float precision than it was given."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf value was detected where finite values are required."""


class VocabularyError(ValueError):
    """A symbol is missing from the grapheme vocabulary."""


class DataError(ValueError):
    """Corpus or manifest contents violate a precondition."""


class ValidationError(ValueError):
    """A config or spec field failed validation. Carries the field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss. Carries the step and batch ids."""

    def __init__(self, step: int, batch_ids: list[str]):
        super().__init__(
            f"non-finite loss at step {step} (batch: {', '.join(batch_ids)})"
        )
        self.step = step
        self.batch_ids = batch_ids
