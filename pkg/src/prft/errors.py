"""Exception types shared across the package."""


class PrftError(Exception):
    """Base class for all package errors."""


class ContractViolationError(PrftError):
    """An operation was called outside its stated precondition."""


class DivergenceError(PrftError):
    """Training produced a non-finite value; the run must abort."""


class FrozenModelError(PrftError):
    """A mutation was attempted on a frozen reward model."""


class ModelNotFrozenError(PrftError):
    """Relabeling requires a frozen reward model."""


class DegenerateFitError(PrftError):
    """Linear fit requested on data with no ground-truth variance."""


class ConfigError(PrftError):
    """Invalid or missing experiment configuration."""


class RewardLeakError(PrftError):
    """True reward was read on a reward-free code path."""
