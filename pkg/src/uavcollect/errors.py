"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (e.g. an infeasible action)."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NotReady(RuntimeError):
    """The replay memory does not yet hold enough entries to sample from."""
