"""
Error types raised by the holon runtime.

Every error derives from ``HolonSimError`` so callers (management commands,
views, tests) can catch the whole family at once.
"""

from collections.abc import Iterable


class HolonSimError(Exception):
    """Base class for all runtime errors."""


# holon registry


class DuplicateId(HolonSimError):
    def __init__(self, holon_id: str):
        super().__init__(f"Holon '{holon_id}' is already registered")
        self.holon_id = holon_id


class UnknownHolon(HolonSimError):
    def __init__(self, holon_id: str):
        super().__init__(f"Holon '{holon_id}' is not registered")
        self.holon_id = holon_id


class UnknownCapability(HolonSimError):
    def __init__(self, holon_id: str, capability: str):
        super().__init__(f"Holon '{holon_id}' has no capability '{capability}'")
        self.holon_id = holon_id
        self.capability = capability


class ResourceBusy(HolonSimError):
    """A resource was engaged twice; always a runtime bug."""


# network


class UnknownNode(HolonSimError):
    def __init__(self, node: str):
        super().__init__(f"Node '{node}' is not registered on the network")
        self.node = node


# composition framework


class TrustedEntityUnreachable(HolonSimError):
    def __init__(self, holon_id: str, trusted_entity: str):
        super().__init__(
            f"Cannot initialize '{holon_id}': link to trusted entity '{trusted_entity}' is down"
        )
        self.holon_id = holon_id


class UninitializedCandidate(HolonSimError):
    def __init__(self, holon_id: str):
        super().__init__(f"Holon '{holon_id}' holds no valid certificate")
        self.holon_id = holon_id


class NotACandidate(HolonSimError):
    def __init__(self, holon_id: str, proposal_id: str):
        super().__init__(f"Holon '{holon_id}' is not a voter on proposal '{proposal_id}'")


class InitiatorNotACandidate(HolonSimError, ValueError):
    def __init__(self, holon_id: str):
        super().__init__(f"Initiator '{holon_id}' must be one of the candidates")
        self.holon_id = holon_id


class AlreadyVoted(HolonSimError):
    def __init__(self, holon_id: str, proposal_id: str):
        super().__init__(f"Holon '{holon_id}' already voted on proposal '{proposal_id}'")


class WrongPhase(HolonSimError):
    def __init__(self, proposal_id: str, phase: str, expected: str = "voting"):
        super().__init__(f"Proposal '{proposal_id}' is in phase '{phase}', expected '{expected}'")
        self.phase = phase


class VotingStillOpen(WrongPhase):
    """finalize() was called before every vote arrived and before the timeout."""


class UnknownComposition(HolonSimError):
    def __init__(self, composition_id: str):
        super().__init__(f"Composition '{composition_id}' is not finalized")
        self.composition_id = composition_id


class MergeRejected(HolonSimError):
    def __init__(self, proposal_id: str, dissenting: Iterable[str]):
        dissenting = sorted(dissenting)
        super().__init__(f"Merge '{proposal_id}' rejected by {', '.join(dissenting)}")
        self.dissenting = dissenting


class UnknownProposal(HolonSimError):
    def __init__(self, proposal_id: str):
        super().__init__(f"Proposal '{proposal_id}' does not exist")


# condition language


class ConditionError(HolonSimError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ConditionSyntaxError(ConditionError):
    def __init__(self, message: str, line=None, column=None, expected: Iterable[str] = ()):
        super().__init__(message, line, column)
        self.expected = frozenset(expected)


class ConditionTypeError(ConditionError):
    pass


# collaboration


class EmptyParticipants(HolonSimError):
    pass


class NotAMember(HolonSimError):
    def __init__(self, holon_id: str, composition_id: str):
        super().__init__(f"Holon '{holon_id}' is not a member of '{composition_id}'")


class NotAParticipant(HolonSimError):
    def __init__(self, holon_id: str, collab_id: str):
        super().__init__(f"Holon '{holon_id}' does not participate in '{collab_id}'")


class MissingScore(HolonSimError):
    def __init__(self, holon_id: str, criterion: str):
        super().__init__(f"Candidate '{holon_id}' has no score for '{criterion}'")


class CompositionsNotMerged(HolonSimError):
    pass


# behaviours


class InstanceNotRunning(HolonSimError):
    def __init__(self, instance_id: str, status: str):
        super().__init__(f"Instance '{instance_id}' is {status}, not running")
        self.status = status


# scenario tooling


class ScenarioError(HolonSimError):
    """Carries every located problem found while loading a scenario."""

    def __init__(self, errors: Iterable[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ParseError(ScenarioError):
    pass


class UnresolvedReference(ScenarioError):
    pass


class MalformedAssertion(HolonSimError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MalformedTrace(HolonSimError):
    pass


class InvariantViolation(HolonSimError):
    pass
