"""
Holon Composition Framework: initialization, coalition and voting.

A trusted entity, itself a node of the simulated network, issues
certificates, creates composition secrets and counts votes. Candidates answer
``VoteRequest`` messages according to their vote policy; the trusted entity
finalizes a proposal once every vote is in, or when the vote timeout fires
(missing votes count as "no"). Compositions are registered as holons.

Operations that the protocol resolves asynchronously return a proposal id;
``finalize`` (called by the trusted entity or directly) produces the outcome.
"""

import logging
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Any

from .conditions import EvalContext, Expr, holds, parse, to_source
from .conf import SimulationConfig
from .crypto import CryptoProvider, KeyPair
from .exceptions import (
    AlreadyVoted,
    DuplicateId,
    HolonSimError,
    InitiatorNotACandidate,
    MergeRejected,
    NotACandidate,
    NotAMember,
    TrustedEntityUnreachable,
    UninitializedCandidate,
    UnknownComposition,
    UnknownProposal,
    VotingStillOpen,
    WrongPhase,
)
from .holons import CapabilityPredicate, Holon, HolonRegistry, Sensation
from .messages import (
    CertGrant,
    CertRequest,
    CompositionFinalized,
    CompositionRejected,
    MemberChangeProposal,
    MemberChangeResult,
    ProposalSubmit,
    SecretDistribute,
    VoteCast,
    VoteRequest,
)
from .simnet import SimNetwork
from .trace import TraceKind, TraceRecorder

logger = logging.getLogger(__name__)

DEFAULT_TRUSTED_ENTITY = "TE"


class ProposalKind(str, Enum):
    FORMATION = "formation"
    MEMBER_CHANGE = "member_change"
    MERGE = "merge"


class ProposalPhase(str, Enum):
    COALITION = "coalition"
    VOTING = "voting"
    FINALIZED = "finalized"
    REJECTED = "rejected"


_PHASE_ORDER = {
    ProposalPhase.COALITION: 0,
    ProposalPhase.VOTING: 1,
    ProposalPhase.FINALIZED: 2,
    ProposalPhase.REJECTED: 2,
}


class ChangeKind(str, Enum):
    ADD = "add"
    REMOVE = "remove"


class RuleAction(str, Enum):
    DISCOVER = "discover"
    INVITE = "invite"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class Certificate:
    subject: str
    public_key: bytes
    issued_at: int
    issuer_signature: bytes
    serial: int

    def signed_bytes(self) -> bytes:
        return f"{self.subject}|{self.serial}|{self.issued_at}|".encode("utf-8") + self.public_key


@dataclass(frozen=True)
class VotingConfig:
    formation_threshold: float = 1.0
    change_threshold: float = 0.5
    vote_timeout: int = 20

    def __post_init__(self):
        for name in ("formation_threshold", "change_threshold"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.vote_timeout <= 0:
            raise ValueError("vote_timeout must be positive")

    @classmethod
    def from_config(cls, config: SimulationConfig, **overrides) -> "VotingConfig":
        values = {
            "formation_threshold": config.formation_threshold,
            "change_threshold": config.change_threshold,
            "vote_timeout": config.vote_timeout,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


def meets_threshold(yes: int, total: int, threshold: float) -> bool:
    """Exact rational comparison of ``yes / total`` against the threshold."""
    if total == 0:
        return False
    return Fraction(yes, total) >= Fraction(str(threshold))


@dataclass(frozen=True)
class MembershipRule:
    condition: Expr
    action: RuleAction
    target_filter: CapabilityPredicate | None = None

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "MembershipRule":
        target = raw.get("target")
        return cls(
            condition=parse(raw["when"]),
            action=RuleAction(raw["action"]),
            target_filter=CapabilityPredicate.from_json(target) if target else None,
        )


@dataclass
class CompositionProposal:
    proposal_id: str
    kind: ProposalKind
    initiator: str
    candidates: frozenset[str]
    voting: VotingConfig
    composition_id: str
    opened_at: int
    rules: tuple[MembershipRule, ...] = ()
    behaviours: frozenset[str] = frozenset()
    phase: ProposalPhase = ProposalPhase.COALITION
    votes: dict[str, bool] = field(default_factory=dict)
    secret_id: str | None = None
    timed_out: bool = False
    candidate: str | None = None
    change: ChangeKind | None = None
    merge_of: tuple[str, ...] = ()
    outcome: Any = None

    @property
    def voters(self) -> frozenset[str]:
        return self.candidates

    @property
    def all_voted(self) -> bool:
        return set(self.votes) >= self.candidates

    @property
    def yes_voters(self) -> frozenset[str]:
        return frozenset(voter for voter, ballot in self.votes.items() if ballot)

    def advance(self, phase: ProposalPhase) -> None:
        if _PHASE_ORDER[phase] <= _PHASE_ORDER[self.phase]:
            raise WrongPhase(self.proposal_id, self.phase.value, phase.value)
        self.phase = phase


@dataclass
class CompositionRecord:
    composition_id: str
    members: frozenset[str]
    secret_id: str
    voting: VotingConfig
    rules: tuple[MembershipRule, ...] = ()
    behaviours: frozenset[str] = frozenset()
    parents: tuple[str, ...] = ()
    merged_into: str | None = None

    @property
    def is_active(self) -> bool:
        return self.merged_into is None


@dataclass(frozen=True)
class Rejected:
    proposal_id: str
    composition_id: str
    yes_voters: frozenset[str]
    reason: str


@dataclass(frozen=True)
class MemberChangeOutcome:
    proposal_id: str
    composition_id: str
    candidate: str
    kind: ChangeKind
    accepted: bool
    members: frozenset[str]


@dataclass(frozen=True)
class DiscoveryAction:
    composition_id: str
    action: RuleAction
    rule: str
    targets: tuple[str, ...]
    proposals: tuple[str, ...] = ()


CompositionListener = Callable[[CompositionRecord], None]
MembershipListener = Callable[[CompositionRecord, MemberChangeOutcome], None]


class CompositionFramework:
    """
    The trusted entity plus the voting agents of every holon.

    With ``autonomous`` set (the default for scenario runs), holons answer
    vote requests from their descriptor's vote policy and the trusted entity
    finalizes proposals itself. Tests that drive votes by hand turn it off.
    """

    def __init__(
        self,
        registry: HolonRegistry,
        net: SimNetwork,
        crypto: CryptoProvider,
        recorder: TraceRecorder,
        trusted_entity: str = DEFAULT_TRUSTED_ENTITY,
        voting: VotingConfig | None = None,
        autonomous: bool = True,
    ):
        self.registry = registry
        self.net = net
        self.crypto = crypto
        self.recorder = recorder
        self.trusted_entity = trusted_entity
        self.voting = voting or VotingConfig.from_config(net.config)
        self.autonomous = autonomous
        self.certificates: dict[str, Certificate] = {}
        self.proposals: dict[str, CompositionProposal] = {}
        self.compositions: dict[str, CompositionRecord] = {}
        self._keypairs: dict[str, KeyPair] = {}
        self._serial = 0
        self._proposal_counter = 0
        self._event_log: list[Sensation] = []
        self._composition_listeners: list[CompositionListener] = []
        self._membership_listeners: list[MembershipListener] = []

        if not net.has_node(trusted_entity):
            net.register_node(trusted_entity)
        self._te_keys = crypto.generate_keypair(trusted_entity)
        net.subscribe(VoteRequest, self._on_vote_request)
        net.subscribe(VoteCast, self._on_vote_cast)
        registry.on_sensation(self._on_sensation)

    # listeners

    def on_composition(self, listener: CompositionListener) -> None:
        """Called for every finalized composition, merged ones included."""
        self._composition_listeners.append(listener)

    def on_membership(self, listener: MembershipListener) -> None:
        self._membership_listeners.append(listener)

    # lookups

    def _proposal(self, proposal_id: str) -> CompositionProposal:
        try:
            return self.proposals[proposal_id]
        except KeyError as exc:
            raise UnknownProposal(proposal_id) from exc

    def record(self, composition_id: str) -> CompositionRecord:
        try:
            return self.compositions[composition_id]
        except KeyError as exc:
            raise UnknownComposition(composition_id) from exc

    def is_initialized(self, holon_id: str) -> bool:
        return holon_id in self.certificates

    def members(self, composition_id: str) -> frozenset[str]:
        return self.record(composition_id).members

    def _next_proposal_id(self) -> str:
        self._proposal_counter += 1
        return f"p{self._proposal_counter}"

    # initialization phase

    def initialize(self, holon_id: str) -> Certificate:
        """Issue a certificate to ``holon_id``; a later call supersedes the earlier certificate."""
        self.registry.get(holon_id)
        if not self.net.is_reachable(holon_id, self.trusted_entity):
            logger.warning(f"Cannot initialize {holon_id}: trusted entity unreachable")
            raise TrustedEntityUnreachable(holon_id, self.trusted_entity)
        keypair = self.crypto.generate_keypair(holon_id)
        self._serial += 1
        unsigned = Certificate(holon_id, keypair.public_key, self.net.now, b"", self._serial)
        signature = self.crypto.sign(self._te_keys, unsigned.signed_bytes())
        certificate = replace(unsigned, issuer_signature=signature)
        self._keypairs[holon_id] = keypair
        self.certificates[holon_id] = certificate
        te = self.trusted_entity
        self.net.send(holon_id, te, CertRequest(holon_id, te, holon_id, keypair.public_key))
        self.net.send(te, holon_id, CertGrant(te, holon_id, holon_id, keypair.public_key, self.net.now, signature))
        self.recorder.emit(TraceKind.CERT_ISSUED, subject=holon_id, serial=certificate.serial)
        logger.debug(f"Issued certificate #{certificate.serial} to {holon_id}")
        return certificate

    def verify_certificate(self, certificate: Certificate) -> bool:
        """Valid iff signed by the trusted entity and still the subject's current certificate."""
        current = self.certificates.get(certificate.subject)
        if current is None or current.serial != certificate.serial:
            return False
        return self.crypto.verify(
            self._te_keys.public_key, certificate.signed_bytes(), certificate.issuer_signature
        )

    # coalition phase

    def propose_composition(
        self,
        initiator: str,
        candidates: Iterable[str],
        rules: Iterable[MembershipRule] = (),
        voting: VotingConfig | None = None,
        behaviours: Iterable[str] = (),
        composition_id: str | None = None,
    ) -> str:
        candidates = frozenset(candidates)
        for holon_id in sorted(candidates | {initiator}):
            self.registry.get(holon_id)
        if initiator not in candidates:
            raise InitiatorNotACandidate(initiator)
        for holon_id in sorted(candidates):
            if not self.is_initialized(holon_id):
                raise UninitializedCandidate(holon_id)
        proposal_id = self._next_proposal_id()
        composition_id = composition_id or f"composition-{proposal_id}"
        if composition_id in self.registry or composition_id in self.compositions:
            raise DuplicateId(composition_id)
        proposal = CompositionProposal(
            proposal_id=proposal_id,
            kind=ProposalKind.FORMATION,
            initiator=initiator,
            candidates=candidates,
            voting=voting or self.voting,
            composition_id=composition_id,
            opened_at=self.net.now,
            rules=tuple(rules),
            behaviours=frozenset(behaviours),
            secret_id=self.crypto.new_secret(composition_id),
        )
        self.proposals[proposal_id] = proposal
        self.recorder.emit(
            TraceKind.PROPOSAL_CREATED,
            proposal=proposal_id,
            kind=proposal.kind,
            initiator=initiator,
            composition=composition_id,
            candidates=candidates,
        )
        te = self.trusted_entity
        self.net.send(initiator, te, ProposalSubmit(initiator, te, proposal_id, tuple(sorted(candidates))))
        self._open_voting(proposal, subject=composition_id)
        return proposal_id

    def _open_voting(self, proposal: CompositionProposal, subject: str) -> None:
        proposal.advance(ProposalPhase.VOTING)
        te = self.trusted_entity
        for voter in sorted(proposal.voters):
            self.net.send(te, voter, VoteRequest(te, voter, proposal.proposal_id, proposal.kind.value, subject))
        self.net.schedule(proposal.voting.vote_timeout, self._on_timeout, proposal.proposal_id)
        logger.info(
            f"Proposal {proposal.proposal_id} ({proposal.kind.value}) open for {len(proposal.voters)} vote(s)"
        )

    # voting phase

    def cast_vote(self, holon_id: str, proposal_id: str, yes: bool) -> None:
        proposal = self._proposal(proposal_id)
        if holon_id not in proposal.voters:
            raise NotACandidate(holon_id, proposal_id)
        if proposal.phase is not ProposalPhase.VOTING:
            raise WrongPhase(proposal_id, proposal.phase.value)
        if holon_id in proposal.votes:
            raise AlreadyVoted(holon_id, proposal_id)
        proposal.votes[holon_id] = bool(yes)
        self.recorder.emit(
            TraceKind.VOTE_CAST, proposal=proposal_id, voter=holon_id, vote="yes" if yes else "no"
        )
        if self.autonomous and proposal.all_voted:
            self.net.schedule(0, self._auto_finalize, proposal_id)

    def _on_vote_request(self, envelope, message: VoteRequest) -> None:
        if not self.autonomous or envelope.dst not in self.registry:
            return
        policy = self.registry.get(envelope.dst).vote
        if policy == "abstain":
            logger.debug(f"{envelope.dst} abstains on {message.ref}")
            return
        te = self.trusted_entity
        self.net.send(envelope.dst, te, VoteCast(envelope.dst, te, message.ref, policy == "yes"))

    def _on_vote_cast(self, envelope, message: VoteCast) -> None:
        if envelope.dst != self.trusted_entity:
            return
        try:
            self.cast_vote(envelope.src, message.ref, message.yes)
        except HolonSimError as exc:
            logger.warning(f"Ignoring vote from {envelope.src}: {exc}")

    def _on_timeout(self, proposal_id: str) -> None:
        proposal = self.proposals[proposal_id]
        if proposal.phase is not ProposalPhase.VOTING:
            return
        proposal.timed_out = True
        missing = sorted(proposal.voters - set(proposal.votes))
        logger.info(f"Vote timeout on {proposal_id}; counting {missing or 'nobody'} as no")
        if self.autonomous:
            self._auto_finalize(proposal_id)

    def _auto_finalize(self, proposal_id: str) -> None:
        if self.proposals[proposal_id].phase is not ProposalPhase.VOTING:
            return
        try:
            self.finalize(proposal_id)
        except MergeRejected as exc:
            logger.info(str(exc))

    def finalize(self, proposal_id: str):
        """
        Close the vote. Returns a CompositionRecord or Rejected for a
        formation, a MemberChangeOutcome for a member change and the merged
        CompositionRecord for a merge (raising MergeRejected on refusal).
        """
        proposal = self._proposal(proposal_id)
        if proposal.phase is not ProposalPhase.VOTING:
            raise WrongPhase(proposal_id, proposal.phase.value)
        if not proposal.all_voted and not proposal.timed_out:
            raise VotingStillOpen(proposal_id, proposal.phase.value, "all votes or timeout")
        if proposal.kind is ProposalKind.FORMATION:
            outcome = self._finalize_formation(proposal)
        elif proposal.kind is ProposalKind.MEMBER_CHANGE:
            outcome = self._finalize_member_change(proposal)
        else:
            outcome = self._finalize_merge(proposal)
        proposal.outcome = outcome
        return outcome

    def _finalize_formation(self, proposal: CompositionProposal):
        yes = proposal.yes_voters
        threshold = proposal.voting.formation_threshold
        if yes and meets_threshold(len(yes), len(proposal.candidates), threshold):
            proposal.advance(ProposalPhase.FINALIZED)
            record = CompositionRecord(
                composition_id=proposal.composition_id,
                members=yes,
                secret_id=proposal.secret_id,
                voting=proposal.voting,
                rules=proposal.rules,
                behaviours=proposal.behaviours,
            )
            self._install(record)
            self.recorder.emit(
                TraceKind.COMPOSITION_FINALIZED,
                proposal=proposal.proposal_id,
                composition=record.composition_id,
                members=record.members,
            )
            self._trace_rotation(record)
            logger.info(f"Composition {record.composition_id} finalized with {sorted(record.members)}")
            self._notify_composition(record)
            return record

        proposal.advance(ProposalPhase.REJECTED)
        self.crypto.destroy_secret(proposal.secret_id)
        reason = f"{len(yes)}/{len(proposal.candidates)} yes below {threshold}"
        te = self.trusted_entity
        for candidate in sorted(proposal.candidates):
            self.net.send(te, candidate, CompositionRejected(te, candidate, proposal.proposal_id, reason))
        self.recorder.emit(
            TraceKind.COMPOSITION_REJECTED,
            proposal=proposal.proposal_id,
            composition=proposal.composition_id,
            yes=len(yes),
            reason=reason,
        )
        logger.info(f"Composition {proposal.composition_id} rejected: {reason}")
        return Rejected(proposal.proposal_id, proposal.composition_id, yes, reason)

    def _install(self, record: CompositionRecord) -> None:
        for member in sorted(record.members):
            self.crypto.grant(record.secret_id, member)
        if record.composition_id not in self.registry:
            self.registry.register_holon(Holon(record.composition_id, is_composition=True))
        self.compositions[record.composition_id] = record
        te = self.trusted_entity
        members = tuple(sorted(record.members))
        for member in members:
            self.net.send(
                te, member, SecretDistribute(te, member, record.composition_id, record.secret_id, members)
            )
            self.net.send(
                te,
                member,
                CompositionFinalized(te, member, record.composition_id, members),
                sealed_under=record.secret_id,
            )

    def _trace_rotation(self, record: CompositionRecord) -> None:
        self.recorder.emit(
            TraceKind.SECRET_ROTATED,
            composition=record.composition_id,
            secret=record.secret_id,
            holders=self.crypto.holders(record.secret_id),
        )

    def _notify_composition(self, record: CompositionRecord) -> None:
        for listener in list(self._composition_listeners):
            listener(record)

    # membership changes

    def member_change(self, composition_id: str, candidate: str, kind: ChangeKind | str) -> str:
        record = self.record(composition_id)
        kind = ChangeKind(kind)
        self.registry.get(candidate)
        if kind is ChangeKind.ADD:
            if not self.is_initialized(candidate):
                raise UninitializedCandidate(candidate)
            if candidate in record.members:
                raise ValueError(f"'{candidate}' is already a member of '{composition_id}'")
        elif candidate not in record.members:
            raise NotAMember(candidate, composition_id)
        proposal_id = self._next_proposal_id()
        proposal = CompositionProposal(
            proposal_id=proposal_id,
            kind=ProposalKind.MEMBER_CHANGE,
            initiator=composition_id,
            candidates=record.members,
            voting=record.voting,
            composition_id=composition_id,
            opened_at=self.net.now,
            candidate=candidate,
            change=kind,
        )
        self.proposals[proposal_id] = proposal
        self.recorder.emit(
            TraceKind.PROPOSAL_CREATED,
            proposal=proposal_id,
            kind=proposal.kind,
            composition=composition_id,
            candidate=candidate,
            change=kind,
        )
        te = self.trusted_entity
        self.net.send(composition_id, te, MemberChangeProposal(composition_id, te, proposal_id, candidate, kind.value))
        self._open_voting(proposal, subject=candidate)
        return proposal_id

    def _finalize_member_change(self, proposal: CompositionProposal) -> MemberChangeOutcome:
        record = self.record(proposal.composition_id)
        yes = proposal.yes_voters
        accepted = meets_threshold(len(yes), len(proposal.voters), record.voting.change_threshold)
        if proposal.change is ChangeKind.ADD:
            members = record.members | {proposal.candidate}
        else:
            members = record.members - {proposal.candidate}
        if not members:
            accepted = False
        proposal.advance(ProposalPhase.FINALIZED if accepted else ProposalPhase.REJECTED)
        if accepted:
            # the old secret stays with its holders; only the new one is current
            record.members = members
            record.secret_id = self.crypto.new_secret(record.composition_id)
            for member in sorted(members):
                self.crypto.grant(record.secret_id, member)
            te = self.trusted_entity
            ordered = tuple(sorted(members))
            for member in ordered:
                self.net.send(
                    te, member, SecretDistribute(te, member, record.composition_id, record.secret_id, ordered)
                )
        outcome = MemberChangeOutcome(
            proposal.proposal_id,
            record.composition_id,
            proposal.candidate,
            proposal.change,
            accepted,
            record.members,
        )
        self.recorder.emit(
            TraceKind.MEMBER_CHANGED,
            proposal=proposal.proposal_id,
            composition=record.composition_id,
            candidate=proposal.candidate,
            change=proposal.change,
            accepted="true" if accepted else "false",
            members=record.members,
        )
        if accepted:
            self._trace_rotation(record)
        te = self.trusted_entity
        for recipient in sorted(proposal.voters | {proposal.candidate}):
            # holons outside the composition now cannot open its secret
            sealed_under = record.secret_id if recipient in record.members else None
            self.net.send(
                te,
                recipient,
                MemberChangeResult(te, recipient, proposal.proposal_id, proposal.candidate, proposal.change.value, accepted),
                sealed_under=sealed_under,
            )
        logger.info(
            f"{proposal.change.value} {proposal.candidate} on {record.composition_id}: "
            f"{'accepted' if accepted else 'rejected'} ({len(yes)}/{len(proposal.voters)})"
        )
        if accepted:
            for listener in list(self._membership_listeners):
                listener(record, outcome)
        return outcome

    # merging

    def merge_compositions(self, a: str, b: str, composition_id: str | None = None) -> str:
        first, second = self.record(a), self.record(b)
        proposal_id = self._next_proposal_id()
        merged_id = composition_id or f"{a}+{b}"
        suffix = 1
        while merged_id in self.registry or merged_id in self.compositions:
            suffix += 1
            merged_id = f"{a}+{b}#{suffix}"
        proposal = CompositionProposal(
            proposal_id=proposal_id,
            kind=ProposalKind.MERGE,
            initiator=a,
            candidates=first.members | second.members,
            voting=first.voting,
            composition_id=merged_id,
            opened_at=self.net.now,
            merge_of=(a, b),
            secret_id=self.crypto.new_secret(merged_id),
        )
        self.proposals[proposal_id] = proposal
        self.recorder.emit(
            TraceKind.PROPOSAL_CREATED,
            proposal=proposal_id,
            kind=proposal.kind,
            composition=merged_id,
            parents=(a, b),
        )
        self._open_voting(proposal, subject=merged_id)
        return proposal_id

    def _finalize_merge(self, proposal: CompositionProposal) -> CompositionRecord:
        # each composition votes as one holon, by its own change threshold
        yes = proposal.yes_voters
        dissenting = []
        for composition_id in dict.fromkeys(proposal.merge_of):
            record = self.record(composition_id)
            agreeing = len(yes & record.members)
            if not meets_threshold(agreeing, len(record.members), record.voting.change_threshold):
                dissenting.append(composition_id)
        if dissenting:
            proposal.advance(ProposalPhase.REJECTED)
            self.crypto.destroy_secret(proposal.secret_id)
            reason = f"merge refused by {','.join(sorted(dissenting))}"
            self.recorder.emit(
                TraceKind.COMPOSITION_REJECTED,
                proposal=proposal.proposal_id,
                composition=proposal.composition_id,
                yes=len(yes),
                reason=reason,
            )
            error = MergeRejected(proposal.proposal_id, dissenting)
            proposal.outcome = error
            raise error

        proposal.advance(ProposalPhase.FINALIZED)
        first, second = (self.record(cid) for cid in proposal.merge_of)
        rules = first.rules + tuple(rule for rule in second.rules if rule not in first.rules)
        record = CompositionRecord(
            composition_id=proposal.composition_id,
            members=first.members | second.members,
            secret_id=proposal.secret_id,
            voting=first.voting,
            rules=rules,
            behaviours=first.behaviours | second.behaviours,
            parents=proposal.merge_of,
        )
        first.merged_into = record.composition_id
        second.merged_into = record.composition_id
        self._install(record)
        self.recorder.emit(
            TraceKind.COMPOSITION_MERGED,
            proposal=proposal.proposal_id,
            composition=record.composition_id,
            parents=record.parents,
            members=record.members,
        )
        self._trace_rotation(record)
        logger.info(f"Merged {proposal.merge_of[0]} and {proposal.merge_of[1]} into {record.composition_id}")
        self._notify_composition(record)
        return record

    # membership rules

    def rule_context(self, record: CompositionRecord, event: Sensation | None = None) -> EvalContext:
        members = []
        for member in sorted(record.members):
            holon = self.registry.get(member)
            view = {"id": member, **holon.scores, **holon.state.entries}
            members.append(view)
        bindings: dict[str, Any] = {"members": members}
        if event is not None:
            bindings["sensation"] = event
        shared = self.registry.get(record.composition_id).state.entries
        return EvalContext(bindings, shared, tuple(self._event_log), self.net.now)

    def _rule_targets(self, record: CompositionRecord, rule: MembershipRule) -> list[str]:
        if rule.action is RuleAction.EXCLUDE:
            pool = sorted(record.members)
        else:
            pool = [
                holon.holon_id
                for holon in self.registry.holons()
                if not holon.is_composition and holon.holon_id not in record.members
            ]
        if rule.target_filter is None:
            return pool
        return [
            holon_id
            for holon_id in pool
            if any(rule.target_filter.matches(r) for r in self.registry.get(holon_id).resources.values())
        ]

    def _change_pending(self, composition_id: str, candidate: str) -> bool:
        return any(
            proposal.kind is ProposalKind.MEMBER_CHANGE
            and proposal.composition_id == composition_id
            and proposal.candidate == candidate
            and proposal.phase is ProposalPhase.VOTING
            for proposal in self.proposals.values()
        )

    def evaluate_membership_rules(
        self, composition_id: str, event: Sensation | None = None
    ) -> list[DiscoveryAction]:
        """
        Evaluate every rule of the composition; invite rules open add
        proposals for initialized targets, exclude rules open remove proposals,
        discover rules only report their targets.
        """
        record = self.record(composition_id)
        context = self.rule_context(record, event)
        actions = []
        for rule in record.rules:
            if not holds(rule.condition, context):
                continue
            targets = self._rule_targets(record, rule)
            proposals = []
            for target in targets:
                if self._change_pending(composition_id, target):
                    continue
                if rule.action is RuleAction.INVITE and self.is_initialized(target):
                    proposals.append(self.member_change(composition_id, target, ChangeKind.ADD))
                elif rule.action is RuleAction.EXCLUDE and len(record.members) > 1:
                    proposals.append(self.member_change(composition_id, target, ChangeKind.REMOVE))
            action = DiscoveryAction(
                composition_id, rule.action, to_source(rule.condition), tuple(targets), tuple(proposals)
            )
            logger.info(f"Rule on {composition_id} fired: {action.action.value} {list(targets)}")
            actions.append(action)
        return actions

    def _on_sensation(self, sensation: Sensation) -> None:
        self._event_log.append(sensation)
        for composition_id in sorted(self.compositions):
            record = self.compositions[composition_id]
            if not record.is_active or not record.rules:
                continue
            if sensation.source in record.members or sensation.source == composition_id:
                self.evaluate_membership_rules(composition_id, sensation)

    # audit

    def audit(self) -> list[str]:
        """Secret-confinement violations: current secret holders must equal the members."""
        problems = []
        for composition_id in sorted(self.compositions):
            record = self.compositions[composition_id]
            holders = self.crypto.holders(record.secret_id)
            if holders != record.members:
                problems.append(
                    f"{composition_id}: holders {sorted(holders)} != members {sorted(record.members)}"
                )
        return problems
