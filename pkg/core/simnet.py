"""
Deterministic discrete-event network and virtual clock.

The simpy environment is the single event loop of a run: every message
delivery, timer and scheduled injection is a simpy timeout processed in
(time, insertion order). One seeded ``random.Random`` owned by the network
provides jitter and drop decisions, consumed in event order.
"""

import logging
import math
import random
from collections import defaultdict
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import simpy

from .conf import SimulationConfig
from .crypto import CryptoProvider, NotAHolder
from .exceptions import UnknownNode
from .messages import Message, decode
from .trace import TraceEvent, TraceKind, TraceRecorder

logger = logging.getLogger(__name__)

QUIESCENCE = None


class LinkQuality(str, Enum):
    GOOD = "good"
    WEAK = "weak"
    DOWN = "down"


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class Link:
    endpoints: tuple[str, str]
    quality: LinkQuality
    base_delay: int
    drop_probability: float
    relay: str | None = None

    @property
    def effective_quality(self) -> LinkQuality:
        """A deployed relay lifts a weak link to good-link parameters."""
        if self.relay is not None and self.quality is LinkQuality.WEAK:
            return LinkQuality.GOOD
        return self.quality


@dataclass(frozen=True)
class Envelope:
    src: str
    dst: str
    send_time: int
    deliver_time: int
    seq: int
    data: bytes
    sealed_under: str | None = None
    relay: str | None = None


@dataclass
class _Pending:
    src: str
    dst: str
    data: bytes
    sealed_under: str | None
    send_time: int
    label: str
    reliable: bool = True


Handler = Callable[[Envelope, Message | None], None]
Subscriber = Callable[[Envelope, Message], None]
LinkListener = Callable[[str, str, LinkQuality, LinkQuality], None]


@dataclass
class NetworkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    held: int = 0
    decisions: list[tuple[int, str, str, bool]] = field(default_factory=list)


class SimNetwork:
    """
    The simulated network. Nodes register a handler; ``send`` schedules a
    delivery according to the link between the two nodes.
    """

    def __init__(
        self,
        seed: int,
        config: SimulationConfig,
        recorder: TraceRecorder,
        crypto: CryptoProvider | None = None,
    ):
        self.env = simpy.Environment()
        self.rng = random.Random(seed)
        self.config = config
        self.recorder = recorder
        self.crypto = crypto
        recorder.clock = lambda: self.env.now
        self._handlers: dict[str, Handler] = {}
        self._links: dict[tuple[str, str], Link] = {}
        self._pending: dict[tuple[str, str], list[_Pending]] = defaultdict(list)
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._link_listeners: list[LinkListener] = []
        self._subscribers: dict[type[Message], list[Subscriber]] = defaultdict(list)
        self._seq = 0
        self.stats = NetworkStats()

    # nodes and links

    @property
    def now(self) -> int:
        return self.env.now

    def register_node(self, node: str, handler: Handler | None = None) -> None:
        self._handlers[node] = handler or (lambda envelope, message: None)

    def set_handler(self, node: str, handler: Handler) -> None:
        self._require(node)
        self._handlers[node] = handler

    def subscribe(self, message_type: type[Message], subscriber: Subscriber) -> None:
        """Receive every readable ``message_type`` after the destination node's own handler."""
        self._subscribers[message_type].append(subscriber)

    def has_node(self, node: str) -> bool:
        return node in self._handlers

    def nodes(self) -> list[str]:
        return sorted(self._handlers)

    def _require(self, *nodes: str) -> None:
        for node in nodes:
            if node not in self._handlers:
                raise UnknownNode(node)

    def link(self, a: str, b: str) -> Link:
        self._require(a, b)
        key = link_key(a, b)
        if key not in self._links:
            self._links[key] = self._make_link(key, LinkQuality.GOOD)
        return self._links[key]

    def _make_link(self, key: tuple[str, str], quality: LinkQuality) -> Link:
        link = Link(key, quality, self.config.good_link_delay, self.config.good_drop_probability)
        self._apply_quality(link, quality)
        return link

    def _apply_quality(self, link: Link, quality: LinkQuality) -> None:
        link.quality = quality
        if link.effective_quality is LinkQuality.WEAK:
            link.base_delay = self.config.good_link_delay * self.config.weak_delay_factor
            link.drop_probability = self.config.weak_drop_probability
        else:
            link.base_delay = self.config.good_link_delay
            link.drop_probability = self.config.good_drop_probability

    def add_link_listener(self, listener: LinkListener) -> None:
        self._link_listeners.append(listener)

    def set_link(self, a: str, b: str, quality: LinkQuality | str) -> None:
        quality = LinkQuality(quality)
        link = self.link(a, b)
        old = link.effective_quality
        if link.quality is quality:
            return
        self._apply_quality(link, quality)
        new = link.effective_quality
        logger.info(f"Link {a}-{b} is now {quality.value} (effective {new.value})")
        if old is new:
            return
        self.recorder.emit(TraceKind.LINK_CHANGED, a=link.endpoints[0], b=link.endpoints[1], quality=new)
        if old is LinkQuality.DOWN:
            self._flush(link.endpoints)
        for listener in list(self._link_listeners):
            listener(link.endpoints[0], link.endpoints[1], old, new)

    def deploy_relay(self, relay: str, a: str, b: str) -> Link:
        """Insert ``relay`` on the (a, b) link; a weak link then routes at good-link parameters."""
        link = self.link(a, b)
        old = link.effective_quality
        link.relay = relay
        self._apply_quality(link, link.quality)
        new = link.effective_quality
        if old is not new:
            self.recorder.emit(
                TraceKind.LINK_CHANGED, a=link.endpoints[0], b=link.endpoints[1], quality=new, via=relay
            )
            for listener in list(self._link_listeners):
                listener(link.endpoints[0], link.endpoints[1], old, new)
        return link

    def links_of(self, node: str) -> list[Link]:
        return [self._links[key] for key in sorted(self._links) if node in key]

    def is_reachable(self, a: str, b: str) -> bool:
        return a == b or self.link(a, b).effective_quality is not LinkQuality.DOWN

    # messaging

    def schedule(self, delay: int, callback: Callable[..., None], *args) -> None:
        """Run ``callback(*args)`` after ``delay`` ticks, after everything already due then."""
        if delay < 0:
            raise ValueError("Cannot schedule into the past")
        event = self.env.timeout(delay)
        event.callbacks.append(lambda _event: callback(*args))

    def schedule_at(self, tick: int, callback: Callable[..., None], *args) -> None:
        self.schedule(max(0, tick - self.env.now), callback, *args)

    def send(
        self,
        src: str,
        dst: str,
        message: Message,
        sealed_under: str | None = None,
        reliable: bool = True,
    ) -> None:
        """
        Route ``message`` from ``src`` to ``dst``. A reliable send that loses
        the drop draw is retransmitted after ``2 * base_delay`` ticks, with a
        fresh draw per attempt; an unreliable one is simply lost.
        """
        self._require(src, dst)
        data = message.encode()
        if sealed_under is not None:
            data = self.crypto.seal(sealed_under, data)
        self.stats.sent += 1
        self._route(_Pending(src, dst, data, sealed_under, self.env.now, message.name, reliable))

    def _route(self, pending: _Pending) -> None:
        label = pending.label
        if pending.src == pending.dst:
            self._enqueue(pending, 0, None)
            return
        link = self.link(pending.src, pending.dst)
        if link.effective_quality is LinkQuality.DOWN:
            self.stats.held += 1
            self._pending[link.endpoints].append(pending)
            logger.debug(f"Holding {label} {pending.src}->{pending.dst}: link down")
            return
        jitter = self.rng.randint(0, self.config.jitter_ticks) if self.config.jitter_ticks else 0
        attempts = 0
        while link.drop_probability > 0 and self.rng.random() < link.drop_probability:
            self.stats.decisions.append((self.env.now, pending.src, pending.dst, True))
            self.stats.dropped += 1
            attempts += 1
            logger.warning(f"Dropped {label} {pending.src}->{pending.dst} on {link.quality.value} link")
            self.recorder.emit(
                TraceKind.MESSAGE_DROPPED, src=pending.src, dst=pending.dst, message=label, attempt=attempts
            )
            if not pending.reliable:
                return
        self.stats.decisions.append((self.env.now, pending.src, pending.dst, False))
        retransmit = attempts * 2 * link.base_delay
        self._enqueue(pending, link.base_delay + jitter + retransmit, link.relay)

    def _enqueue(self, pending: _Pending, delay: int, relay: str | None) -> None:
        key = (pending.src, pending.dst)
        deliver_time = max(self.env.now + delay, self._last_delivery.get(key, 0))
        self._last_delivery[key] = deliver_time
        self._seq += 1
        envelope = Envelope(
            pending.src,
            pending.dst,
            pending.send_time,
            deliver_time,
            self._seq,
            pending.data,
            pending.sealed_under,
            relay,
        )
        self.schedule(deliver_time - self.env.now, self._deliver, envelope)

    def _flush(self, key: tuple[str, str]) -> None:
        queued = self._pending.pop(key, [])
        if queued:
            logger.info(f"Flushing {len(queued)} held envelope(s) on {key[0]}-{key[1]}")
        for pending in queued:
            self._route(pending)

    def _deliver(self, envelope: Envelope) -> None:
        handler = self._handlers[envelope.dst]
        message = self.open(envelope)
        self.stats.delivered += 1
        if message is not None:
            self.recorder.emit(
                TraceKind.MESSAGE_DELIVERED,
                src=envelope.src,
                dst=envelope.dst,
                message=message.name,
                digest=message.digest(),
                via=envelope.relay,
            )
        handler(envelope, message)
        if message is not None:
            for subscriber in list(self._subscribers.get(type(message), ())):
                subscriber(envelope, message)

    def open(self, envelope: Envelope) -> Message | None:
        """Decode an envelope for its destination; sealed payloads need the sealing secret."""
        data = envelope.data
        if envelope.sealed_under is not None:
            try:
                data = self.crypto.unseal(envelope.dst, envelope.sealed_under, data)
            except (NotAHolder, KeyError):
                logger.warning(
                    f"{envelope.dst} cannot open envelope sealed under {envelope.sealed_under}"
                )
                return None
        return decode(data)

    def pending_count(self) -> int:
        return sum(len(queue) for queue in self._pending.values())

    # running

    def next_event_time(self) -> float:
        return self.env.peek()

    def is_quiescent(self) -> bool:
        return math.isinf(self.env.peek())

    def run_until(
        self,
        until: int | None = QUIESCENCE,
        observer: Callable[[], None] | None = None,
        idle: bool = True,
    ) -> list[TraceEvent]:
        """
        Process events in (deliver_time, sequence) order up to and including
        tick ``until``, or until the queue is empty when ``until`` is None. With
        ``idle`` the clock then advances to ``until`` even if nothing is due.
        Returns the trace events emitted meanwhile.
        """
        start = len(self.recorder.events)
        while not self.is_quiescent():
            if until is not None and self.env.peek() > until:
                break
            self.env.step()
            if observer is not None:
                observer()
        if idle and until is not None and until > self.env.now:
            # idle until the requested tick; keeps the clock integral
            self.env.timeout(until - self.env.now)
            self.env.step()
        return self.recorder.since(start)
