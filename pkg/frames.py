"""
Ethernet frames, interfaces, trace events and the MAC learning table.

These are the values a trace is made of. Everything here is immutable so a
simulation can hand the same table to many recognizer instances.
"""

import logging
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import config

logger = logging.getLogger(__name__)

BROADCAST = 'ff:ff:ff:ff:ff:ff'
NULL_MAC = '00:00:00:00:00:00'
INGRESS = 'i'
EGRESS = 'e'

_MAC_RE = re.compile(r'^[0-9a-fA-F]{2}(:[0-9a-fA-F]{2}){5}$')
_IFACE_RE = re.compile(r'^(\d+)([ie])$')


class FrameError(ValueError):
    """Malformed MAC address, interface or location text"""
    pass


def is_mac(text) -> bool:
    return isinstance(text, str) and bool(_MAC_RE.match(text))


def normalize_mac(text: str) -> str:
    if not is_mac(text):
        raise FrameError(f"not a MAC address: {text!r}")
    return text.lower()


def is_broadcast(mac: str) -> bool:
    return mac == BROADCAST


def is_unicast(mac: str) -> bool:
    """Group bit of the first octet clear"""
    return not is_broadcast(mac) and int(mac[:2], 16) & 1 == 0


def haddr(port: int, prefix: Optional[str] = None) -> str:
    """Locally administered hardware address of a switch port"""
    return f"{prefix or config.haddr_prefix}:{port:02x}"


@dataclass(frozen=True)
class Frame:
    da: str
    sa: str
    proto: str
    arp: Optional[int] = None  # port whose hardware address an ARP request asks for

    def probe(self) -> 'Frame':
        """Same addresses, different payload; used to tell pinned egress from vacuous acceptance"""
        return replace(self, proto=f"probe-{self.proto}")


def ingress(port: int):
    return (port, INGRESS)


def egress(port: int):
    return (port, EGRESS)


def ingress_port(loc) -> Optional[int]:
    """The ingress port when loc is {port i}, else None"""
    if len(loc) != 1:
        return None
    (port, direction), = loc
    return port if direction == INGRESS else None


def is_egress_set(loc) -> bool:
    return all(direction == EGRESS for _, direction in loc)


def egress_ports(loc) -> list[int]:
    return sorted(port for port, direction in loc if direction == EGRESS)


def format_loc(loc) -> str:
    items = sorted(loc, key=lambda iface: (iface[0], iface[1]))
    return '{' + ','.join(f"{port}{direction}" for port, direction in items) + '}'


def parse_loc(text: str) -> frozenset:
    body = text.strip()
    if not (body.startswith('{') and body.endswith('}')):
        raise FrameError(f"location must be written as {{...}}: {text!r}")
    items = [item.strip() for item in body[1:-1].split(',') if item.strip()]
    loc = []
    for item in items:
        match = _IFACE_RE.match(item)
        if not match:
            raise FrameError(f"bad interface {item!r} in {text!r}")
        loc.append((int(match.group(1)), match.group(2)))
    return frozenset(loc)


def format_proto(frame: Frame) -> str:
    return frame.proto if frame.arp is None else f"{frame.proto}@{frame.arp}"


def parse_proto(text: str):
    proto, _, target = text.partition('@')
    return proto, (int(target) if target else None)


@dataclass(frozen=True)
class MacEntry:
    mac: str
    t: int
    port: int


@dataclass(frozen=True)
class MacTable:
    """Fixed-size learning table; an entry is expired when now - t > mto"""
    entries: tuple
    mto: int

    @classmethod
    def empty(cls, size: int, mto: int) -> 'MacTable':
        """All entries expired at time 0 and holding no real address"""
        return cls(tuple(MacEntry(NULL_MAC, -(mto + 1), 0) for _ in range(size)), mto)

    def expired(self, index: int, now: int) -> bool:
        return now - self.entries[index].t > self.mto

    def lookup(self, mac: str, now: int) -> Optional[int]:
        for entry in self.entries:
            if entry.mac == mac and now - entry.t <= self.mto:
                return entry.port
        return None

    def learn(self, frame: Frame, port: Optional[int], now: int, uplink: int) -> 'MacTable':
        return replace(self, entries=learn(self.entries, frame, port, now, self.mto, uplink))


def learn(entries: tuple, frame: Frame, port: Optional[int], now: int, mto: int, uplink: int) -> tuple:
    """Table after one event.

    Only unicast sources arriving at a non-uplink ingress port are learned.
    The slot already holding the address wins, else the lowest expired slot;
    a full table of live entries is left unchanged.
    """
    if port is None or port == uplink or not is_unicast(frame.sa):
        return entries
    slot = next((k for k, entry in enumerate(entries) if entry.mac == frame.sa), None)
    if slot is None:
        slot = next((k for k, entry in enumerate(entries) if now - entry.t > mto), None)
    if slot is None:
        logger.debug("table full, %s not learned at port %s", frame.sa, port)
        return entries
    updated = list(entries)
    updated[slot] = MacEntry(frame.sa, now, port)
    return tuple(updated)


@dataclass(frozen=True)
class TraceEvent:
    """One timed row of a trace; mlt, when given, is the table after the event"""
    time: int
    frame: Frame
    loc: frozenset
    mlt: Optional[tuple] = None

    @property
    def port(self) -> Optional[int]:
        return ingress_port(self.loc)

    def is_ingress(self) -> bool:
        return self.port is not None


def format_event(event: TraceEvent) -> str:
    frame = event.frame
    return f"{event.time} | {frame.da} | {frame.sa} | {format_proto(frame)} | {format_loc(event.loc)}"


def parse_event(line: str) -> TraceEvent:
    parts = [part.strip() for part in line.split('|')]
    if len(parts) != 5:
        raise FrameError(f"expected 5 '|' separated fields, got {len(parts)}")
    time_text, da, sa, proto_text, loc_text = parts
    try:
        time = int(time_text)
    except ValueError:
        raise FrameError(f"bad time {time_text!r}")
    proto, target = parse_proto(proto_text)
    return TraceEvent(time, Frame(normalize_mac(da), normalize_mac(sa), proto, target), parse_loc(loc_text))


def format_trace(events: Iterable[TraceEvent]) -> str:
    return ''.join(format_event(event) + '\n' for event in events)
