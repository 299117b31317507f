"""Raw-socket ICMP echo transport.

Frames are sized so the Ethernet frame is 42 or 1542 bytes: 14 (Ethernet)
+ 20 (IPv4) + 8 (ICMP) + payload of 0 or 1500 zero bytes. Needs CAP_NET_RAW.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

import numpy as np

from ..signal import ExcitationSignal
from .core import MatchTable, ProbeError, TransportError
from .types import RawProbe

HEADER_BYTES = 14 + 20 + 8
ECHO_REQUEST = 8
ECHO_REPLY = 0
SPIN_S = 50e-6


class PrivilegeError(ProbeError):
    pass


def checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    s = (s >> 16) + (s & 0xFFFF)
    s += s >> 16
    return ~s & 0xFFFF


def build_echo(ident: int, seq: int, frame_bytes: int) -> bytes:
    payload = bytes(max(frame_bytes - HEADER_BYTES, 0))
    head = struct.pack("!BBHHH", ECHO_REQUEST, 0, 0, ident & 0xFFFF, seq & 0xFFFF)
    csum = checksum(head + payload)
    return struct.pack("!BBHHH", ECHO_REQUEST, 0, csum, ident & 0xFFFF, seq & 0xFFFF) + payload


def parse_reply(packet: bytes) -> tuple[int, int, int] | None:
    """``(identifier, sequence, ttl)`` of an IPv4 echo reply, else None."""
    if len(packet) < 28:
        return None
    ihl = (packet[0] & 0x0F) * 4
    ttl = packet[8]
    kind, _, _, ident, seq = struct.unpack("!BBHHH", packet[ihl:ihl + 8])
    if kind != ECHO_REPLY:
        return None
    return ident, seq, ttl


def open_socket() -> socket.socket:
    try:
        return socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
    except PermissionError as exc:
        raise PrivilegeError("raw ICMP sockets need root or CAP_NET_RAW") from exc


def _wait_until(deadline_ns: int) -> None:
    left = (deadline_ns - time.monotonic_ns()) * 1e-9
    if left > SPIN_S:
        time.sleep(left - SPIN_S)
    while time.monotonic_ns() < deadline_ns:
        pass


class LiveTransport:
    def __init__(self, timeout_s: float = 0.05):
        self.timeout_s = timeout_s
        self.last_ttl: dict[str, int] = {}
        open_socket().close()

    def send(self, target: str, x: ExcitationSignal) -> RawProbe:
        n = len(x)
        table = MatchTable(x.signal_id & 0xFFFF, n)
        frames = [build_echo(table.signal_id, i, int(b)) for i, b in enumerate(x.sizes)]
        sock = open_socket()
        sock.settimeout(0.01)
        done = threading.Event()
        failure: list[BaseException] = []

        def receive():
            end = None
            while True:
                if end is None and done.is_set():
                    end = time.monotonic_ns() + int(self.timeout_s * 1e9)
                if end is not None and (time.monotonic_ns() > end or table.complete()):
                    return
                try:
                    pkt, (src, _) = sock.recvfrom(65535)
                except socket.timeout:
                    continue
                except OSError as exc:
                    failure.append(exc)
                    return
                t = time.monotonic_ns()
                got = parse_reply(pkt)
                if got is not None and src == target:
                    table.received(got[0], got[1], t)
                    self.last_ttl[target] = got[2]

        rx_thread = threading.Thread(target=receive, daemon=True)
        rx_thread.start()
        try:
            period = int(1e9 / x.rate_hz)
            start = time.monotonic_ns()
            for i, frame in enumerate(frames):
                _wait_until(start + i * period)
                table.sent(i, time.monotonic_ns())
                sock.sendto(frame, (target, 0))
        except OSError as exc:
            failure.append(exc)
        finally:
            done.set()
            rx_thread.join()
            sock.close()
        tx, rx = table.snapshot()
        if failure:
            sent = np.isfinite(tx)
            partial = RawProbe(x.signal_id, tx[sent], rx[sent], target, degraded=True, aborted=True)
            raise TransportError(str(failure[0]), partial)
        return RawProbe(x.signal_id, tx, rx, target)

    def ping(self, target: str, nbytes: int, count: int) -> np.ndarray:
        out = np.full(count, np.nan)
        for i in range(count):
            x = ExcitationSignal(np.array([nbytes]), signal_id=(0xFFFF - i) & 0xFFFF, rate_hz=100.0)
            p = self.send(target, x)
            out[i] = (p.rx_ns[0] - p.tx_ns[0]) * 1e-9
            time.sleep(0.01)
        return out
