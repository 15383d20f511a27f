"""Destination header sent at the head of a pooled relay-to-relay stream.

Layout: ``4F 43 44 31`` magic, one family byte (04 or 06), the address in network
order (4 or 16 bytes), then the port as big-endian u16. Everything after it is payload.
"""

from __future__ import annotations

import ipaddress
import struct

MAGIC = b"OCD1"
FAMILY_V4 = 0x04
FAMILY_V6 = 0x06
_ADDR_LEN = {FAMILY_V4: 4, FAMILY_V6: 16}
V4_LEN = len(MAGIC) + 1 + 4 + 2
V6_LEN = len(MAGIC) + 1 + 16 + 2


class ProtocolError(Exception):
    pass


def encode_preamble(host: str, port: int) -> bytes:
    if not 0 <= port <= 0xFFFF:
        raise ValueError(f"port out of range: {port}")
    ip = ipaddress.ip_address(host)
    family = FAMILY_V4 if ip.version == 4 else FAMILY_V6
    return MAGIC + bytes([family]) + ip.packed + struct.pack("!H", port)


def decode_preamble(buf: bytes) -> tuple[tuple[str, int], int] | None:
    """Parse a preamble at the start of buf.

    Returns ((host, port), consumed) or None if more bytes are needed. Raises
    ProtocolError on a bad magic or unknown family as soon as the bytes seen prove it.
    """
    head = bytes(buf[: len(MAGIC)])
    if head != MAGIC[: len(head)]:
        raise ProtocolError(f"bad magic {head.hex()}")
    if len(buf) <= len(MAGIC):
        return None
    family = buf[len(MAGIC)]
    alen = _ADDR_LEN.get(family)
    if alen is None:
        raise ProtocolError(f"unknown address family 0x{family:02x}")
    total = len(MAGIC) + 1 + alen + 2
    if len(buf) < total:
        return None
    start = len(MAGIC) + 1
    addr = str(ipaddress.ip_address(bytes(buf[start:start + alen])))
    (port,) = struct.unpack("!H", bytes(buf[start + alen:total]))
    return (addr, port), total


async def read_preamble(stream) -> tuple[tuple[str, int], bytes]:
    """Read a preamble off a stream. Returns the destination and any payload read past it."""
    buf = bytearray()
    while True:
        got = decode_preamble(buf)
        if got is not None:
            dest, used = got
            return dest, bytes(buf[used:])
        need = len(MAGIC) + 1 if len(buf) <= len(MAGIC) else len(MAGIC) + 1 + _ADDR_LEN[buf[len(MAGIC)]] + 2
        chunk = await stream.read(need - len(buf))
        if not chunk:
            raise ProtocolError(f"stream ended inside preamble after {len(buf)} bytes")
        buf += chunk
