"""Reads the server_name extension out of TLS ClientHello payloads.

Only the plaintext ClientHello is inspected; nothing else in a TLS stream is
decoded. All parsing is bounds-checked so that arbitrary TCP payloads can be
handed to extract_sni().
"""

from typing import Optional

#
# Constants
#

TLS_HANDSHAKE_RECORD = 0x16
TLS_CLIENT_HELLO = 0x01
TLS_EXT_SERVER_NAME = 0x0000
TLS_SNI_HOST_NAME = 0x00

# SSL 3.0 through TLS 1.3 record versions
TLS_MIN_VERSION = 0x0300
TLS_MAX_VERSION = 0x0304


def _u16(buf: bytes, off: int) -> int:
    return (buf[off] << 8) | buf[off + 1]


def is_client_hello(payload: bytes) -> bool:
    """Tells whether the payload starts with a TLS ClientHello record"""
    if len(payload) < 9 or payload[0] != TLS_HANDSHAKE_RECORD:
        return False
    if not TLS_MIN_VERSION <= _u16(payload, 1) <= TLS_MAX_VERSION:
        return False
    return payload[5] == TLS_CLIENT_HELLO


def extract_sni(payload: bytes) -> Optional[str]:
    """
    Returns the lower-cased host name of the server_name extension, or None if
    the payload is not a ClientHello or carries no host name.
    """
    if not is_client_hello(payload):
        return None

    # record header (5) + handshake header (4) + client version (2) + random
    off = 5 + 4 + 2 + 32
    if off >= len(payload):
        return None

    off += 1 + payload[off]  # session id
    if off + 2 > len(payload):
        return None
    off += 2 + _u16(payload, off)  # cipher suites
    if off >= len(payload):
        return None
    off += 1 + payload[off]  # compression methods
    if off + 2 > len(payload):
        return None

    exts_end = min(off + 2 + _u16(payload, off), len(payload))
    off += 2
    while off + 4 <= exts_end:
        ext_type, ext_len = _u16(payload, off), _u16(payload, off + 2)
        off += 4
        if off + ext_len > exts_end:
            return None
        if ext_type == TLS_EXT_SERVER_NAME:
            return _parse_server_name(payload[off:off + ext_len])
        off += ext_len

    return None


def _parse_server_name(ext: bytes) -> Optional[str]:
    """Walks the server_name list and returns the first host_name entry"""
    if len(ext) < 2:
        return None
    end = min(2 + _u16(ext, 0), len(ext))
    off = 2
    while off + 3 <= end:
        name_type, name_len = ext[off], _u16(ext, off + 1)
        off += 3
        if off + name_len > end:
            return None
        if name_type == TLS_SNI_HOST_NAME:
            name = ext[off:off + name_len].decode("ascii", errors="ignore")
            return name.lower() or None
        off += name_len
    return None
