"""Provides packet records, flows, and the readers that produce them.

Packets come either from capture files (pcap, read with dpkt) or from the
line-oriented text trace format used for fixtures:

    timestamp,src_addr,src_port,dst_addr,dst_port,proto,payload_len,header_len,tcp_window,tcp_flags,sni

where tcp_flags is a string over {F,S,P,A,R,U,E,C} and empty fields denote
absence. Lines starting with '#' are comments.

Flows are bidirectional: the two directions of a 5-tuple share one canonical
FiveTuple key, and each packet is tagged upstream or downstream relative to the
flow's client (the SYN sender for TCP, the first sender otherwise).
"""

import dataclasses
import fnmatch
import glob
import logging
import os
import socket
import struct
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import dpkt

from vtid import vtidrunbase
from vtid import vtidsni

#
# Constants
#

TCP = "TCP"
UDP = "UDP"
TRANSPORTS = (TCP, UDP)

# Canonical flag names in the order they are reported
TCP_FLAGS = ("FIN", "SYN", "PSH", "ACK", "RST", "URG", "ECE", "CWR")

# Single-letter flag codes of the text trace format
FLAG_LETTERS = {
    "F": "FIN",
    "S": "SYN",
    "P": "PSH",
    "A": "ACK",
    "R": "RST",
    "U": "URG",
    "E": "ECE",
    "C": "CWR",
}
FLAG_CODES = {name: letter for letter, name in FLAG_LETTERS.items()}

DPKT_FLAGS = (
    (dpkt.tcp.TH_FIN, "FIN"),
    (dpkt.tcp.TH_SYN, "SYN"),
    (dpkt.tcp.TH_PUSH, "PSH"),
    (dpkt.tcp.TH_ACK, "ACK"),
    (dpkt.tcp.TH_RST, "RST"),
    (dpkt.tcp.TH_URG, "URG"),
    (getattr(dpkt.tcp, "TH_ECE", 0x40), "ECE"),
    (getattr(dpkt.tcp, "TH_CWR", 0x80), "CWR"),
)

# libpcap link types
LINKTYPE_NULL = (0, 108)
LINKTYPE_ETHERNET = (1,)
LINKTYPE_RAW = (12, 14, 101)
LINKTYPE_LINUX_SLL = (113,)

# pcap file magics (microsecond and nanosecond variants)
PCAP_MAGIC_LE = (b"\xd4\xc3\xb2\xa1", b"\x4d\x3c\xb2\xa1")
PCAP_MAGIC_BE = (b"\xa1\xb2\xc3\xd4", b"\xa1\xb2\x3c\x4d")
PCAP_RECORD_HEADER_LEN = 16

TEXT_TRACE_FIELDS = 11
CAPTURE_EXTENSIONS = (".pcap", ".cap", ".pcapng", ".dmp")
TEXT_TRACE_EXTENSIONS = (".trace", ".txt")

DEFAULT_ELEPHANT_THRESHOLD = 500

#
# Classes
#


class Endpoint(NamedTuple):
    """An address and port; tuples order lexicographically (address, port)"""
    addr: str
    port: int

    def __str__(self):
        return f"{self.addr}:{self.port}"


@dataclasses.dataclass(frozen=True)
class PacketRecord:
    """
    One observed TCP or UDP packet.

    Attributes:
        timestamp: seconds since the start of the trace (float >= 0)
        src: source Endpoint
        dst: destination Endpoint
        transport: TCP or UDP
        payload_len: transport payload bytes
        header_len: IP + transport header bytes
        tcp_window: advertised TCP window (0 for UDP)
        tcp_flags: frozenset of names from TCP_FLAGS (empty for UDP)
        sni: host name if the packet carries a TLS ClientHello, else None
    """
    timestamp: float
    src: Endpoint
    dst: Endpoint
    transport: str
    payload_len: int
    header_len: int
    tcp_window: int = 0
    tcp_flags: frozenset = frozenset()
    sni: Optional[str] = None

    @property
    def size(self) -> int:
        """On-wire packet length (headers + payload)"""
        return self.payload_len + self.header_len


class FiveTuple(NamedTuple):
    """
    Canonical bidirectional flow key: endpoint_a <= endpoint_b, so both
    directions of a conversation map to the same key.
    """
    endpoint_a: Endpoint
    endpoint_b: Endpoint
    transport: str

    @staticmethod
    def of(packet: PacketRecord) -> "FiveTuple":
        a, b = sorted((packet.src, packet.dst))
        return FiveTuple(a, b, packet.transport)

    def __str__(self):
        return f"{self.endpoint_a}-{self.endpoint_b}-{self.transport}"


@dataclasses.dataclass(frozen=True)
class Flow:
    """
    The packets of one canonical 5-tuple, in stream order.

    Attributes:
        key: the FiveTuple of every packet in the flow
        client: the endpoint that initiated the flow; packets sent by it are
                upstream, all others downstream
        packets: tuple of PacketRecord
        label: class string, or None while unlabeled
        sni: first SNI seen in the flow, if any
        source: name of the trace the flow came from
        nonzero_payload_count: number of packets with payload_len > 0
    """
    key: FiveTuple
    client: Endpoint
    packets: Tuple[PacketRecord, ...]
    label: Optional[str] = None
    sni: Optional[str] = None
    source: str = ""
    nonzero_payload_count: int = 0

    @staticmethod
    def from_packets(key: FiveTuple,
                     packets: Sequence[PacketRecord],
                     source: str = "") -> "Flow":
        """Builds a flow, working out its client and SNI from the packets"""
        sni = next((p.sni for p in packets if p.sni is not None), None)
        return Flow(key=key,
                    client=_find_client(key, packets),
                    packets=tuple(packets),
                    sni=sni,
                    source=source,
                    nonzero_payload_count=sum(
                        1 for p in packets if p.payload_len > 0))

    @property
    def flow_id(self) -> str:
        return f"{self.source}|{self.key}" if self.source else str(self.key)

    @property
    def server(self) -> Endpoint:
        a, b = self.key.endpoint_a, self.key.endpoint_b
        return b if self.client == a else a

    def is_upstream(self, packet: PacketRecord) -> bool:
        return packet.src == self.client

    def upstream(self) -> List[PacketRecord]:
        return [p for p in self.packets if p.src == self.client]

    def downstream(self) -> List[PacketRecord]:
        return [p for p in self.packets if p.src != self.client]

    def with_label(self, label: Optional[str]) -> "Flow":
        return dataclasses.replace(self, label=label)

    def with_client(self, client: Endpoint) -> "Flow":
        """Returns the same flow with the direction roles reassigned"""
        if client not in (self.key.endpoint_a, self.key.endpoint_b):
            raise ValueError(f"{client} is not an endpoint of {self.key}")
        return dataclasses.replace(self, client=client)


#
# Functions (capture files)
#


def read_capture(path: str) -> Iterator[PacketRecord]:
    """
    Yields one PacketRecord per IP packet carrying TCP or UDP in a pcap (or
    pcapng) file. Timestamps are rebased to the first such packet; other
    frames are skipped. A truncated final record, whether cut inside its
    header or inside its body, ends the stream with a warning; an unreadable
    file raises RuntimeError.
    """
    try:
        handle = open(path, "rb")
    except OSError as e:
        raise RuntimeError(f"Could not open capture {path}: {e}") from e

    with handle:
        reader = _open_capture_reader(handle, path)
        datalink = reader.datalink()
        byteorder = _pcap_byteorder(handle, reader)
        frames = iter(reader)
        t0 = None
        last = None
        frame_no = 0
        while True:
            caplen = _peek_caplen(handle, byteorder)
            try:
                ts, buf = next(frames)
            except StopIteration:
                break
            except (dpkt.NeedData, dpkt.UnpackError, ValueError) as e:
                logging.warning(f"{path}: truncated record after frame "
                                f"{frame_no}, stopping ({e})")
                break
            if caplen is not None and len(buf) < caplen:
                logging.warning(f"{path}: truncated record after frame "
                                f"{frame_no}, stopping ({len(buf)} of "
                                f"{caplen} bytes)")
                break
            frame_no += 1
            ts = float(ts)
            if last is not None and ts < last:
                raise ValueError(f"{path}: frame {frame_no} goes back in time "
                                 f"({ts} < {last})")
            last = ts

            try:
                record = _decode_frame(datalink, buf, 0.0)
            except (dpkt.UnpackError, IndexError, ValueError) as e:
                logging.debug(f"{path}: undecodable frame {frame_no}: {e}")
                continue
            if record is None:
                continue
            if t0 is None:
                t0 = ts
            yield dataclasses.replace(record, timestamp=ts - t0)


def _pcap_byteorder(handle, reader) -> Optional[str]:
    """struct byte order of a pcap file's record headers; None for pcapng"""
    if not isinstance(reader, dpkt.pcap.Reader):
        return None
    position = handle.tell()
    handle.seek(0)
    magic = handle.read(4)
    handle.seek(position)
    if magic in PCAP_MAGIC_LE:
        return "<"
    if magic in PCAP_MAGIC_BE:
        return ">"
    return None


def _peek_caplen(handle, byteorder: Optional[str]) -> Optional[int]:
    """Captured length announced by the next pcap record header, if complete"""
    if byteorder is None:
        return None
    position = handle.tell()
    header = handle.read(PCAP_RECORD_HEADER_LEN)
    handle.seek(position)
    if len(header) < PCAP_RECORD_HEADER_LEN:
        return None
    # ts_sec, ts_usec, caplen, len
    return struct.unpack(f"{byteorder}IIII", header)[2]


def _open_capture_reader(handle, path: str):
    """Opens a pcap reader, falling back to pcapng"""
    try:
        return dpkt.pcap.Reader(handle)
    except (dpkt.NeedData, ValueError):
        handle.seek(0)
    try:
        return dpkt.pcapng.Reader(handle)
    except (dpkt.NeedData, dpkt.UnpackError, ValueError) as e:
        raise RuntimeError(f"Could not read capture {path}: not a pcap or "
                           f"pcapng file ({e})") from e


def _decode_frame(datalink: int, buf: bytes,
                  timestamp: float) -> Optional[PacketRecord]:
    """Decodes one link-layer frame; returns None for non TCP/UDP frames"""
    if datalink in LINKTYPE_ETHERNET:
        ip = dpkt.ethernet.Ethernet(buf).data
    elif datalink in LINKTYPE_RAW:
        ip = dpkt.ip6.IP6(buf) if buf[0] >> 4 == 6 else dpkt.ip.IP(buf)
    elif datalink in LINKTYPE_NULL:
        ip = dpkt.loopback.Loopback(buf).data
    elif datalink in LINKTYPE_LINUX_SLL:
        ip = dpkt.sll.SLL(buf).data
    else:
        ip = dpkt.ethernet.Ethernet(buf).data

    if isinstance(ip, dpkt.ip.IP):
        family, ip_header_len = socket.AF_INET, ip.hl * 4
    elif isinstance(ip, dpkt.ip6.IP6):
        # extension headers are not counted
        family, ip_header_len = socket.AF_INET6, 40
    else:
        return None

    segment = ip.data
    src_addr = socket.inet_ntop(family, ip.src)
    dst_addr = socket.inet_ntop(family, ip.dst)

    if isinstance(segment, dpkt.tcp.TCP):
        payload = bytes(segment.data)
        return PacketRecord(
            timestamp=timestamp,
            src=Endpoint(src_addr, segment.sport),
            dst=Endpoint(dst_addr, segment.dport),
            transport=TCP,
            payload_len=len(payload),
            header_len=ip_header_len + segment.off * 4,
            tcp_window=segment.win,
            tcp_flags=frozenset(
                name for mask, name in DPKT_FLAGS if segment.flags & mask),
            sni=vtidsni.extract_sni(payload) if payload else None)
    if isinstance(segment, dpkt.udp.UDP):
        return PacketRecord(timestamp=timestamp,
                            src=Endpoint(src_addr, segment.sport),
                            dst=Endpoint(dst_addr, segment.dport),
                            transport=UDP,
                            payload_len=len(segment.data),
                            header_len=ip_header_len + 8)
    return None


#
# Functions (text traces)
#


def read_text_trace(path: str) -> Iterator[PacketRecord]:
    """
    Yields the records of a text trace exactly as written. Raises ValueError
    naming the line for malformed lines and for timestamps that go backwards.
    """
    last = None
    with open(path) as trace:
        for lineno, line in enumerate(trace, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = parse_trace_line(line)
            except ValueError as e:
                raise ValueError(f"{path}: line {lineno}: {e}") from e
            if last is not None and record.timestamp < last:
                raise ValueError(f"{path}: line {lineno}: timestamp "
                                 f"{record.timestamp} is before {last}")
            last = record.timestamp
            yield record


def parse_trace_line(line: str) -> PacketRecord:
    """Parses and validates one text trace line"""
    fields = line.split(",")
    if len(fields) != TEXT_TRACE_FIELDS:
        raise ValueError(f"expected {TEXT_TRACE_FIELDS} fields, "
                         f"got {len(fields)}")
    (timestamp, src_addr, src_port, dst_addr, dst_port, proto, payload_len,
     header_len, tcp_window, tcp_flags, sni) = (f.strip() for f in fields)

    timestamp = float(timestamp)
    if not timestamp >= 0.0:
        raise ValueError(f"timestamp must be >= 0, got {timestamp}")
    proto = proto.upper()
    if proto not in TRANSPORTS:
        raise ValueError(f"transport must be TCP or UDP, got {proto}")
    payload_len = _parse_count("payload_len", payload_len)
    header_len = _parse_count("header_len", header_len)
    tcp_window = _parse_count("tcp_window", tcp_window or "0")

    unknown = set(tcp_flags) - set(FLAG_LETTERS)
    if unknown:
        raise ValueError(f"unknown TCP flag letters {sorted(unknown)}")
    flags = frozenset(FLAG_LETTERS[letter] for letter in tcp_flags)
    if proto == UDP and (flags or tcp_window):
        raise ValueError("UDP packets carry no TCP window or flags")

    return PacketRecord(timestamp=timestamp,
                        src=Endpoint(_parse_addr(src_addr),
                                     _parse_port(src_port)),
                        dst=Endpoint(_parse_addr(dst_addr),
                                     _parse_port(dst_port)),
                        transport=proto,
                        payload_len=payload_len,
                        header_len=header_len,
                        tcp_window=tcp_window,
                        tcp_flags=flags,
                        sni=sni or None)


def format_trace_line(record: PacketRecord) -> str:
    """Inverse of parse_trace_line"""
    flags = "".join(FLAG_CODES[name]
                    for name in TCP_FLAGS
                    if name in record.tcp_flags)
    return (f"{record.timestamp!r},{record.src.addr},{record.src.port},"
            f"{record.dst.addr},{record.dst.port},{record.transport},"
            f"{record.payload_len},{record.header_len},{record.tcp_window},"
            f"{flags},{record.sni or ''}")


def write_text_trace(records: Iterable[PacketRecord], path: str):
    """Writes records in the text trace format"""
    with open(path, "w") as trace:
        trace.write("# timestamp,src_addr,src_port,dst_addr,dst_port,proto,"
                    "payload_len,header_len,tcp_window,tcp_flags,sni\n")
        for record in records:
            trace.write(format_trace_line(record) + "\n")


def _parse_count(name: str, value: str) -> int:
    count = int(value)
    if count < 0:
        raise ValueError(f"{name} must be >= 0, got {count}")
    return count


def _parse_port(value: str) -> int:
    port = int(value)
    if not 0 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    return port


def _parse_addr(value: str) -> str:
    if not value or " " in value:
        raise ValueError(f"bad address {value!r}")
    return value


def read_trace(path: str) -> Iterator[PacketRecord]:
    """Dispatches on the file extension: text traces vs. capture files"""
    if path.lower().endswith(TEXT_TRACE_EXTENSIONS):
        return read_text_trace(path)
    return read_capture(path)


#
# Functions (flows)
#


def assemble_flows(packets: Iterable[PacketRecord],
                   source: str = "") -> List[Flow]:
    """
    Groups a packet stream into one bidirectional Flow per canonical
    FiveTuple. Flows are returned in order of first appearance and keep the
    stream order of their packets.
    """
    grouped: Dict[FiveTuple, List[PacketRecord]] = {}
    for packet in packets:
        grouped.setdefault(FiveTuple.of(packet), []).append(packet)
    return [
        Flow.from_packets(key, flow_packets, source)
        for key, flow_packets in grouped.items()
    ]


def _find_client(key: FiveTuple, packets: Sequence[PacketRecord]) -> Endpoint:
    """
    The client of a TCP flow sent its first SYN; a SYN+ACK seen before any
    plain SYN names its destination as the client. UDP flows, and TCP flows
    without a SYN, belong to the sender of the first packet.
    """
    if key.transport == TCP:
        for packet in packets:
            if "SYN" in packet.tcp_flags:
                if "ACK" in packet.tcp_flags:
                    return packet.dst
                return packet.src
    return packets[0].src


def filter_elephant(flows: Sequence[Flow],
                    threshold: int = DEFAULT_ELEPHANT_THRESHOLD) -> List[Flow]:
    """Keeps the flows with at least threshold non-zero-payload packets"""
    if threshold < 1:
        raise ValueError(f"elephant threshold must be >= 1, got {threshold}")
    return [f for f in flows if f.nonzero_payload_count >= threshold]


def load_label_rules(path: str) -> List[Tuple[str, str]]:
    """Reads `pattern<TAB>class` lines; '#' starts a comment line"""
    rules = []
    with open(path) as rules_file:
        for lineno, line in enumerate(rules_file, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}: line {lineno}: expected "
                                 f"'pattern<TAB>class', got {line!r}")
            rules.append((parts[0].strip(), parts[1].strip()))
    return rules


def check_pattern(pattern: str):
    """Raises ValueError for an empty or malformed SNI glob pattern"""
    if not pattern or any(c.isspace() for c in pattern):
        raise ValueError(f"malformed SNI pattern {pattern!r}")
    depth = 0
    for c in pattern:
        if c == "[":
            depth += 1
        elif c == "]":
            depth -= 1
        if depth not in (0, 1):
            raise ValueError(f"malformed SNI pattern {pattern!r}: "
                             f"unbalanced brackets")
    if depth != 0:
        raise ValueError(f"malformed SNI pattern {pattern!r}: "
                         f"unbalanced brackets")


def label_flows(flows: Sequence[Flow],
                rules: Sequence[Tuple[str, str]],
                default_label: Optional[str] = None) -> List[Flow]:
    """
    Labels each flow with the class of the first rule whose glob pattern
    matches its SNI (case-insensitive). Unmatched flows get default_label; if
    there is none they stay unlabeled and are reported.
    """
    for pattern, _ in rules:
        check_pattern(pattern)
    rules = [(pattern.lower(), label) for pattern, label in rules]

    labeled = []
    for flow in flows:
        label = default_label
        if flow.sni is not None:
            sni = flow.sni.lower()
            label = next((cls for pattern, cls in rules
                          if fnmatch.fnmatchcase(sni, pattern)), default_label)
        labeled.append(flow.with_label(label))

    unlabeled = [f.flow_id for f in labeled if f.label is None]
    if unlabeled:
        logging.warning(f"{len(unlabeled)} of {len(labeled)} flows matched no "
                        f"label rule and have no default label")
        for flow_id in unlabeled:
            logging.debug(f"unlabeled flow: {flow_id}")
    return labeled


def find_traces(inputs: Sequence[str]) -> List[Tuple[str, Optional[str]]]:
    """
    Expands trace files and directories into (path, directory label) pairs.
    A trace inside a subdirectory of an input directory is labeled with the
    name of its parent directory; traces given directly, or sitting at the top
    of an input directory, get no directory label.
    """
    extensions = CAPTURE_EXTENSIONS + TEXT_TRACE_EXTENSIONS
    traces = []
    for item in inputs:
        if not os.path.isdir(item):
            traces.append((item, None))
            continue
        root = os.path.normpath(item)
        for path in sorted(glob.iglob(f"{root}/**/*", recursive=True)):
            if not path.lower().endswith(extensions):
                continue
            parent = os.path.dirname(path)
            label = None if parent == root else os.path.basename(parent)
            traces.append((path, label))
    return traces


class FlowGenerator(vtidrunbase.VtidRunBase):
    """
    Reads a corpus of traces and produces labeled flows: every trace is read,
    its packets assembled into flows, mice flows are dropped, and labels are
    attached from SNI rules with the directory label as fallback.

    After run(), get_data() returns the flows and the counts attributes tell
    how many flows existed before and after elephant filtering.

    Attributes:
        _traces: list of (path, directory label or None)
        _rules: ordered (pattern, class) SNI rules
        _default_label: label for flows that match no rule and have no
                        directory label
        _threshold: elephant threshold, or None to keep all flows
        _flows: the resulting flows
        count_before: number of assembled flows before filtering
        count_after: number of flows after filtering
    """

    #
    # Public
    #

    def __init__(self,
                 traces: Sequence[Tuple[str, Optional[str]]],
                 rules: Sequence[Tuple[str, str]] = (),
                 default_label: Optional[str] = None,
                 threshold: Optional[int] = DEFAULT_ELEPHANT_THRESHOLD):
        super().__init__()
        self._traces = list(traces)
        self._rules = list(rules)
        self._default_label = default_label
        self._threshold = threshold
        self._flows = []
        self.count_before = 0
        self.count_after = 0

    def run(self):
        """Reads, filters and labels every trace"""
        super().check_run_fatal()
        logging.info("STARTING FLOW GENERATION")
        for path, dir_label in self._traces:
            self._flows.extend(self._flows_of_trace(path, dir_label))
        self.count_after = len(self._flows)
        logging.info(f"Flows before elephant filtering: {self.count_before}")
        logging.info(f"Flows after elephant filtering: {self.count_after}")
        logging.info("FINISHED FLOW GENERATION")

    def get_data(self) -> List[Flow]:
        super().check_ran_fatal()
        return self._flows

    #
    # Private
    #

    def _flows_of_trace(self, path: str,
                        dir_label: Optional[str]) -> List[Flow]:
        logging.info(f"Reading trace {path}")
        source = os.path.basename(path)
        if dir_label is not None:
            source = f"{dir_label}/{source}"
        flows = assemble_flows(read_trace(path), source)
        self.count_before += len(flows)
        if self._threshold is not None:
            flows = filter_elephant(flows, self._threshold)
        logging.debug(f"{path}: {len(flows)} flows kept")
        default = dir_label if dir_label is not None else self._default_label
        return label_flows(flows, self._rules, default)
