"""Tests for packet readers, flow assembly, filtering and labeling"""

import os
import socket

import dpkt
import numpy as np
import pytest
from vtid import vtidingest
from vtid.tests.test_vtidsni import client_hello

A = vtidingest.Endpoint("10.0.0.2", 50000)
B = vtidingest.Endpoint("10.0.0.1", 443)
C = vtidingest.Endpoint("10.0.0.3", 50001)


def pkt(t, src, dst, payload=100, flags=(), proto=vtidingest.TCP, window=None,
        sni=None):
    """Shorthand for a PacketRecord with a 40-byte header"""
    if window is None:
        window = 1000 if proto == vtidingest.TCP else 0
    return vtidingest.PacketRecord(t, src, dst, proto, payload, 40, window,
                                   frozenset(flags), sni)


def tcp_frame(src, dst, payload=b"", flags=dpkt.tcp.TH_ACK, win=1000) -> bytes:
    """An Ethernet/IPv4/TCP frame"""
    tcp = dpkt.tcp.TCP(sport=src.port, dport=dst.port, flags=flags, win=win,
                       data=payload)
    ip = dpkt.ip.IP(src=socket.inet_aton(src.addr),
                    dst=socket.inet_aton(dst.addr),
                    p=dpkt.ip.IP_PROTO_TCP,
                    data=tcp)
    ip.len = len(ip)
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6,
                                        type=dpkt.ethernet.ETH_TYPE_IP,
                                        data=ip))


def arp_frame() -> bytes:
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\xff" * 6,
                                        type=dpkt.ethernet.ETH_TYPE_ARP,
                                        data=dpkt.arp.ARP()))


def write_pcap(path, frames):
    """frames: (timestamp, bytes) pairs"""
    with open(path, "wb") as f:
        writer = dpkt.pcap.Writer(f)
        for ts, buf in frames:
            writer.writepkt(buf, ts=ts)


class TestReadCapture:
    """Tests for reading pcap files"""

    def test_empty_capture(self, tmpdir):
        path = str(tmpdir / "empty.pcap")
        write_pcap(path, [])
        assert list(vtidingest.read_capture(path)) == []

    def test_skips_non_ip_frames(self, tmpdir):
        path = str(tmpdir / "mixed.pcap")
        write_pcap(path, [(1.0, tcp_frame(A, B, b"x" * 10)),
                          (1.1, arp_frame())])
        records = list(vtidingest.read_capture(path))
        assert len(records) == 1
        assert records[0].src == A and records[0].dst == B
        assert records[0].payload_len == 10
        assert records[0].header_len == 40
        assert records[0].tcp_window == 1000
        assert records[0].tcp_flags == frozenset({"ACK"})

    def test_rebases_timestamps(self, tmpdir):
        path = str(tmpdir / "t.pcap")
        write_pcap(path, [(1000.5, tcp_frame(A, B)),
                          (1001.0, tcp_frame(B, A))])
        times = [r.timestamp for r in vtidingest.read_capture(path)]
        assert times == pytest.approx([0.0, 0.5])

    def test_reads_sni_from_client_hello(self, tmpdir):
        path = str(tmpdir / "tls.pcap")
        write_pcap(path, [
            (0.0, tcp_frame(A, B, flags=dpkt.tcp.TH_SYN)),
            (0.1, tcp_frame(A, B, client_hello("r3.googlevideos.com"),
                            flags=dpkt.tcp.TH_ACK | dpkt.tcp.TH_PUSH)),
        ])
        records = list(vtidingest.read_capture(path))
        assert records[0].sni is None
        assert records[0].tcp_flags == frozenset({"SYN"})
        assert records[1].sni == "r3.googlevideos.com"
        assert records[1].tcp_flags == frozenset({"ACK", "PSH"})

    def test_truncated_final_record_warns_and_stops(self, tmpdir, caplog):
        path = str(tmpdir / "cut.pcap")
        write_pcap(path, [(0.0, tcp_frame(A, B)), (0.1, tcp_frame(B, A))])
        with open(path, "ab") as f:
            f.write(b"\x00" * 8)
        records = list(vtidingest.read_capture(path))
        assert len(records) == 2
        assert "truncated" in caplog.text

    def test_record_cut_inside_its_body_warns_and_stops(self, tmpdir, caplog):
        path = str(tmpdir / "cut-body.pcap")
        write_pcap(path, [(0.0, tcp_frame(A, B)), (0.1, tcp_frame(B, A)),
                          (0.2, tcp_frame(A, B, b"y" * 200))])
        # keeps the last record header and part of its frame
        os.truncate(path, os.path.getsize(path) - 100)
        records = list(vtidingest.read_capture(path))
        assert len(records) == 2
        assert [r.payload_len for r in records] == [0, 0]
        assert "truncated record after frame 2" in caplog.text

    def test_rebases_on_first_tcp_or_udp_packet(self, tmpdir):
        path = str(tmpdir / "arp-first.pcap")
        write_pcap(path, [(5.0, arp_frame()), (6.0, tcp_frame(A, B)),
                          (6.5, tcp_frame(B, A))])
        times = [r.timestamp for r in vtidingest.read_capture(path)]
        assert times == pytest.approx([0.0, 0.5])

    def test_unreadable_file_is_fatal(self, tmpdir):
        path = str(tmpdir / "junk.pcap")
        with open(path, "wb") as f:
            f.write(b"this is not a capture file at all")
        with pytest.raises(RuntimeError):
            list(vtidingest.read_capture(path))

    def test_missing_file_is_fatal(self, tmpdir):
        with pytest.raises(RuntimeError):
            list(vtidingest.read_capture(str(tmpdir / "missing.pcap")))


class TestTextTrace:
    """Tests for the text trace format"""

    LINES = [
        "0.0,10.0.0.2,50000,10.0.0.1,443,TCP,0,40,64240,S,",
        "0.5,10.0.0.1,443,10.0.0.2,50000,TCP,1200,40,1000,AP,",
        "1.25,10.0.0.2,50000,10.0.0.1,443,UDP,30,28,,,",
    ]

    def write(self, tmpdir, lines, name="t.trace"):
        path = str(tmpdir / name)
        with open(path, "w") as f:
            f.write("# a comment\n")
            f.write("\n".join(lines) + "\n")
        return path

    def test_reads_records_in_order(self, tmpdir):
        records = list(
            vtidingest.read_text_trace(self.write(tmpdir, self.LINES)))
        assert [r.timestamp for r in records] == [0.0, 0.5, 1.25]
        assert records[0].tcp_flags == frozenset({"SYN"})
        assert records[1].tcp_flags == frozenset({"ACK", "PSH"})
        assert records[2].transport == vtidingest.UDP
        assert records[2].tcp_window == 0
        assert records[2].tcp_flags == frozenset()

    def test_negative_payload_names_the_line(self, tmpdir):
        lines = list(self.LINES)
        lines[1] = lines[1].replace(",1200,", ",-5,")
        with pytest.raises(ValueError, match="line 3"):
            list(vtidingest.read_text_trace(self.write(tmpdir, lines)))

    def test_backwards_timestamp_rejected(self, tmpdir):
        lines = [self.LINES[1], self.LINES[0]]
        with pytest.raises(ValueError, match="line 3"):
            list(vtidingest.read_text_trace(self.write(tmpdir, lines)))

    @pytest.mark.parametrize("line", [
        "0.0,10.0.0.2,50000,10.0.0.1,443,TCP,0,40,64240,S",
        "0.0,10.0.0.2,50000,10.0.0.1,443,ICMP,0,40,0,,",
        "0.0,10.0.0.2,70000,10.0.0.1,443,TCP,0,40,0,,",
        "0.0,10.0.0.2,50000,10.0.0.1,443,TCP,0,40,0,SX,",
        "0.0,10.0.0.2,50000,10.0.0.1,443,UDP,0,28,0,S,",
        "-1.0,10.0.0.2,50000,10.0.0.1,443,TCP,0,40,0,,",
        "abc,10.0.0.2,50000,10.0.0.1,443,TCP,0,40,0,,",
    ])
    def test_malformed_lines(self, line):
        with pytest.raises(ValueError):
            vtidingest.parse_trace_line(line)

    def test_round_trip(self, tmpdir):
        rng = np.random.default_rng(3)
        records = []
        t = 0.0
        for _ in range(200):
            t += float(rng.exponential(0.05))
            proto = vtidingest.TRANSPORTS[rng.integers(2)]
            src, dst = (A, B) if rng.random() < 0.5 else (B, A)
            if proto == vtidingest.TCP:
                flags = frozenset(name for name in vtidingest.TCP_FLAGS
                                  if rng.random() < 0.3)
                window = int(rng.integers(0, 65536))
            else:
                flags, window = frozenset(), 0
            sni = "x.example.com" if rng.random() < 0.1 else None
            records.append(
                vtidingest.PacketRecord(t, src, dst, proto,
                                        int(rng.integers(0, 1500)),
                                        int(rng.integers(20, 60)), window,
                                        flags, sni))
        path = str(tmpdir / "rt.trace")
        vtidingest.write_text_trace(records, path)
        assert list(vtidingest.read_text_trace(path)) == records

    def test_read_trace_dispatches_on_extension(self, tmpdir):
        path = self.write(tmpdir, self.LINES, name="t.txt")
        assert len(list(vtidingest.read_trace(path))) == 3


class TestAssembleFlows:
    """Tests for grouping packets into bidirectional flows"""

    def test_empty_stream(self):
        assert vtidingest.assemble_flows([]) == []

    def test_both_directions_share_a_flow(self):
        flows = vtidingest.assemble_flows(
            [pkt(0.0, A, B), pkt(0.1, B, A), pkt(0.2, A, B)])
        assert len(flows) == 1
        assert len(flows[0].packets) == 3
        assert flows[0].client == A
        assert len(flows[0].upstream()) == 2
        assert len(flows[0].downstream()) == 1

    def test_two_tuples_two_flows(self):
        flows = vtidingest.assemble_flows([
            pkt(0.0, A, B),
            pkt(0.1, C, B),
            pkt(0.2, B, A),
            pkt(0.3, B, C),
        ])
        assert [len(f.packets) for f in flows] == [2, 2]
        assert flows[0].key == vtidingest.FiveTuple.of(pkt(0, A, B))
        assert flows[1].key == vtidingest.FiveTuple.of(pkt(0, C, B))

    def test_tcp_and_udp_on_same_ports_are_different_flows(self):
        flows = vtidingest.assemble_flows(
            [pkt(0.0, A, B), pkt(0.1, A, B, proto=vtidingest.UDP)])
        assert len(flows) == 2

    def test_client_is_syn_sender(self):
        flows = vtidingest.assemble_flows(
            [pkt(0.0, B, A, payload=0), pkt(0.1, A, B, 0, {"SYN"})])
        assert flows[0].client == A

    def test_syn_ack_first_names_its_destination(self):
        flows = vtidingest.assemble_flows(
            [pkt(0.0, B, A, payload=0, flags={"SYN", "ACK"})])
        assert flows[0].client == A

    def test_sni_comes_from_first_carrier(self):
        flows = vtidingest.assemble_flows([
            pkt(0.0, A, B),
            pkt(0.1, A, B, sni="first.example.com"),
            pkt(0.2, A, B, sni="second.example.com"),
        ])
        assert flows[0].sni == "first.example.com"

    def test_partition_and_direction_properties(self):
        rng = np.random.default_rng(7)
        endpoints = [A, B, C, vtidingest.Endpoint("10.0.0.9", 53)]
        packets = []
        for i in range(300):
            src, dst = rng.choice(len(endpoints), size=2, replace=False)
            packets.append(
                pkt(i * 0.01, endpoints[src], endpoints[dst],
                    int(rng.integers(0, 3)) * 100))
        flows = vtidingest.assemble_flows(packets)
        assembled = [p for f in flows for p in f.packets]
        assert sorted(assembled, key=lambda p: p.timestamp) == packets
        for flow in flows:
            assert (len(flow.upstream()) + len(flow.downstream()) == len(
                flow.packets))
            assert flow.nonzero_payload_count == sum(
                1 for p in flow.packets if p.payload_len > 0)
            for p in flow.packets:
                assert vtidingest.FiveTuple.of(p) == flow.key

    def test_swapping_directions_keeps_keys_and_swaps_tags(self):
        packets = [pkt(0.0, A, B), pkt(0.1, B, A), pkt(0.2, C, B)]
        swapped = [
            vtidingest.PacketRecord(p.timestamp, p.dst, p.src, p.transport,
                                    p.payload_len, p.header_len,
                                    p.tcp_window, p.tcp_flags)
            for p in packets
        ]
        flows = vtidingest.assemble_flows(packets)
        swapped_flows = vtidingest.assemble_flows(swapped)
        assert [f.key for f in flows] == [f.key for f in swapped_flows]
        for flow, other in zip(flows, swapped_flows):
            # the initiator moves to the other endpoint
            assert other.client == flow.server
            tags = [flow.is_upstream(p) for p in flow.packets]
            sent_by_old_client = [p.src == flow.client for p in other.packets]
            assert sent_by_old_client == [not tag for tag in tags]

    def test_flow_id_includes_source(self):
        flows = vtidingest.assemble_flows([pkt(0.0, A, B)], source="a.pcap")
        assert flows[0].flow_id == "a.pcap|10.0.0.1:443-10.0.0.2:50000-TCP"

    def test_with_client_rejects_foreign_endpoint(self):
        flow = vtidingest.assemble_flows([pkt(0.0, A, B)])[0]
        assert flow.with_client(B).upstream() == []
        with pytest.raises(ValueError):
            flow.with_client(C)


class TestFilterElephant:
    """Tests for dropping mice flows"""

    @staticmethod
    def flow_with(nonzero, zero=0):
        packets = [pkt(i * 0.001, A, B, payload=100) for i in range(nonzero)]
        packets += [
            pkt((nonzero + i) * 0.001, B, A, payload=0) for i in range(zero)
        ]
        return vtidingest.assemble_flows(packets)[0]

    def test_threshold_is_inclusive(self):
        kept = self.flow_with(500, zero=20)
        dropped = self.flow_with(499, zero=20)
        assert vtidingest.filter_elephant([kept, dropped]) == [kept]

    def test_zero_payload_flow_dropped_at_threshold_one(self):
        flow = self.flow_with(0, zero=5)
        assert vtidingest.filter_elephant([flow], 1) == []

    def test_idempotent_and_monotone(self):
        flows = [self.flow_with(n) for n in (1, 5, 10, 50)]
        once = vtidingest.filter_elephant(flows, 5)
        assert vtidingest.filter_elephant(once, 5) == once
        assert set(map(id, vtidingest.filter_elephant(flows, 10))) <= set(
            map(id, once))

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            vtidingest.filter_elephant([], 0)


class TestLabelFlows:
    """Tests for SNI rule labeling"""

    @staticmethod
    def flow(sni):
        return vtidingest.assemble_flows([pkt(0.0, A, B, sni=sni)])[0]

    def test_glob_rule(self):
        flows = vtidingest.label_flows([self.flow("r3.googlevideos.com")],
                                       [("*.googlevideos.com", "youtube")])
        assert flows[0].label == "youtube"

    def test_default_label_without_sni(self):
        flows = vtidingest.label_flows([self.flow(None)],
                                       [("*.googlevideos.com", "youtube")],
                                       default_label="cloudgame")
        assert flows[0].label == "cloudgame"

    def test_first_rule_wins(self):
        flows = vtidingest.label_flows([self.flow("a.nflxvideo.net")],
                                       [("*.nflxvideo.net", "netflix"),
                                        ("*.net", "other")])
        assert flows[0].label == "netflix"

    def test_matching_is_case_insensitive(self):
        flows = vtidingest.label_flows([self.flow("a.nflxvideo.net")],
                                       [("*.NFLXVIDEO.net", "netflix")])
        assert flows[0].label == "netflix"

    def test_unmatched_flows_stay_unlabeled_and_are_reported(self, caplog):
        flows = vtidingest.label_flows([self.flow("x.example.com")],
                                       [("*.googlevideos.com", "youtube")])
        assert flows[0].label is None
        assert "matched no label rule" in caplog.text

    @pytest.mark.parametrize("pattern", ["", "a b", "[abc", "abc]"])
    def test_malformed_pattern(self, pattern):
        with pytest.raises(ValueError):
            vtidingest.label_flows([], [(pattern, "x")])

    def test_load_label_rules(self, tmpdir):
        path = str(tmpdir / "rules.tsv")
        with open(path, "w") as f:
            f.write("# comment\n*.googlevideos.com\tyoutube\n\n"
                    "*.nflxvideo.net\tnetflix\n")
        assert vtidingest.load_label_rules(path) == [
            ("*.googlevideos.com", "youtube"), ("*.nflxvideo.net", "netflix")
        ]

    def test_load_label_rules_names_bad_line(self, tmpdir):
        path = str(tmpdir / "rules.tsv")
        with open(path, "w") as f:
            f.write("*.googlevideos.com\tyoutube\nno tab here\n")
        with pytest.raises(ValueError, match="line 2"):
            vtidingest.load_label_rules(path)


class TestFlowGenerator:
    """Integration tests of reading a labeled trace corpus"""

    @staticmethod
    def write_corpus(tmpdir):
        for label, port, sni, n in (("youtube", 50000, "r1.googlevideos.com",
                                     6), ("netflix", 50001, None, 3)):
            client = vtidingest.Endpoint("10.0.0.2", port)
            records = [pkt(0.0, client, B, 0, {"SYN"}, sni=None)]
            records.append(pkt(0.01, client, B, 200, {"ACK"}, sni=sni))
            records += [
                pkt(0.1 * (i + 1), B, client, 1000) for i in range(n)
            ]
            (tmpdir / label).mkdir()
            vtidingest.write_text_trace(
                records, str(tmpdir / label / f"{label}.trace"))

    def test_labels_from_directories(self, tmpdir):
        self.write_corpus(tmpdir)
        traces = vtidingest.find_traces([str(tmpdir)])
        assert sorted(label for _, label in traces) == ["netflix", "youtube"]
        generator = vtidingest.FlowGenerator(traces, threshold=None)
        generator.run()
        flows = generator.get_data()
        assert sorted(f.label for f in flows) == ["netflix", "youtube"]
        assert generator.count_before == generator.count_after == 2

    def test_rules_override_directory_labels(self, tmpdir):
        self.write_corpus(tmpdir)
        generator = vtidingest.FlowGenerator(
            vtidingest.find_traces([str(tmpdir)]),
            rules=[("*.googlevideos.com", "google")],
            threshold=None)
        generator.run()
        labels = {f.source.split("/")[0]: f.label for f in generator.get_data()}
        assert labels == {"youtube": "google", "netflix": "netflix"}

    def test_counts_before_and_after_filtering(self, tmpdir):
        self.write_corpus(tmpdir)
        generator = vtidingest.FlowGenerator(
            vtidingest.find_traces([str(tmpdir)]), threshold=5)
        generator.run()
        assert generator.count_before == 2
        assert generator.count_after == 1
        assert generator.get_data()[0].label == "youtube"

    def test_runs_once(self, tmpdir):
        generator = vtidingest.FlowGenerator([])
        generator.run()
        with pytest.raises(RuntimeError):
            generator.run()
