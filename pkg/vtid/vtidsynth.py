"""Synthetic two-class corpus that differs only in burst structure.

Every flow is a client SYN followed by a run of server packets. A flow draws
its payload sizes, inter-arrival gaps and TCP windows from one generator
shared by both classes. "bursty" flows send the packets in bursts: payloads
ascend within a burst and the long gaps fall between bursts. "smooth" flows
send the very same values in random order. Payload, gap, window, header and
flag multisets are therefore identically distributed across the classes and
only the peak-point features tell them apart.
"""

import logging
from typing import List

import numpy as np

from vtid import vtidingest

#
# Constants
#

BURSTY = "bursty"
SMOOTH = "smooth"
CLASSES = (BURSTY, SMOOTH)

HEADER_LEN = 40
SERVER = vtidingest.Endpoint("10.0.0.1", 443)


def _flow(index: int, label: str, rng: np.random.Generator) -> vtidingest.Flow:
    client = vtidingest.Endpoint(f"192.168.{index // 250}.{index % 250 + 1}",
                                 40000 + index % 20000)
    n_bursts = int(rng.integers(8, 16))
    burst_lengths = rng.integers(6, 12, size=n_bursts)
    n = int(burst_lengths.sum())

    # one ascending run of payloads per burst
    payloads = np.concatenate([
        np.sort(rng.choice(np.arange(200, 1461), size=length, replace=False))
        for length in burst_lengths
    ])
    short_gaps = rng.uniform(0.001, 0.01, size=n - n_bursts)
    long_gaps = rng.uniform(1.5, 2.5, size=n_bursts)
    windows = rng.integers(20000, 65536, size=n)

    if label == BURSTY:
        starts = np.concatenate(([0], np.cumsum(burst_lengths)[:-1]))
        gaps = np.empty(n)
        is_long = np.zeros(n, dtype=bool)
        is_long[starts] = True
        gaps[is_long] = long_gaps
        gaps[~is_long] = short_gaps
    else:
        payloads = rng.permutation(payloads)
        # the first server packet still follows a long gap
        gaps = np.concatenate(([long_gaps[0]],
                               rng.permutation(
                                   np.concatenate((short_gaps, long_gaps[1:])))))

    packets = [
        vtidingest.PacketRecord(0.0, client, SERVER, vtidingest.TCP, 0,
                                HEADER_LEN, 64240, frozenset({"SYN"}))
    ]
    times = np.cumsum(gaps)
    for t, payload, window in zip(times, payloads, windows):
        packets.append(
            vtidingest.PacketRecord(float(t), SERVER, client, vtidingest.TCP,
                                    int(payload), HEADER_LEN, int(window),
                                    frozenset({"ACK", "PSH"})))
    key = vtidingest.FiveTuple.of(packets[0])
    flow = vtidingest.Flow.from_packets(key, packets, source=f"synthetic-{index}")
    return flow.with_label(label)


def synthesize_corpus(n_per_class: int, seed: int) -> List[vtidingest.Flow]:
    """n_per_class labeled flows of each class, classes interleaved"""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    flows = [
        _flow(2 * i + j, label, rng)
        for i in range(n_per_class)
        for j, label in enumerate(CLASSES)
    ]
    logging.info(f"Synthesized {len(flows)} flows ({n_per_class} per class)")
    return flows
