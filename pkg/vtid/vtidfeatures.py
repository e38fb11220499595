"""Computes the 89 per-flow statistical features, peak-point features included.

Three direction views are used throughout: "up" (packets sent by the flow's
client), "down" (all other packets) and "all". Feature names carry the view as
a prefix: U for upstream, D for downstream, nothing for all packets.

Peak points are values that are >= both neighbours in a sequence; sequence
endpoints are never peaks and plateaus produce several peaks. Three peak
features are built on that definition:

    PPP     payload peak points over the sequence of packets with a non-zero
            payload, also counted in alpha-second buckets over [0, beta)
    BRPP    peaks of the byte rate over consecutive complete T-second buckets
    BRPPSW  peaks of the on-wire bytes summed over sliding windows of length L
            that start every Z*L seconds

Degenerate statistics (anything over an empty set, ratios with a zero
denominator) are reported as 0 so that every vector is finite.
"""

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from vtid import vtidingest

#
# Constants
#

VIEWS = ("up", "down", "all")
VIEW_PREFIX = {"up": "U", "down": "D", "all": ""}
_VIEW_WORDS = {"up": "upstream", "down": "downstream", "all": "all packets"}

_STATS = (("mean", "Mean"), ("min", "Minimum"), ("max", "Maximum"),
          ("std", "Std"))


def _build_dictionary() -> List[Tuple[str, str]]:
    """Canonical (name, description) pairs in feature vector order"""
    entries = []
    for view in VIEWS:
        for stat, word in _STATS:
            entries.append((f"{VIEW_PREFIX[view]}IAT_{stat}",
                            f"{word} of {_VIEW_WORDS[view]} inter-arrival "
                            f"time (s); 0 with fewer than two packets"))
    for view in VIEWS:
        for stat, word in (("sum", "Sum"),) + _STATS:
            entries.append((f"{VIEW_PREFIX[view]}Window_{stat}",
                            f"{word} of {_VIEW_WORDS[view]} TCP window sizes; "
                            f"0 for UDP"))
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}pnum",
                        f"Number of {_VIEW_WORDS[view]}"))
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}pnum_s",
                        f"Packet rate of {_VIEW_WORDS[view]} (packets/s over "
                        f"the flow duration); 0 for a zero duration"))
    entries.append(("UDpnum_s", "Ratio of downstream to upstream packet "
                    "counts; 0 without upstream packets"))
    for flag in vtidingest.TCP_FLAGS:
        entries.append((f"{flag}_cnt", f"Number of packets with the TCP {flag} "
                        f"flag"))
    for view, flag in (("up", "PSH"), ("up", "URG"), ("down", "PSH"),
                       ("down", "URG")):
        entries.append((f"{VIEW_PREFIX[view]}{flag}_cnt",
                        f"Number of {_VIEW_WORDS[view]} with the TCP {flag} "
                        f"flag"))
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}hdr",
                        f"Sum of IP and transport header lengths of "
                        f"{_VIEW_WORDS[view]}"))
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}hdrR",
                        f"Ratio of the header length sum to the payload sum of "
                        f"{_VIEW_WORDS[view]}; 0 without payload"))
    for view in VIEWS:
        for stat, word in _STATS:
            entries.append((f"{VIEW_PREFIX[view]}pay_{stat}",
                            f"{word} of {_VIEW_WORDS[view]} payload lengths"))
    entries.extend(_PEAK_DICTIONARY)
    return entries


def _build_peak_dictionary() -> List[Tuple[str, str]]:
    entries = []
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}payc",
                        f"Payload peak point count of {_VIEW_WORDS[view]} over "
                        f"the whole flow (non-zero payloads only)"))
    for stat, word in _STATS:
        entries.append((f"PPP5_{stat}",
                        f"{word} of the payload peak point counts of all "
                        f"packets in alpha-second buckets over the first beta "
                        f"seconds (alpha=5, beta=60 by default); flows shorter "
                        f"than beta leave trailing buckets at 0"))
    for view in VIEWS:
        entries.append((f"{VIEW_PREFIX[view]}BRPP",
                        f"Byte rate peak point count of {_VIEW_WORDS[view]} "
                        f"over complete T-second buckets"))
    for view in VIEWS:
        for stat, word in _STATS:
            entries.append((f"{VIEW_PREFIX[view]}BRPPSW_{stat}",
                            f"{word} of {_VIEW_WORDS[view]} sliding-window "
                            f"byte-sum peaks (packet size = header + payload)"))
    for q in (1, 2, 3):
        entries.append((f"BRPPSW_Q{q}",
                        f"Quartile {q} (linear interpolation) of all-packets "
                        f"sliding-window byte-sum peaks"))
    return entries


_PEAK_DICTIONARY = _build_peak_dictionary()
FEATURE_DESCRIPTIONS: Dict[str, str] = dict(_build_dictionary())
FEATURE_NAMES: Tuple[str, ...] = tuple(FEATURE_DESCRIPTIONS)
PEAK_FEATURE_NAMES: Tuple[str, ...] = tuple(n for n, _ in _PEAK_DICTIONARY)
BRPPSW_FEATURE_NAMES: Tuple[str, ...] = tuple(
    n for n in PEAK_FEATURE_NAMES if "BRPPSW" in n)
NUM_FEATURES = 89


#
# Classes
#


@dataclasses.dataclass(frozen=True)
class PeakParams:
    """
    Parameters of the peak-point features.

    Attributes:
        alpha: PPP bucket width in seconds
        beta: PPP horizon in seconds; must be a whole multiple of alpha
        bucket_width: byte-rate bucket T in seconds
        window_length: sliding window length L in seconds
        offset_factor: Z in (0, 1]; windows start every Z*L seconds
    """
    alpha: float = 5.0
    beta: float = 60.0
    bucket_width: float = 1.0
    window_length: float = 3.0
    offset_factor: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"alpha and beta must be > 0, got "
                             f"{self.alpha}, {self.beta}")
        theta = round(self.beta / self.alpha)
        if theta < 1 or abs(theta * self.alpha - self.beta) > 1e-9:
            raise ValueError(f"alpha ({self.alpha}) must divide beta "
                             f"({self.beta}) exactly")
        if self.bucket_width <= 0 or self.window_length <= 0:
            raise ValueError("bucket_width and window_length must be > 0")
        if not 0 < self.offset_factor <= 1:
            raise ValueError(f"offset_factor must be in (0, 1], got "
                             f"{self.offset_factor}")

    @property
    def theta(self) -> int:
        """Number of PPP buckets"""
        return round(self.beta / self.alpha)

    @property
    def window_step(self) -> float:
        return self.offset_factor * self.window_length


class PppStats(NamedTuple):
    counts: np.ndarray  # theta bucket counts over [0, beta)
    mean: float
    std: float
    max: float
    min: float
    total: int  # peaks over the whole flow


class BrppswStats(NamedTuple):
    window_sums: np.ndarray  # R, every window
    peaks: np.ndarray  # R_F, the peak subsequence of R
    mean: float
    std: float
    max: float
    min: float
    quartiles: Tuple[float, float, float]


@dataclasses.dataclass(frozen=True)
class PeakSeries:
    """The peak-point series of one flow, keyed by direction view"""
    ppp_counts: Dict[str, np.ndarray]
    brpp_count: Dict[str, int]
    brppsw_sizes: Dict[str, np.ndarray]


@dataclasses.dataclass(frozen=True)
class FeatureVector:
    """
    The features of one flow.

    Attributes:
        flow_id: identifier of the flow the vector was computed from
        values: float array of length 89 in FEATURE_NAMES order
        label: class of the flow, if known
    """
    flow_id: str
    values: np.ndarray
    label: Optional[str] = None
    names: Tuple[str, ...] = FEATURE_NAMES

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


@dataclasses.dataclass(frozen=True)
class FeatureMatrix:
    """Row-wise assembly of feature vectors, with ids and labels alongside"""
    flow_ids: List[str]
    values: np.ndarray
    labels: List[str]
    names: Tuple[str, ...] = FEATURE_NAMES


class _FlowArrays:
    """Per-packet numpy columns of a flow, times relative to its first packet"""

    def __init__(self, flow: vtidingest.Flow):
        packets = flow.packets
        ts = np.array([p.timestamp for p in packets], dtype=float)
        self.t = ts - ts[0]
        self.duration = float(self.t[-1])
        self.payload = np.array([p.payload_len for p in packets],
                                dtype=np.int64)
        self.header = np.array([p.header_len for p in packets], dtype=np.int64)
        self.window = np.array([p.tcp_window for p in packets], dtype=np.int64)
        self.flags = {
            flag: np.array([flag in p.tcp_flags for p in packets], dtype=bool)
            for flag in vtidingest.TCP_FLAGS
        }
        up = np.array([flow.is_upstream(p) for p in packets], dtype=bool)
        self.masks = {"up": up, "down": ~up, "all": np.ones(len(packets), bool)}


#
# Functions (peaks)
#


def _peak_indices(values: np.ndarray) -> np.ndarray:
    """0-based indices of interior points >= both neighbours"""
    values = np.asarray(values)
    if len(values) < 3:
        return np.zeros(0, dtype=int)
    middle = values[1:-1]
    return np.nonzero((middle >= values[:-2]) & (middle >= values[2:]))[0] + 1


def detect_peaks(series: Sequence[float]) -> List[Tuple[int, float]]:
    """
    Returns (index, value) for every interior point of the series that is >=
    both of its neighbours. Indices are 0-based; the first and last points are
    never peaks.
    """
    values = np.asarray(series, dtype=float)
    return [(int(i), float(values[i])) for i in _peak_indices(values)]


def _describe(values: np.ndarray) -> Tuple[float, float, float, float]:
    """(mean, min, max, population std), all 0 for an empty set"""
    if len(values) == 0:
        return 0.0, 0.0, 0.0, 0.0
    values = np.asarray(values, dtype=float)
    return (float(np.mean(values)), float(np.min(values)),
            float(np.max(values)), float(np.std(values)))


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def _ppp(arrays: _FlowArrays, view: str, params: PeakParams) -> PppStats:
    keep = arrays.masks[view] & (arrays.payload > 0)
    times = arrays.t[keep]
    peak_times = times[_peak_indices(arrays.payload[keep])]

    early = peak_times[peak_times < params.beta]
    buckets = np.minimum((early // params.alpha).astype(int), params.theta - 1)
    counts = np.bincount(buckets, minlength=params.theta)
    mean, low, high, std = _describe(counts)
    return PppStats(counts, mean, std, high, low, len(peak_times))


def _brpp(arrays: _FlowArrays, view: str, params: PeakParams) -> int:
    width = params.bucket_width
    n_buckets = int(arrays.duration // width)
    index = (arrays.t // width).astype(int)
    keep = arrays.masks[view] & (index < n_buckets)
    spp = np.bincount(index[keep],
                      weights=arrays.payload[keep],
                      minlength=n_buckets)
    return len(_peak_indices(spp / width))


def _window_sums(times: np.ndarray, sizes: np.ndarray, duration: float,
                 params: PeakParams) -> np.ndarray:
    step = params.window_step
    starts = np.arange(int(duration // step) + 2) * step
    starts = starts[starts < duration]
    cumulative = np.concatenate(([0], np.cumsum(sizes)))
    lo = np.searchsorted(times, starts, side="left")
    hi = np.searchsorted(times, starts + params.window_length, side="left")
    return cumulative[hi] - cumulative[lo]


def _brppsw(arrays: _FlowArrays, view: str, params: PeakParams) -> BrppswStats:
    mask = arrays.masks[view]
    sums = _window_sums(arrays.t[mask], (arrays.payload + arrays.header)[mask],
                        arrays.duration, params)
    peaks = sums[_peak_indices(sums)]
    mean, low, high, std = _describe(peaks)
    if len(peaks):
        quartiles = tuple(float(q) for q in np.percentile(peaks, [25, 50, 75]))
    else:
        quartiles = (0.0, 0.0, 0.0)
    return BrppswStats(sums, peaks, mean, std, high, low, quartiles)


def ppp_features(flow: vtidingest.Flow,
                 params: PeakParams) -> Dict[str, PppStats]:
    """Payload peak point statistics for each direction view"""
    arrays = _FlowArrays(flow)
    return {view: _ppp(arrays, view, params) for view in VIEWS}


def brpp_features(flow: vtidingest.Flow, params: PeakParams) -> Dict[str, int]:
    """Byte-rate peak point counts for each direction view"""
    arrays = _FlowArrays(flow)
    return {view: _brpp(arrays, view, params) for view in VIEWS}


def brppsw_features(flow: vtidingest.Flow,
                    params: PeakParams) -> Dict[str, BrppswStats]:
    """Sliding-window byte-rate peak statistics for each direction view"""
    arrays = _FlowArrays(flow)
    return {view: _brppsw(arrays, view, params) for view in VIEWS}


def peak_series(flow: vtidingest.Flow, params: PeakParams) -> PeakSeries:
    arrays = _FlowArrays(flow)
    return PeakSeries(
        ppp_counts={v: _ppp(arrays, v, params).counts for v in VIEWS},
        brpp_count={v: _brpp(arrays, v, params) for v in VIEWS},
        brppsw_sizes={v: _brppsw(arrays, v, params).peaks for v in VIEWS})


#
# Functions (feature vectors)
#


def _brppsw_columns(arrays: _FlowArrays,
                    params: PeakParams) -> Dict[str, float]:
    columns = {}
    for view in VIEWS:
        stats = _brppsw(arrays, view, params)
        prefix = VIEW_PREFIX[view]
        columns[f"{prefix}BRPPSW_mean"] = stats.mean
        columns[f"{prefix}BRPPSW_min"] = stats.min
        columns[f"{prefix}BRPPSW_max"] = stats.max
        columns[f"{prefix}BRPPSW_std"] = stats.std
        if view == "all":
            for q, value in enumerate(stats.quartiles, start=1):
                columns[f"BRPPSW_Q{q}"] = value
    return columns


def brppsw_columns(flow: vtidingest.Flow, params: PeakParams) -> np.ndarray:
    """The 15 BRPPSW feature values in BRPPSW_FEATURE_NAMES order"""
    columns = _brppsw_columns(_FlowArrays(flow), params)
    return np.array([columns[name] for name in BRPPSW_FEATURE_NAMES])


def extract_features(flow: vtidingest.Flow,
                     params: PeakParams = PeakParams()) -> FeatureVector:
    """Computes the 89 features of a flow"""
    if not flow.packets:
        raise ValueError(f"flow {flow.flow_id} has no packets")
    arrays = _FlowArrays(flow)
    f = {}

    for view in VIEWS:
        p, mask = VIEW_PREFIX[view], arrays.masks[view]
        (f[f"{p}IAT_mean"], f[f"{p}IAT_min"], f[f"{p}IAT_max"],
         f[f"{p}IAT_std"]) = _describe(np.diff(arrays.t[mask]))
        windows = arrays.window[mask]
        f[f"{p}Window_sum"] = float(np.sum(windows))
        (f[f"{p}Window_mean"], f[f"{p}Window_min"], f[f"{p}Window_max"],
         f[f"{p}Window_std"]) = _describe(windows)
        count = int(np.count_nonzero(mask))
        f[f"{p}pnum"] = float(count)
        f[f"{p}pnum_s"] = _ratio(count, arrays.duration)
        header_sum = np.sum(arrays.header[mask])
        f[f"{p}hdr"] = float(header_sum)
        f[f"{p}hdrR"] = _ratio(header_sum, np.sum(arrays.payload[mask]))
        (f[f"{p}pay_mean"], f[f"{p}pay_min"], f[f"{p}pay_max"],
         f[f"{p}pay_std"]) = _describe(arrays.payload[mask])

    f["UDpnum_s"] = _ratio(f["Dpnum"], f["Upnum"])
    for flag in vtidingest.TCP_FLAGS:
        f[f"{flag}_cnt"] = float(np.count_nonzero(arrays.flags[flag]))
    for view in ("up", "down"):
        for flag in ("PSH", "URG"):
            f[f"{VIEW_PREFIX[view]}{flag}_cnt"] = float(
                np.count_nonzero(arrays.flags[flag] & arrays.masks[view]))

    for view in VIEWS:
        p = VIEW_PREFIX[view]
        ppp = _ppp(arrays, view, params)
        f[f"{p}payc"] = float(ppp.total)
        if view == "all":
            f["PPP5_mean"], f["PPP5_min"] = ppp.mean, ppp.min
            f["PPP5_max"], f["PPP5_std"] = ppp.max, ppp.std
        f[f"{p}BRPP"] = float(_brpp(arrays, view, params))
    f.update(_brppsw_columns(arrays, params))

    values = np.array([f[name] for name in FEATURE_NAMES], dtype=float)
    return FeatureVector(flow.flow_id, values, flow.label)


def _extract_one(flow: vtidingest.Flow, params: PeakParams) -> np.ndarray:
    try:
        return extract_features(flow, params).values
    except (ValueError, IndexError, FloatingPointError) as e:
        raise RuntimeError(f"Could not extract features of flow "
                           f"{flow.flow_id}: {e}") from e


def extract_matrix(flows: Sequence[vtidingest.Flow],
                   params: PeakParams = PeakParams(),
                   default_label: Optional[str] = None,
                   jobs: int = 1) -> FeatureMatrix:
    """
    Extracts one row per flow, in input order. Every flow needs a label unless
    default_label is given. With jobs > 1, rows are computed in worker
    processes; the output order does not depend on jobs.
    """
    labels = [f.label if f.label is not None else default_label for f in flows]
    missing = [f.flow_id for f, label in zip(flows, labels) if label is None]
    if missing:
        raise ValueError(f"{len(missing)} flows are unlabeled, e.g. "
                         f"{missing[0]}; supply a default label")

    logging.info(f"Extracting features of {len(flows)} flows")
    if jobs > 1 and len(flows) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(_extract_one,
                         flows, [params] * len(flows),
                         chunksize=max(1, len(flows) // (4 * jobs))))
    else:
        rows = [_extract_one(flow, params) for flow in flows]

    values = np.vstack(rows) if rows else np.zeros((0, NUM_FEATURES))
    return FeatureMatrix([f.flow_id for f in flows], values, labels)
