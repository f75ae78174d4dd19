"""Click-stream synthesis, CSV ingest and coincidence histogramming."""

import numpy as np
import pytest

from twinbeam.errors import (ConfigError, DataFormatError, GridMismatchError,
                             InvalidParameterError)
from twinbeam.events import (CoincidenceHistograms, TimeTagStream,
                             concat_streams, default_port_map, histogram,
                             ingest, read_histograms, synthesize,
                             write_histograms, write_stream)
from twinbeam.model import DetectionModel, TimeGrid
from twinbeam.multiphoton import rn_from_schmidt
from twinbeam.schmidt import SchmidtDecomposition, jta

GRID = TimeGrid(0.0, 20.0, 6)
ONE_PORT = DetectionModel(eta_s=(1.0,), eta_i=(1.0,))
PORTS_11 = {"s0": ("signal", 0), "i0": ("idler", 0)}


def rotated_decomposition(xi_list, n=6, dt=20.0, seed=0):
    """Squeezing spectrum on random smooth temporal modes."""
    xi = np.zeros(n)
    xi[:len(xi_list)] = xi_list
    rng = np.random.default_rng(seed)
    qs = np.linalg.qr(rng.normal(size=(n, n))
                      + 1j * rng.normal(size=(n, n)))[0]
    qi = np.linalg.qr(rng.normal(size=(n, n))
                      + 1j * rng.normal(size=(n, n)))[0]
    return SchmidtDecomposition(d_vals=np.sinh(2.0 * xi) / (2.0 * dt),
                                xi=xi, p_s=qs, p_i=qi, dt=dt,
                                grid=TimeGrid(0.0, dt, n))


def hand_stream(records, n_pulses, channels=("s0", "i0")):
    pulse = np.array([r[0] for r in records], dtype=np.int64)
    chan = np.array([r[1] for r in records], dtype="U8")
    time = np.array([r[2] for r in records], dtype=np.int64)
    return TimeTagStream(pulse, chan, time, n_pulses, channels)


# ---------------------------------------------------------------------------
# stream container

def test_stream_validation():
    with pytest.raises(InvalidParameterError, match="length"):
        TimeTagStream(np.array([0]), np.array(["s0", "i0"]),
                      np.array([1]), 2, ("s0", "i0"))
    with pytest.raises(InvalidParameterError, match="decrease"):
        hand_stream([(1, "s0", 0), (0, "s0", 0)], 2)
    with pytest.raises(InvalidParameterError, match="outside"):
        hand_stream([(5, "s0", 0)], 3)
    with pytest.raises(InvalidParameterError, match="negative arrival"):
        hand_stream([(0, "s0", -4)], 1)
    with pytest.raises(InvalidParameterError, match="undeclared"):
        hand_stream([(0, "x9", 0)], 1)
    with pytest.raises(InvalidParameterError, match="negative pulse"):
        TimeTagStream(np.array([], dtype=np.int64), np.array([], dtype="U8"),
                      np.array([], dtype=np.int64), -1, ())


def test_concat_shifts_pulse_indices():
    a = hand_stream([(0, "s0", 10), (2, "i0", 30)], 4)
    b = hand_stream([(1, "i0", 50)], 3, channels=("i0", "s1"))
    c = concat_streams(a, b)
    assert c.n_pulses == 7
    assert list(c.pulse) == [0, 2, 5]
    assert c.channels == ("s0", "i0", "s1")
    assert list(c.time_ps) == [10, 30, 50]


def test_default_port_map_names():
    model = DetectionModel(eta_s=(0.2, 0.2), eta_i=(0.3,))
    ports = default_port_map(model)
    assert ports == {"s0": ("signal", 0), "s1": ("signal", 1),
                     "i0": ("idler", 0)}


# ---------------------------------------------------------------------------
# synthesis

def test_dead_detectors_give_empty_stream():
    dec = rotated_decomposition([0.3])
    stream = synthesize(dec, jta(dec), DetectionModel((0.0,), (0.0,)),
                        500, seed=1)
    assert len(stream) == 0
    assert stream.n_pulses == 500
    assert stream.channels == ("s0", "i0")


def test_synthesis_is_reproducible():
    dec = rotated_decomposition([0.4], seed=3)
    amp = jta(dec)
    a = synthesize(dec, amp, ONE_PORT, 2000, seed=6)
    b = synthesize(dec, amp, ONE_PORT, 2000, seed=6)
    assert np.array_equal(a.pulse, b.pulse)
    assert np.array_equal(a.channel, b.channel)
    assert np.array_equal(a.time_ps, b.time_ps)
    c = synthesize(dec, amp, ONE_PORT, 2000, seed=7)
    assert not (len(c) == len(a) and np.array_equal(c.time_ps, a.time_ps))


def test_synthesis_validation():
    dec = rotated_decomposition([0.3])
    amp = jta(dec)
    with pytest.raises(InvalidParameterError, match="n_pulses"):
        synthesize(dec, amp, ONE_PORT, -1)
    with pytest.raises(InvalidParameterError, match="joint_cap"):
        synthesize(dec, amp, ONE_PORT, 10, joint_cap=0)
    blinding = rotated_decomposition([3.0])
    with pytest.raises(InvalidParameterError, match="too bright"):
        synthesize(blinding, jta(blinding), ONE_PORT, 10)


def test_injected_pools_are_not_mutated():
    dec = rotated_decomposition([0.4], seed=5)
    amp = jta(dec)
    ref = synthesize(dec, amp, ONE_PORT, 1500, seed=2)
    assert len(ref) > 0
    pools = {}
    synthesize(dec, amp, ONE_PORT, 1500, seed=2, pools=pools)
    assert pools == {}


def test_joint_cap_composes_high_orders():
    # mean ~1 pair/pulse: counts beyond the cap appear and are stitched
    # from capped pool rows
    dec = rotated_decomposition([0.9], seed=8)
    amp = jta(dec)
    stream = synthesize(dec, amp, ONE_PORT, 800, seed=4, joint_cap=2)
    assert stream.n_pulses == 800
    assert len(stream) > 800  # about two clicks per pulse survive


# ---------------------------------------------------------------------------
# CSV round trips

def test_stream_csv_round_trip(tmp_path):
    dec = rotated_decomposition([0.4], seed=9)
    stream = synthesize(dec, jta(dec), ONE_PORT, 3000, seed=11)
    path = tmp_path / "tags.csv"
    write_stream(stream, path)
    back = ingest(path, n_pulses=stream.n_pulses, channels=stream.channels)
    assert np.array_equal(back.pulse, stream.pulse)
    assert np.array_equal(back.channel, stream.channel)
    assert np.array_equal(back.time_ps, stream.time_ps)
    assert back.malformed_lines == 0


def test_ingest_infers_counts_and_channels(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("pulse,channel,time_ps\n0,s0,40\n2,i0,80\n")
    stream = ingest(path)
    assert stream.n_pulses == 3
    assert stream.channels == ("s0", "i0")
    assert list(stream.time_ps) == [40, 80]


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    stream = ingest(path)
    assert len(stream) == 0
    assert stream.n_pulses == 0


def test_ingest_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n0,s0,40\n")
    with pytest.raises(DataFormatError, match="header"):
        ingest(path)


def test_ingest_malformed_budget(tmp_path):
    path = tmp_path / "noisy.csv"
    rows = ["pulse,channel,time_ps"]
    rows += [f"{k},s0,{20 * (k % 5)}" for k in range(2000)]
    rows.insert(500, "garbage line without commas")
    path.write_text("\n".join(rows) + "\n")
    stream = ingest(path)
    assert stream.malformed_lines == 1
    assert len(stream) == 2000

    worse = tmp_path / "worse.csv"
    worse.write_text("pulse,channel,time_ps\n0,s0,40\nnope\nstill no\n")
    with pytest.raises(DataFormatError, match="malformed"):
        ingest(worse)


def test_ingest_rejects_decreasing_pulse(tmp_path):
    path = tmp_path / "rewound.csv"
    path.write_text("pulse,channel,time_ps\n4,s0,40\n1,s0,60\n")
    with pytest.raises(DataFormatError, match="decrease"):
        ingest(path)


def test_ingest_rejects_undeclared_channel(tmp_path):
    path = tmp_path / "extra.csv"
    path.write_text("pulse,channel,time_ps\n0,s0,40\n1,i7,60\n")
    with pytest.raises(DataFormatError, match="undeclared"):
        ingest(path, channels=("s0", "i0"))


# ---------------------------------------------------------------------------
# histogramming

def test_two_fold_counts_all_pairings():
    stream = hand_stream([(0, "s0", 0), (0, "s0", 40), (0, "i0", 20),
                          (1, "s0", 20), (1, "i0", 20)], 2)
    h = histogram(stream, TimeGrid(0.0, 20.0, 4), PORTS_11)
    expect = np.zeros((4, 4))
    expect[0, 1] = 1.0  # pulse 0: signal bin 0 with idler bin 1
    expect[2, 1] = 1.0  # pulse 0: signal bin 2 with the same idler
    expect[1, 1] = 1.0  # pulse 1
    assert np.array_equal(h.h2, expect)
    # one idler click per pulse: no 2+2 selections anywhere
    assert np.all(h.h4m == 0.0)
    assert np.all(h.h6m == 0.0)
    assert np.array_equal(h.singles["s0"], [1.0, 1.0, 1.0, 0.0])
    assert np.array_equal(h.singles["i0"], [0.0, 2.0, 0.0, 0.0])
    assert h.side_clicks == {"signal": 2, "idler": 2}
    assert np.array_equal(h.p2(), expect / 2.0)


def test_four_fold_marginal_combinatorics():
    # 2 signal + 2 idler clicks: the single 2+2 selection adds one count
    # at each of its four bin pairs
    stream = hand_stream([(0, "s0", 0), (0, "s0", 20),
                          (0, "i0", 40), (0, "i0", 60)], 1)
    h = histogram(stream, TimeGrid(0.0, 20.0, 4), PORTS_11)
    expect4 = np.zeros((4, 4))
    expect4[np.ix_([0, 1], [2, 3])] = 1.0
    assert np.array_equal(h.h4m, expect4)
    assert np.sum(h.h2) == 4.0
    assert np.all(h.h6m == 0.0)


def test_six_fold_marginal_combinatorics():
    # 3+3 clicks: 9 two-fold pairings, C(3,2)^2 = 9 selections for the
    # four-fold marginal (4 counts per bin pair), one 3+3 selection
    stream = hand_stream([(0, "s0", 0), (0, "s0", 20), (0, "s0", 40),
                          (0, "i0", 0), (0, "i0", 20), (0, "i0", 60)], 1)
    h = histogram(stream, TimeGrid(0.0, 20.0, 4), PORTS_11)
    s_bins = [0, 1, 2]
    i_bins = [0, 1, 3]
    assert np.sum(h.h2) == 9.0
    expect4 = np.zeros((4, 4))
    expect4[np.ix_(s_bins, i_bins)] = 4.0
    assert np.array_equal(h.h4m, expect4)
    expect6 = np.zeros((4, 4))
    expect6[np.ix_(s_bins, i_bins)] = 1.0
    assert np.array_equal(h.h6m, expect6)


def test_duplicate_bin_clicks_multiply():
    # two signal clicks landing in one bin still count as two pairings
    stream = hand_stream([(0, "s0", 0), (0, "s0", 5), (0, "i0", 20)], 1)
    h = histogram(stream, TimeGrid(0.0, 20.0, 4), PORTS_11)
    assert h.h2[0, 1] == 2.0


def test_histogram_drops_clicks_off_grid():
    stream = hand_stream([(0, "s0", 500), (0, "i0", 20)], 1)
    h = histogram(stream, TimeGrid(0.0, 20.0, 4), PORTS_11)
    assert np.all(h.h2 == 0.0)
    assert np.array_equal(h.singles["s0"], np.zeros(4))
    assert h.side_clicks["signal"] == 0


def test_histogram_port_map_errors():
    stream = hand_stream([(0, "s0", 0)], 1, channels=("s0", "i0"))
    with pytest.raises(ConfigError, match="missing"):
        histogram(stream, GRID, {"s0": ("signal", 0)})
    with pytest.raises(ConfigError, match="mapped"):
        histogram(stream, GRID, {"s0": ("photon", 0), "i0": ("idler", 0)})


def test_histogram_addition_matches_concat():
    a = hand_stream([(0, "s0", 0), (0, "i0", 20), (1, "s0", 40)], 2)
    b = hand_stream([(0, "s0", 20), (0, "i0", 20),
                     (1, "s0", 0), (1, "i0", 60)], 3)
    grid = TimeGrid(0.0, 20.0, 4)
    summed = histogram(a, grid, PORTS_11) + histogram(b, grid, PORTS_11)
    joined = histogram(concat_streams(a, b), grid, PORTS_11)
    assert np.array_equal(summed.h2, joined.h2)
    assert np.array_equal(summed.h4m, joined.h4m)
    assert np.array_equal(summed.h6m, joined.h6m)
    assert summed.n_pulses == joined.n_pulses == 5
    for c in ("s0", "i0"):
        assert np.array_equal(summed.singles[c], joined.singles[c])
    assert summed.side_clicks == joined.side_clicks


def test_histogram_addition_guards():
    a = hand_stream([(0, "s0", 0)], 1)
    ha = histogram(a, TimeGrid(0.0, 20.0, 4), PORTS_11)
    hb = histogram(a, TimeGrid(0.0, 10.0, 4), PORTS_11)
    with pytest.raises(GridMismatchError):
        ha + hb
    no6 = CoincidenceHistograms(h2=ha.h2, h4m=ha.h4m, h6m=None,
                                n_pulses=1, singles=ha.singles, grid=ha.grid)
    with pytest.raises(InvalidParameterError, match="six-fold"):
        ha + no6


def test_histogram_validation():
    with pytest.raises(InvalidParameterError, match="negative counts"):
        CoincidenceHistograms(h2=-np.ones((2, 2)), h4m=np.zeros((2, 2)),
                              h6m=None, n_pulses=1, singles={},
                              grid=TimeGrid(0.0, 20.0, 2))
    with pytest.raises(InvalidParameterError, match="click-pulse"):
        CoincidenceHistograms(h2=np.zeros((2, 2)), h4m=np.zeros((2, 2)),
                              h6m=None, n_pulses=1, singles={},
                              grid=TimeGrid(0.0, 20.0, 2),
                              side_clicks={"signal": 5})


# ---------------------------------------------------------------------------
# statistical consistency of the forward model

@pytest.fixture(scope="module")
def low_gain_run():
    dec = rotated_decomposition([0.15], seed=2)
    amp = jta(dec)
    stream = synthesize(dec, amp, ONE_PORT, 200000, seed=12)
    return dec, amp, stream


def test_low_gain_coincidences_follow_p1(low_gain_run):
    dec, amp, stream = low_gain_run
    h = histogram(stream, amp.grid, PORTS_11)
    p1 = np.abs(amp.j_matrix) ** 2
    p1 /= p1.sum()
    emp = h.h2 / h.h2.sum()
    tv = 0.5 * np.sum(np.abs(emp - p1))
    assert tv < 0.05


def test_low_gain_coincidence_rate(low_gain_run):
    dec, amp, stream = low_gain_run
    h = histogram(stream, amp.grid, PORTS_11)
    rn = rn_from_schmidt(dec, 10)
    # pairings per pulse: sum_n n^2 r_n at unit efficiency
    expect = float(np.dot(np.arange(11.0) ** 2, rn.r))
    rate = float(np.sum(h.h2)) / stream.n_pulses
    sigma = np.sqrt(expect / stream.n_pulses)
    assert abs(rate - expect) < 5.0 * sigma + 0.1 * expect


def test_low_gain_singles_shape(low_gain_run):
    dec, amp, stream = low_gain_run
    h = histogram(stream, amp.grid, PORTS_11)
    marg_s = np.sum(np.abs(amp.j_matrix) ** 2, axis=1)
    marg_s /= marg_s.sum()
    emp = h.singles["s0"] / h.singles["s0"].sum()
    assert 0.5 * np.sum(np.abs(emp - marg_s)) < 0.05


def test_side_clicks_match_capture_probability(low_gain_run):
    dec, amp, stream = low_gain_run
    h = histogram(stream, amp.grid, PORTS_11)
    rn = rn_from_schmidt(dec, 10)
    expect = 1.0 - rn.r[0]  # unit efficiency: any pair clicks both sides
    for species in ("signal", "idler"):
        frac = h.side_clicks[species] / stream.n_pulses
        sigma = np.sqrt(expect * (1.0 - expect) / stream.n_pulses)
        assert abs(frac - expect) < 5.0 * sigma


# ---------------------------------------------------------------------------
# histogram persistence

def test_histogram_directory_round_trip(tmp_path):
    stream = hand_stream([(0, "s0", 0), (0, "s0", 20), (0, "i0", 40),
                          (0, "i0", 60), (1, "s0", 20), (1, "i0", 20)], 2)
    grid = TimeGrid(0.0, 20.0, 4)
    h = histogram(stream, grid, PORTS_11)
    write_histograms(h, tmp_path, ports=PORTS_11)
    back = read_histograms(tmp_path)
    assert np.array_equal(back.h2, h.h2)
    assert np.array_equal(back.h4m, h.h4m)
    assert np.array_equal(back.h6m, h.h6m)
    assert back.n_pulses == 2
    assert back.grid == grid
    assert back.side_clicks == h.side_clicks
    for c in ("s0", "i0"):
        assert np.array_equal(back.singles[c], h.singles[c])


def test_read_histograms_missing_meta(tmp_path):
    with pytest.raises(DataFormatError, match="cannot read"):
        read_histograms(tmp_path)


def test_read_histograms_bad_matrix(tmp_path):
    stream = hand_stream([(0, "s0", 0), (0, "i0", 20)], 1)
    grid = TimeGrid(0.0, 20.0, 4)
    write_histograms(histogram(stream, grid, PORTS_11), tmp_path,
                     ports=PORTS_11)
    (tmp_path / "h2.csv").write_text("q,p,count\n9,9,1.0\n")
    with pytest.raises(DataFormatError, match="off the grid"):
        read_histograms(tmp_path)
