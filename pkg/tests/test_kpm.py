import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oranlat.kpm import (
    CSV_COLUMNS,
    FEATURES,
    N_FEATURES,
    InvalidRecord,
    KpmRecord,
    check_stream_order,
    from_feature_vector,
    iter_csv,
    read_csv,
    to_feature_vector,
    validate_record,
    write_csv,
)

from conftest import make_record


def test_valid_record_has_no_violations():
    assert validate_record(make_record(prb_avail_ul=40, prb_total_ul=106, ul_pkt_success_rate=0.99)) == []


def test_prb_avail_above_total_is_flagged():
    v = validate_record(make_record(prb_avail_ul=120, prb_total_ul=106))
    assert [d.split(":")[0] for d in v] == ["prb_avail_ul"]


def test_success_rate_out_of_range_is_flagged():
    v = validate_record(make_record(ul_pkt_success_rate=1.2))
    assert [d.split(":")[0] for d in v] == ["ul_pkt_success_rate"]


@pytest.mark.parametrize("field,value", [
    ("cqi", 16), ("cqi", -1), ("prb_total_ul", 0), ("ue_count", -1),
    ("latency_ms", -0.1), ("snr_db", math.nan), ("ul_throughput", math.inf),
])
def test_each_invariant_is_checked(field, value):
    v = validate_record(make_record(**{field: value}))
    assert v and v[0].startswith(field)


def test_float_in_integer_field_is_a_violation():
    assert validate_record(make_record(cqi=7.0))[0].startswith("cqi")


def test_feature_vector_positional_copy():
    v = to_feature_vector(make_record(ue_count=1, latency_ms=12.5))
    assert v.shape == (10,) and v.dtype == np.float64
    assert v[0] == 1.0 and v[1] == 12.5


def test_zero_record_vector():
    r = KpmRecord(0, 0, 0.0, 0, 1, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    assert to_feature_vector(r).tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]


def test_invalid_record_rejected_by_encoder():
    with pytest.raises(InvalidRecord) as exc:
        to_feature_vector(make_record(cqi=20))
    assert exc.value.violations[0].startswith("cqi")


def test_feature_order_matches_csv_header():
    assert CSV_COLUMNS == ("ts_ms",) + FEATURES
    assert N_FEATURES == 10
    r = make_record(ue_count=3, latency_ms=1.5, prb_avail_ul=7, prb_total_ul=9,
                    ul_pkt_success_rate=0.25, ul_sdu_volume=6.5, ul_throughput=7.5,
                    air_if_delay_ms=8.5, snr_db=-9.5, cqi=10)
    v = to_feature_vector(r)
    for i, name in enumerate(FEATURES):
        assert v[i] == float(getattr(r, name))


def test_csv_columns_are_read_by_name(tmp_path):
    r = make_record(ts_ms=100, latency_ms=9.25)
    header = list(reversed(CSV_COLUMNS))
    row = [repr(getattr(r, c)) if isinstance(getattr(r, c), float) else str(getattr(r, c)) for c in header]
    text = ",".join(header) + "\n" + ",".join(row) + "\n"
    assert list(iter_csv(io.StringIO(text))) == [r]


def test_csv_round_trip_is_exact(tmp_path):
    recs = [make_record(ts_ms=100 * i, latency_ms=0.1 * i + 1 / 3) for i in range(20)]
    path = tmp_path / "k.csv"
    assert write_csv(recs, path) == 20
    assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_csv(path) == recs


def test_csv_with_invalid_row_is_rejected(tmp_path):
    path = tmp_path / "k.csv"
    write_csv([make_record(cqi=3)], path)
    path.write_text(path.read_text().replace(",3\n", ",99\n"))
    with pytest.raises(InvalidRecord):
        read_csv(path)


def test_stream_order():
    check_stream_order([make_record(0), make_record(100)])
    with pytest.raises(InvalidRecord):
        check_stream_order([make_record(100), make_record(100)])


def test_json_round_trip():
    r = make_record(ts_ms=500, latency_ms=7.123456789)
    assert KpmRecord.from_json(r.to_json()) == r
    assert list(__import__("json").loads(r.to_json())) == list(CSV_COLUMNS)


valid_records = st.builds(
    lambda total, frac, ts, ue, lat, rate, vol, thr, air, snr, cqi: KpmRecord(
        ts, ue, lat, int(frac * total), total, rate, vol, thr, air, snr, cqi),
    st.integers(1, 500), st.floats(0, 1), st.integers(0, 10**12), st.integers(0, 64),
    st.floats(0, 1e4), st.floats(0, 1), st.floats(0, 1e6), st.floats(0, 1e4),
    st.floats(0, 1e3), st.floats(-50, 60), st.integers(0, 15),
)


@given(valid_records)
def test_generated_records_are_valid_and_round_trip(r):
    assert validate_record(r) == []
    v = to_feature_vector(r)
    assert len(v) == 10
    assert from_feature_vector(r.ts_ms, v) == r


@given(valid_records, valid_records)
def test_encoding_is_injective(a, b):
    a = from_feature_vector(0, to_feature_vector(a))
    b = from_feature_vector(0, to_feature_vector(b))
    assert (a == b) == np.array_equal(to_feature_vector(a), to_feature_vector(b))
