import io

import numpy as np
import pytest

from amprul.ingest import (
    CellSeries,
    Manifest,
    ManifestEntry,
    SegmentKind,
    load_manifest,
    parse_cell_csv,
    save_manifest,
    segment_cycles,
    write_cell_csv,
)
from amprul.errors import (
    EmptyFile,
    MalformedRow,
    NonMonotonicTimestamp,
    NonPositiveNominal,
    RangeViolation,
)

HEADER = "timestamp_s,voltage_v,current_a,temperature_c"


def make_series(currents, cell_id="c0", dt=1.0):
    currents = np.asarray(currents, dtype=float)
    n = len(currents)
    return CellSeries(
        cell_id=cell_id,
        timestamp_s=np.arange(n) * dt,
        voltage_v=np.full(n, 3.7),
        current_a=currents,
        temperature_c=np.full(n, 25.0),
        nominal_capacity_ah=2.0,
    )


class TestParse:
    def test_minimal_two_rows(self):
        text = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,3.71,1.0,25.1\n"
        s = parse_cell_csv(text.encode(), 2.0, cell_id="a")
        assert len(s) == 2
        assert s.cell_id == "a"
        assert s[1].voltage_v == 3.71
        assert s[0].timestamp_s == 0.0

    def test_accepts_file_object_and_path(self, tmp_path):
        text = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,3.7,1.0,25.0\n"
        p = tmp_path / "cell.csv"
        p.write_text(text)
        from_path = parse_cell_csv(p, 2.0)
        from_buf = parse_cell_csv(io.StringIO(text), 2.0)
        assert np.array_equal(from_path.current_a, from_buf.current_a)

    def test_duplicate_timestamp_reports_line(self):
        rows = ["0.0,3.7,1.0,25.0", "1.0,3.7,1.0,25.0", "1.0,3.7,1.0,25.0"]
        text = HEADER + "\n" + "\n".join(rows) + "\n"
        with pytest.raises(NonMonotonicTimestamp) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 4

    def test_decreasing_timestamp_rejected(self):
        text = HEADER + "\n5.0,3.7,1.0,25.0\n4.0,3.7,1.0,25.0\n"
        with pytest.raises(NonMonotonicTimestamp):
            parse_cell_csv(text.encode(), 2.0)

    def test_voltage_out_of_range(self):
        text = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,12.0,1.0,25.0\n"
        with pytest.raises(RangeViolation) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 3

    def test_temperature_out_of_range(self):
        text = HEADER + "\n0.0,3.7,1.0,130.0\n1.0,3.7,1.0,25.0\n"
        with pytest.raises(RangeViolation) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 2

    def test_range_bounds_are_exclusive(self):
        text = HEADER + "\n0.0,10.0,1.0,25.0\n1.0,3.7,1.0,25.0\n"
        with pytest.raises(RangeViolation):
            parse_cell_csv(text.encode(), 2.0)
        text = HEADER + "\n0.0,3.7,1.0,-40.0\n1.0,3.7,1.0,25.0\n"
        with pytest.raises(RangeViolation):
            parse_cell_csv(text.encode(), 2.0)

    def test_negative_timestamp_rejected(self):
        text = HEADER + "\n-1.0,3.7,1.0,25.0\n0.0,3.7,1.0,25.0\n"
        with pytest.raises(RangeViolation):
            parse_cell_csv(text.encode(), 2.0)

    def test_non_numeric_field(self):
        text = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,oops,1.0,25.0\n"
        with pytest.raises(MalformedRow) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 3

    def test_wrong_field_count(self):
        text = HEADER + "\n0.0,3.7,1.0\n1.0,3.7,1.0,25.0\n"
        with pytest.raises(MalformedRow) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 2

    def test_empty_input(self):
        with pytest.raises(EmptyFile):
            parse_cell_csv(b"", 2.0)
        with pytest.raises(EmptyFile):
            parse_cell_csv((HEADER + "\n").encode(), 2.0)
        with pytest.raises(EmptyFile):
            parse_cell_csv((HEADER + "\n0.0,3.7,1.0,25.0\n").encode(), 2.0)

    def test_missing_column_rejected(self):
        text = "timestamp_s,voltage_v,current_a\n0.0,3.7,1.0\n1.0,3.7,1.0\n"
        with pytest.raises(MalformedRow) as exc:
            parse_cell_csv(text.encode(), 2.0)
        assert exc.value.line == 1

    def test_extra_columns_ignored(self):
        base = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,3.7,1.0,25.0\n"
        extra = (
            "timestamp_s,voltage_v,current_a,temperature_c,soc_pct\n"
            "0.0,3.7,1.0,25.0,55.0\n1.0,3.7,1.0,25.0,55.1\n"
        )
        a = parse_cell_csv(base.encode(), 2.0)
        b = parse_cell_csv(extra.encode(), 2.0)
        for col in ("timestamp_s", "voltage_v", "current_a", "temperature_c"):
            assert np.array_equal(getattr(a, col), getattr(b, col))

    def test_reordered_columns_mapped_by_name(self):
        text = (
            "current_a,timestamp_s,temperature_c,voltage_v\n"
            "1.5,0.0,25.0,3.7\n1.5,1.0,25.0,3.8\n"
        )
        s = parse_cell_csv(text.encode(), 2.0)
        assert s.current_a[0] == 1.5
        assert s.voltage_v[1] == 3.8

    def test_nonpositive_nominal(self):
        text = HEADER + "\n0.0,3.7,1.0,25.0\n1.0,3.7,1.0,25.0\n"
        with pytest.raises(NonPositiveNominal):
            parse_cell_csv(text.encode(), 0.0)
        with pytest.raises(NonPositiveNominal):
            parse_cell_csv(text.encode(), -1.0)


class TestRoundTrip:
    def test_write_then_parse_is_identity(self, tmp_path):
        rng = np.random.default_rng(7)
        n = 200
        s = CellSeries(
            cell_id="rt",
            timestamp_s=np.cumsum(rng.uniform(0.5, 2.0, n)),
            voltage_v=rng.uniform(3.0, 4.2, n),
            current_a=rng.normal(0.0, 2.0, n),
            temperature_c=rng.uniform(20.0, 35.0, n),
            nominal_capacity_ah=2.0,
        )
        p = tmp_path / "rt.csv"
        write_cell_csv(s, p)
        back = parse_cell_csv(p, 2.0, cell_id="rt")
        assert np.array_equal(s.timestamp_s, back.timestamp_s)
        assert np.array_equal(s.voltage_v, back.voltage_v)
        assert np.array_equal(s.current_a, back.current_a)
        assert np.array_equal(s.temperature_c, back.temperature_c)

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(8)
        n = 50
        s = CellSeries(
            cell_id="rt",
            timestamp_s=np.arange(n, dtype=float),
            voltage_v=rng.uniform(3.0, 4.2, n),
            current_a=rng.normal(0.0, 2.0, n),
            temperature_c=np.full(n, 25.0),
            nominal_capacity_ah=2.0,
        )
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_cell_csv(s, p1)
        write_cell_csv(parse_cell_csv(p1, 2.0, cell_id="rt"), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSegmentation:
    def test_charge_rest_discharge(self):
        s = make_series([2.0, 2.0, 0.0, 0.0, -2.0, -2.0])
        segs = segment_cycles(s)
        assert [(g.kind, g.start_idx, g.end_idx) for g in segs] == [
            (SegmentKind.CHARGE, 0, 2),
            (SegmentKind.REST, 2, 4),
            (SegmentKind.DISCHARGE, 4, 6),
        ]

    def test_all_zero_is_single_rest(self):
        s = make_series([0.0] * 5)
        segs = segment_cycles(s)
        assert len(segs) == 1
        assert segs[0].kind is SegmentKind.REST
        assert (segs[0].start_idx, segs[0].end_idx) == (0, 5)

    def test_alternating_currents(self):
        s = make_series([1.0, -1.0, 1.0, -1.0])
        segs = segment_cycles(s)
        assert len(segs) == 4
        kinds = [g.kind for g in segs]
        assert kinds == [
            SegmentKind.CHARGE,
            SegmentKind.DISCHARGE,
            SegmentKind.CHARGE,
            SegmentKind.DISCHARGE,
        ]

    def test_deadband_counts_as_rest(self):
        s = make_series([0.04, -0.05, 0.05, 2.0])
        segs = segment_cycles(s, deadband_a=0.05)
        assert [g.kind for g in segs] == [SegmentKind.REST, SegmentKind.CHARGE]
        assert segs[0].end_idx == 3

    def test_partition_property(self):
        rng = np.random.default_rng(11)
        for trial in range(25):
            n = int(rng.integers(2, 400))
            cur = rng.choice([-2.0, -0.01, 0.0, 0.02, 2.0], size=n)
            s = make_series(cur)
            segs = segment_cycles(s)
            assert segs[0].start_idx == 0
            assert segs[-1].end_idx == n
            for a, b in zip(segs, segs[1:]):
                assert a.end_idx == b.start_idx
                assert a.kind is not b.kind
            assert all(len(g) >= 1 for g in segs)

    def test_segmentation_deterministic(self):
        rng = np.random.default_rng(12)
        cur = rng.normal(0.0, 1.5, 300)
        s = make_series(cur)
        a = segment_cycles(s)
        b = segment_cycles(s)
        assert a == b


class TestManifest:
    def test_round_trip(self, tmp_path):
        s = make_series([1.0, 1.0, -1.0])
        csv_path = tmp_path / "cell_a.csv"
        write_cell_csv(s, csv_path)
        man = Manifest([ManifestEntry("c0", csv_path, 2.0)])
        mpath = tmp_path / "manifest.json"
        save_manifest(man, mpath)
        back = load_manifest(mpath)
        assert back.cell_ids() == ["c0"]
        loaded = back.load_series("c0")
        assert np.array_equal(loaded.current_a, s.current_a)
        assert loaded.nominal_capacity_ah == 2.0

    def test_paths_stored_relative(self, tmp_path):
        s = make_series([1.0, 1.0])
        csv_path = tmp_path / "cell_a.csv"
        write_cell_csv(s, csv_path)
        mpath = tmp_path / "manifest.json"
        save_manifest(Manifest([ManifestEntry("c0", csv_path, 2.0)]), mpath)
        assert "tmp" not in mpath.read_text().split('"path": "')[1].split('"')[0]
