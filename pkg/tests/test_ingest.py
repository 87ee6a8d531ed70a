"""Air-quality CSV ingestion: parsing, regularization, grouping."""

import math
import warnings
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invarcast.exceptions import (
    ConfigError,
    IngestError,
    MissingAttributeError,
    SchemaError,
)
from invarcast.ingest import (
    ATTRIBUTES,
    CSV_HEADER,
    LocationSeries,
    fill_missing,
    load_csv,
    partition_environments,
    write_csv,
)

T0 = datetime(2024, 3, 1, 0, 0, tzinfo=timezone.utc)
HOUR = timedelta(hours=1)


def make_series(station="s1", city="metro", n=8, seed=0, nan_at=()):
    rng = np.random.default_rng(seed)
    values = rng.uniform(1.0, 50.0, size=(len(ATTRIBUTES), n))
    for attr, col in nan_at:
        values[attr, col] = np.nan
    return LocationSeries(
        station_id=station,
        city=city,
        latitude=40.5,
        longitude=-74.25,
        timestamps=[T0 + i * HOUR for i in range(n)],
        values=values,
    )


def write_text(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


HEADER_LINE = ",".join(CSV_HEADER)


def data_line(station="s1", city="metro", lat="40.5", lon="-74.25",
              stamp="2024-03-01T00:00:00Z",
              readings=("1.0", "2.0", "3.0", "4.0", "5.0", "6.0")):
    return ",".join([station, city, lat, lon, stamp] + list(readings))


class TestLoadCsv:
    def test_round_trip_preserves_values_and_nans(self, tmp_path):
        original = make_series(n=6, nan_at=[(2, 3), (5, 0)])
        path = tmp_path / "air.csv"
        write_csv([original], path)
        (loaded,) = load_csv(path)

        assert loaded.station_id == original.station_id
        assert loaded.city == original.city
        assert loaded.latitude == original.latitude
        assert loaded.longitude == original.longitude
        assert loaded.timestamps == original.timestamps
        np.testing.assert_array_equal(
            np.isnan(loaded.values), np.isnan(original.values)
        )
        mask = ~np.isnan(original.values)
        np.testing.assert_array_equal(loaded.values[mask], original.values[mask])

    def test_stations_sorted_and_rows_time_sorted(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(station="zz", stamp="2024-03-01T05:00:00Z"),
            data_line(station="aa", stamp="2024-03-01T02:00:00Z"),
            data_line(station="zz", stamp="2024-03-01T03:00:00Z",
                      readings=("9", "9", "9", "9", "9", "9")),
        ])
        series = load_csv(path)
        assert [s.station_id for s in series] == ["aa", "zz"]
        zz = series[1]
        assert zz.timestamps == [T0 + 3 * HOUR, T0 + 5 * HOUR]
        assert zz.values[0, 0] == 9.0 and zz.values[0, 1] == 1.0

    def test_empty_pollutant_field_becomes_nan(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(readings=("1.0", "", "3.0", "", "5.0", "6.0")),
        ])
        (series,) = load_csv(path)
        assert math.isnan(series.values[1, 0])
        assert math.isnan(series.values[3, 0])
        assert series.values[0, 0] == 1.0

    def test_timestamp_offsets_normalize_to_utc(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(stamp="2024-03-01T05:00:00+05:00"),
        ])
        (series,) = load_csv(path)
        assert series.timestamps == [T0]

    def test_wrong_header_is_schema_error(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE.replace("pm25", "pm2_5"),
            data_line(),
        ])
        with pytest.raises(SchemaError):
            load_csv(path)

    def test_empty_file_is_schema_error(self, tmp_path):
        path = tmp_path / "air.csv"
        path.write_text("")
        with pytest.raises(SchemaError):
            load_csv(path)

    @pytest.mark.parametrize("line,fragment", [
        (data_line(lat="abc"), "latitude"),
        (data_line(lat="95.0"), "out of range"),
        (data_line(lon="-200.0"), "out of range"),
        (data_line(stamp="yesterday"), "timestamp"),
        (data_line(stamp="2024-03-01T00:00:00"), "offset"),
        (data_line(readings=("1.0", "oops", "3", "4", "5", "6")), "pm10"),
        (data_line()[: -len(",6.0")], "fields"),
        (data_line(station=""), "station_id"),
    ])
    def test_bad_rows_name_the_line(self, tmp_path, line, fragment):
        path = write_text(tmp_path / "air.csv", [HEADER_LINE, data_line(), line])
        with pytest.raises(IngestError, match=fragment) as exc:
            load_csv(path)
        assert ":3:" in str(exc.value)

    def test_inconsistent_station_metadata_rejected(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(),
            data_line(city="other", stamp="2024-03-01T01:00:00Z"),
        ])
        with pytest.raises(IngestError, match="metadata"):
            load_csv(path)

    def test_duplicate_timestamp_rejected(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(),
            data_line(readings=("7", "7", "7", "7", "7", "7")),
        ])
        with pytest.raises(IngestError, match="duplicate"):
            load_csv(path)

    def test_same_instant_different_offset_is_duplicate(self, tmp_path):
        path = write_text(tmp_path / "air.csv", [
            HEADER_LINE,
            data_line(stamp="2024-03-01T00:00:00Z"),
            data_line(stamp="2024-03-01T02:00:00+02:00"),
        ])
        with pytest.raises(IngestError, match="duplicate"):
            load_csv(path)


class TestFillMissing:
    def test_short_gap_forward_filled(self):
        series = make_series(n=6, nan_at=[(0, 2), (0, 3)])
        (seg,) = fill_missing(series, max_gap_hours=2)
        assert seg.length == 6
        assert seg.values[0, 2] == seg.values[0, 1]
        assert seg.values[0, 3] == seg.values[0, 1]
        np.testing.assert_array_equal(seg.values[1:], series.values[1:])

    def test_missing_rows_become_grid_gaps(self):
        base = make_series(n=5)
        sparse = LocationSeries(
            station_id=base.station_id, city=base.city,
            latitude=base.latitude, longitude=base.longitude,
            timestamps=[base.timestamps[i] for i in (0, 1, 4)],
            values=base.values[:, [0, 1, 4]],
        )
        (seg,) = fill_missing(sparse, max_gap_hours=6)
        assert seg.length == 5
        np.testing.assert_array_equal(seg.values[:, 2], seg.values[:, 1])
        np.testing.assert_array_equal(seg.values[:, 3], seg.values[:, 1])
        np.testing.assert_array_equal(seg.values[:, 4], base.values[:, 4])

    def test_long_gap_splits_into_segments(self):
        series = make_series(n=12, nan_at=[(1, c) for c in (4, 5, 6)])
        segments = fill_missing(series, max_gap_hours=2)
        assert [s.length for s in segments] == [4, 5]
        assert segments[0].timestamps[0] == T0
        assert segments[1].timestamps[0] == T0 + 7 * HOUR
        assert all(np.isfinite(s.values).all() for s in segments)

    def test_leading_gap_never_filled(self):
        series = make_series(n=5, nan_at=[(0, 0), (0, 1)])
        segments = fill_missing(series, max_gap_hours=6)
        assert [s.length for s in segments] == [3]
        assert segments[0].timestamps[0] == T0 + 2 * HOUR

    def test_short_segments_dropped_with_warning(self):
        series = make_series(n=7, nan_at=[(2, 1), (2, 4)])
        with pytest.warns(UserWarning, match="dropping segment"):
            segments = fill_missing(series, max_gap_hours=0, min_length=2)
        assert [s.length for s in segments] == [2, 2]

    def test_all_nan_attribute_raises(self):
        series = make_series(n=4, nan_at=[(3, c) for c in range(4)])
        with pytest.raises(MissingAttributeError, match="co"):
            fill_missing(series)

    def test_off_grid_timestamp_rejected(self):
        series = make_series(n=3)
        series.timestamps[1] = T0 + timedelta(minutes=90)
        with pytest.raises(IngestError, match="grid"):
            fill_missing(series)

    def test_parameter_validation(self):
        series = make_series(n=3)
        with pytest.raises(ConfigError):
            fill_missing(series, max_gap_hours=-1)
        with pytest.raises(ConfigError):
            fill_missing(series, min_length=0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=40),
           st.integers(min_value=0, max_value=5))
    def test_segments_are_finite_contiguous_and_faithful(self, present, max_gap):
        """Whatever the gap pattern, output segments carry no NaN, sit on
        contiguous hourly grids, and keep observed values untouched."""
        if not any(present):
            present[0] = True
        n = len(present)
        series = make_series(n=n, seed=7)
        original = series.values.copy()
        for col, keep in enumerate(present):
            if not keep:
                series.values[:, col] = np.nan
        try:
            segments = fill_missing(series, max_gap_hours=max_gap)
        except MissingAttributeError:
            assert not any(present)
            return

        for seg in segments:
            assert np.isfinite(seg.values).all()
            steps = np.diff([t.timestamp() for t in seg.timestamps])
            assert (steps == 3600.0).all() if seg.length > 1 else True
            for j, stamp in enumerate(seg.timestamps):
                col = int((stamp - T0) / HOUR)
                if present[col]:
                    np.testing.assert_array_equal(seg.values[:, j], original[:, col])

        covered = {
            int((t - T0) / HOUR) for seg in segments for t in seg.timestamps
        }
        assert covered <= set(range(n))
        assert {i for i in range(n) if present[i]} - covered == set() or max_gap >= 0


class TestPartition:
    def test_by_station_and_by_city(self):
        segs = [
            make_series(station="s2", city="south"),
            make_series(station="s1", city="north"),
            make_series(station="s3", city="north"),
            make_series(station="s1", city="north", seed=1),
        ]
        by_station = partition_environments(segs, "by_station")
        assert list(by_station) == ["s1", "s2", "s3"]
        assert len(by_station["s1"]) == 2

        by_city = partition_environments(segs, "by_city")
        assert list(by_city) == ["north", "south"]
        assert len(by_city["north"]) == 3
        assert sum(len(v) for v in by_city.values()) == len(segs)

    def test_unknown_grouping_rejected(self):
        with pytest.raises(ConfigError):
            partition_environments([make_series()], "by_latitude")


class TestRoundTripProperty:
    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(min_value=1, max_value=12),
           seed=st.integers(min_value=0, max_value=10))
    def test_write_then_load_is_identity(self, tmp_path_factory, n, seed):
        rng = np.random.default_rng(seed)
        nan_at = [
            (int(rng.integers(len(ATTRIBUTES))), int(rng.integers(n)))
            for _ in range(int(rng.integers(0, n)))
        ]
        original = make_series(n=n, seed=seed, nan_at=nan_at)
        path = tmp_path_factory.mktemp("roundtrip") / "air.csv"
        write_csv([original], path)
        (loaded,) = load_csv(path)
        np.testing.assert_array_equal(
            np.isnan(loaded.values), np.isnan(original.values)
        )
        mask = ~np.isnan(original.values)
        np.testing.assert_array_equal(loaded.values[mask], original.values[mask])
        assert loaded.timestamps == original.timestamps


def test_series_validation():
    with pytest.raises(ConfigError):
        make_series(station="")
    with pytest.raises(ConfigError):
        LocationSeries("s", "c", 91.0, 0.0, [T0], np.ones((6, 1)))
    with pytest.raises(ConfigError):
        LocationSeries("s", "c", 0.0, 0.0, [T0], np.ones((5, 1)))
    with pytest.raises(ConfigError):
        LocationSeries("s", "c", 0.0, 0.0, [T0, T0 + HOUR], np.ones((6, 1)))
