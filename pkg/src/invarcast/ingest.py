"""Hourly air-quality CSV ingestion.

Input files are long-format CSV with the exact header

    station_id,city,latitude,longitude,timestamp_utc,pm25,pm10,no2,co,o3,so2

one row per station per hour, RFC 3339 timestamps, and empty pollutant
fields for missing readings. Loading groups rows by station, checks
metadata consistency, sorts by time, and reports every malformed row with
its line number. ``fill_missing`` then regularizes a station onto a strict
hourly grid: short gaps are forward-filled, longer gaps split the station
into segments, and segments too short to window are dropped with a warning.
``partition_environments`` groups the resulting segments into named
environments by station or by city.

The stdlib ``csv`` module does the parsing precisely because it keeps the
row structure dumb enough that line numbers stay meaningful in errors.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .exceptions import ConfigError, IngestError, MissingAttributeError, SchemaError

__all__ = [
    "ATTRIBUTES",
    "CSV_HEADER",
    "LocationSeries",
    "load_csv",
    "write_csv",
    "fill_missing",
    "partition_environments",
]

ATTRIBUTES = ("pm25", "pm10", "no2", "co", "o3", "so2")
CSV_HEADER = ("station_id", "city", "latitude", "longitude", "timestamp_utc") + ATTRIBUTES

_HOUR = timedelta(hours=1)


@dataclass
class LocationSeries:
    """One station's hourly readings: ``values`` is (6, T) aligned with
    ``timestamps`` (timezone-aware UTC datetimes, strictly increasing)."""

    station_id: str
    city: str
    latitude: float
    longitude: float
    timestamps: list[datetime]
    values: np.ndarray

    def __post_init__(self):
        if not self.station_id:
            raise ConfigError("station_id must be non-empty")
        if not (-90.0 <= self.latitude <= 90.0):
            raise ConfigError(f"latitude {self.latitude} out of range")
        if not (-180.0 <= self.longitude <= 180.0):
            raise ConfigError(f"longitude {self.longitude} out of range")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(ATTRIBUTES):
            raise ConfigError(
                f"values must be ({len(ATTRIBUTES)}, T), got {self.values.shape}"
            )
        if self.values.shape[1] != len(self.timestamps):
            raise ConfigError("values and timestamps disagree on length")

    @property
    def length(self) -> int:
        return self.values.shape[1]


def _parse_timestamp(raw: str, where: str) -> datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(text)
    except ValueError:
        raise IngestError(f"{where}: bad RFC 3339 timestamp {raw!r}") from None
    if stamp.tzinfo is None:
        raise IngestError(f"{where}: timestamp {raw!r} lacks a UTC offset")
    return stamp.astimezone(timezone.utc)


def _parse_float(raw: str, what: str, where: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise IngestError(f"{where}: bad {what} {raw!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"{where}: {what} must be finite, got {raw!r}")
    return value


def load_csv(path) -> list[LocationSeries]:
    """Read one long-format file into per-station series, sorted by id.

    Missing pollutant readings come back as NaN; every structural problem
    raises IngestError naming ``path:line``.
    """
    stations: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: file is empty")
        if tuple(header) != CSV_HEADER:
            raise SchemaError(
                f"{path}: header {header} does not match {','.join(CSV_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            if len(row) != len(CSV_HEADER):
                raise IngestError(
                    f"{where}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            station_id, city = row[0].strip(), row[1].strip()
            if not station_id:
                raise IngestError(f"{where}: empty station_id")
            if not city:
                raise IngestError(f"{where}: empty city")
            lat = _parse_float(row[2], "latitude", where)
            lon = _parse_float(row[3], "longitude", where)
            if not (-90.0 <= lat <= 90.0):
                raise IngestError(f"{where}: latitude {lat} out of range [-90, 90]")
            if not (-180.0 <= lon <= 180.0):
                raise IngestError(f"{where}: longitude {lon} out of range [-180, 180]")
            stamp = _parse_timestamp(row[4], where)
            readings = [
                math.nan if cell.strip() == "" else _parse_float(cell, name, where)
                for name, cell in zip(ATTRIBUTES, row[5:])
            ]
            entry = stations.setdefault(
                station_id,
                {"city": city, "lat": lat, "lon": lon, "rows": {}, "first_line": lineno},
            )
            if (entry["city"], entry["lat"], entry["lon"]) != (city, lat, lon):
                raise IngestError(
                    f"{where}: station {station_id!r} metadata conflicts with "
                    f"line {entry['first_line']}"
                )
            if stamp in entry["rows"]:
                raise IngestError(
                    f"{where}: duplicate timestamp {row[4]!r} for station {station_id!r}"
                )
            entry["rows"][stamp] = readings

    out = []
    for station_id in sorted(stations):
        entry = stations[station_id]
        stamps = sorted(entry["rows"])
        values = np.array([entry["rows"][s] for s in stamps]).T
        out.append(LocationSeries(
            station_id=station_id,
            city=entry["city"],
            latitude=entry["lat"],
            longitude=entry["lon"],
            timestamps=stamps,
            values=values,
        ))
    return out


def _format_timestamp(stamp: datetime) -> str:
    return stamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_csv(series_list, path) -> None:
    """Write stations back to the long format; NaN becomes an empty field."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for series in series_list:
            for i, stamp in enumerate(series.timestamps):
                cells = [
                    "" if math.isnan(v) else repr(float(v))
                    for v in series.values[:, i]
                ]
                writer.writerow([
                    series.station_id, series.city,
                    repr(float(series.latitude)), repr(float(series.longitude)),
                    _format_timestamp(stamp),
                ] + cells)


def _forward_fill_row(row: np.ndarray, max_run: int) -> None:
    """In-place forward fill of NaN runs no longer than ``max_run``."""
    n = row.shape[0]
    i = 0
    while i < n:
        if not math.isnan(row[i]):
            i += 1
            continue
        start = i
        while i < n and math.isnan(row[i]):
            i += 1
        run = i - start
        if start > 0 and run <= max_run:
            row[start:i] = row[start - 1]


def fill_missing(series: LocationSeries, max_gap_hours: int = 6,
                 min_length: int = 1) -> list[LocationSeries]:
    """Regularize one station onto an hourly grid and split long gaps.

    Missing hours (absent rows or empty fields) are forward-filled when the
    gap is at most ``max_gap_hours``; longer gaps split the station into
    segments. Segments shorter than ``min_length`` are dropped with a
    warning. An attribute with no usable reading at all raises
    MissingAttributeError.
    """
    if max_gap_hours < 0:
        raise ConfigError(f"max_gap_hours must be >= 0, got {max_gap_hours}")
    if min_length < 1:
        raise ConfigError(f"min_length must be >= 1, got {min_length}")
    for name, row in zip(ATTRIBUTES, series.values):
        if np.isnan(row).all():
            raise MissingAttributeError(
                f"station {series.station_id!r}: attribute {name!r} has no usable values"
            )

    first, last = series.timestamps[0], series.timestamps[-1]
    span = last - first
    if span.total_seconds() % 3600 != 0:
        raise IngestError(
            f"station {series.station_id!r}: timestamps are not hour-aligned"
        )
    n = int(span / _HOUR) + 1
    grid = np.full((len(ATTRIBUTES), n), np.nan)
    for i, stamp in enumerate(series.timestamps):
        offset = stamp - first
        if offset.total_seconds() % 3600 != 0:
            raise IngestError(
                f"station {series.station_id!r}: timestamp {stamp.isoformat()} "
                "is not on the hourly grid"
            )
        grid[:, int(offset / _HOUR)] = series.values[:, i]

    for row in grid:
        _forward_fill_row(row, max_gap_hours)

    finite = np.isfinite(grid).all(axis=0)
    segments: list[LocationSeries] = []
    i = 0
    while i < n:
        if not finite[i]:
            i += 1
            continue
        start = i
        while i < n and finite[i]:
            i += 1
        length = i - start
        if length < min_length:
            warnings.warn(
                f"station {series.station_id!r}: dropping segment of {length} "
                f"hour(s) starting {(first + start * _HOUR).isoformat()} "
                f"(shorter than {min_length})",
                stacklevel=2,
            )
            continue
        segments.append(LocationSeries(
            station_id=series.station_id,
            city=series.city,
            latitude=series.latitude,
            longitude=series.longitude,
            timestamps=[first + (start + j) * _HOUR for j in range(length)],
            values=grid[:, start:i].copy(),
        ))
    return segments


def partition_environments(series_list, grouping: str) -> dict[str, list[LocationSeries]]:
    """Group segments into environments by station id or by city.

    Returns a dict with sorted keys; every input segment lands in exactly
    one environment.
    """
    if grouping not in ("by_station", "by_city"):
        raise ConfigError(f"grouping must be 'by_station' or 'by_city', got {grouping!r}")
    key = (lambda s: s.station_id) if grouping == "by_station" else (lambda s: s.city)
    groups: dict[str, list[LocationSeries]] = {}
    for series in series_list:
        groups.setdefault(key(series), []).append(series)
    return {k: groups[k] for k in sorted(groups)}
