"""Contextual, time-series, and weather stores behind one catalog.

The catalog links a building to its energy series and weather station,
mirroring the deployment picture where a graph store holds context and
relational stores hold the series.  Here everything is a plain in-memory
table with an optional directory layout on disk:

    <root>/schema.txt            column kinds
    <root>/descriptions.csv      building descriptions
    <root>/links.csv             building_id,series_id,station_id
    <root>/energy/<series>.csv   date,value (NA = missing)
    <root>/weather/<station>.csv date,air_temp,solar_irradiance,wind_speed
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metadata import ColumnSchema, DescriptionTable, load_descriptions
from ..timeseries import DailySeries, from_pairs


class StoreError(KeyError):
    """Missing entry or broken link in a store catalog."""

    def __str__(self):  # KeyError quotes its message otherwise
        return self.args[0] if self.args else ""


@dataclass(frozen=True)
class BuildingLink:
    building_id: str
    series_id: str
    station_id: str


class StoreCatalog:
    """Descriptions plus linked daily energy and weather series."""

    def __init__(self, descriptions: DescriptionTable | None = None):
        self.descriptions = descriptions
        self._energy: dict[str, DailySeries] = {}
        self._weather: dict[str, tuple[DailySeries, DailySeries, DailySeries]] = {}
        self._links: dict[str, BuildingLink] = {}

    # -- writes -----------------------------------------------------------
    def put_energy(self, series_id: str, series: DailySeries) -> None:
        self._energy[series_id] = series

    def put_weather(self, station_id: str, channels) -> None:
        channels = tuple(channels)
        if len(channels) != 3:
            raise StoreError(f"station {station_id!r} needs (air_temp, solar, wind) channels")
        self._weather[station_id] = channels

    def link(self, building_id: str, series_id: str, station_id: str) -> None:
        if series_id not in self._energy:
            raise StoreError(f"link for {building_id!r} references unknown series {series_id!r}")
        if station_id not in self._weather:
            raise StoreError(f"link for {building_id!r} references unknown station {station_id!r}")
        self._links[building_id] = BuildingLink(building_id, series_id, station_id)

    # -- reads ------------------------------------------------------------
    def building_ids(self) -> tuple[str, ...]:
        return tuple(self._links)

    def energy_daily(self, building_id: str) -> DailySeries:
        link = self._links.get(building_id)
        if link is None:
            raise StoreError(f"no stored series for building {building_id!r}")
        return self._energy[link.series_id]

    def weather_daily(self, building_id: str):
        link = self._links.get(building_id)
        if link is None:
            raise StoreError(f"no stored weather for building {building_id!r}")
        return self._weather[link.station_id]

    def station_ids(self) -> tuple[str, ...]:
        return tuple(self._weather)

    # -- persistence ------------------------------------------------------
    def save(self, root) -> None:
        root = Path(root)
        (root / "energy").mkdir(parents=True, exist_ok=True)
        (root / "weather").mkdir(parents=True, exist_ok=True)
        if self.descriptions is not None:
            self.descriptions.schema.to_file(root / "schema.txt")
            _write_descriptions(root / "descriptions.csv", self.descriptions)
        with (root / "links.csv").open("w", encoding="utf-8", newline="") as fh:
            fh.write("building_id,series_id,station_id\n")
            for link in self._links.values():
                fh.write(f"{link.building_id},{link.series_id},{link.station_id}\n")
        for series_id, series in self._energy.items():
            series.write_csv(root / "energy" / f"{series_id}.csv")
        for station_id, channels in self._weather.items():
            _write_weather(root / "weather" / f"{station_id}.csv", channels)

    @classmethod
    def load(cls, root) -> "StoreCatalog":
        root = Path(root)
        if not root.exists():
            raise StoreError(f"store root not found: {root}")
        descriptions = None
        if (root / "descriptions.csv").exists():
            schema = ColumnSchema.from_file(root / "schema.txt")
            descriptions = load_descriptions(root / "descriptions.csv", schema)
        catalog = cls(descriptions)
        for path in sorted((root / "energy").glob("*.csv")):
            catalog.put_energy(path.stem, DailySeries.read_csv(path, unit="watts"))
        for path in sorted((root / "weather").glob("*.csv")):
            catalog.put_weather(path.stem, _read_weather(path))
        links_path = root / "links.csv"
        if links_path.exists():
            with links_path.open(encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                next(reader, None)
                for row in reader:
                    if len(row) >= 3:
                        catalog.link(row[0], row[1], row[2])
        return catalog


def _write_descriptions(path, table: DescriptionTable) -> None:
    names = table.schema.names
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("building_id", *names)) + "\n")
        for row in table.rows:
            cells = [row.building_id]
            for name in names:
                v = row.values.get(name)
                if v is None:
                    cells.append("NA")
                elif isinstance(v, float) and v == int(v):
                    cells.append(str(int(v)))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def _write_weather(path, channels) -> None:
    temp, solar, wind = channels
    start = min(c.start for c in channels)
    end = max(c.end for c in channels)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("date,air_temp,solar_irradiance,wind_speed\n")
        day = start
        while day <= end:
            cells = [day.isoformat()]
            for c in channels:
                sliced = c.slice(day, day)
                v = sliced.values[0] if len(sliced) else float("nan")
                cells.append("NA" if not np.isfinite(v) else repr(float(v)))
            fh.write(",".join(cells) + "\n")
            day += dt.timedelta(days=1)


def _read_weather(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            day = dt.date.fromisoformat(row[0])
            vals = [float("nan") if c == "NA" else float(c) for c in row[1:4]]
            rows.append((day, vals))
    if not rows:
        raise StoreError(f"{path}: empty weather file")
    sid = Path(path).stem
    channels = []
    for k in range(3):
        channels.append(from_pairs(sid, [(day, vals[k]) for day, vals in rows]))
    return tuple(channels)
