"""Rank source buildings by contextual similarity and assemble their data.

A target building with no operational history is matched against the
source fleet purely on its key-value description: the sources' encoding
pipeline is fitted once, the target is pushed through it, and a single
O(n) distance pass ranks the candidates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import timeseries as ts
from .metadata import (
    BuildingDescription,
    DescriptionEncoder,
    DescriptionTable,
    MetadataError,
    id_sort_key,
)

log = logging.getLogger(__name__)


class SelectionError(ValueError):
    """Bad selection rule or unusable source data."""


@dataclass(frozen=True)
class TopK:
    k: int


@dataclass(frozen=True)
class WithinDistance:
    limit: float


@dataclass(frozen=True)
class SelectionResult:
    """Sources ordered by ascending distance to the target description."""

    entries: tuple[tuple[str, float], ...]
    encoding: str
    rule: str
    parameter: float

    def __post_init__(self):
        dists = [d for _, d in self.entries]
        if dists != sorted(dists):
            raise SelectionError("selection distances must be non-decreasing")
        ids = [b for b, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise SelectionError("duplicate building in selection result")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(b for b, _ in self.entries)


def select_sources(
    target: BuildingDescription,
    sources: DescriptionTable,
    rule: TopK | WithinDistance = TopK(3),
    encoding: str = "onehot",
) -> SelectionResult:
    """Encode target and sources through one fitted pipeline and rank by distance.

    Ties are broken by ascending building id.  With the one-hot pipeline a
    target attribute value absent from the sources contributes its whole
    indicator block as distance mass instead of failing.
    """
    if not sources.rows:
        raise SelectionError("source table is empty")
    if isinstance(rule, TopK) and rule.k <= 0:
        raise SelectionError(f"k must be positive, got {rule.k}")
    if isinstance(rule, WithinDistance) and rule.limit < 0:
        raise SelectionError(f"distance limit must be non-negative, got {rule.limit}")

    encoder = DescriptionEncoder(encoding=encoding).fit(sources)
    source_matrix = encoder.transform_table(sources).values
    target_vec = encoder.transform_row(target)

    diffs = source_matrix - target_vec[None, :]
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))  # one O(n) pass

    ranked = sorted(
        zip(sources.ids, dists.tolist()), key=lambda e: (e[1], id_sort_key(e[0]))
    )
    if isinstance(rule, TopK):
        picked = ranked[: min(rule.k, len(ranked))]
        rule_name, parameter = "top_k", float(rule.k)
    else:
        picked = [(b, d) for b, d in ranked if d <= rule.limit]
        rule_name, parameter = "threshold", float(rule.limit)
    return SelectionResult(tuple(picked), encoding, rule_name, parameter)


def assemble_training_set(
    selected: SelectionResult,
    store,
    train_range: tuple | None = None,
    stats_mode: str = "global",
    clip: bool = False,
) -> ts.SequenceDataset:
    """Window every selected building's series and concatenate them.

    ``store`` must expose ``energy_daily(building_id)`` and
    ``weather_daily(building_id)`` (the workflow StoreCatalog does).  By
    default one normalization is fitted over the union of the selected
    sources so the combined windows share a scale; ``stats_mode="per-building"``
    fits each building separately instead.
    """
    if stats_mode not in ("global", "per-building"):
        raise SelectionError(f"unknown stats_mode {stats_mode!r}")
    if not selected.entries:
        raise SelectionError("selection result contains no buildings")

    series = {}
    warnings = []
    for bid in selected.ids:
        try:
            energy = store.energy_daily(bid)
            weather = store.weather_daily(bid)
        except LookupError as exc:
            warnings.append(f"dropped {bid}: {exc}")
            log.warning("dropped %s: %s", bid, exc)
            continue
        if train_range is not None:
            start, end = train_range
            energy = energy.slice(start, end)
            weather = tuple(w.slice(start, end) for w in weather)
        series[bid] = (energy, weather)
    if not series:
        raise SelectionError(
            "no selected building has stored series data: " + "; ".join(warnings)
        )

    def _fit(targets: dict) -> ts.NormStats:
        pools = {"consumption": [e for e, _ in targets.values()]}
        for k, ch in enumerate(ts.WEATHER_CHANNELS):
            pools[ch] = [w[k] for _, w in targets.values()]
        return ts.fit_minmax(pools, clip=clip)

    global_stats = _fit(series) if stats_mode == "global" else None

    parts = []
    for bid in series:
        energy, weather = series[bid]
        try:
            stats = global_stats if global_stats is not None else _fit({bid: series[bid]})
            part = ts.build_windows(energy, weather, stats, building_id=bid)
        except ts.SeriesError as exc:
            warnings.append(f"dropped {bid}: {exc}")
            log.warning("dropped %s: %s", bid, exc)
            continue
        if len(part) == 0:
            warnings.append(f"dropped {bid}: no valid training windows")
            log.warning("dropped %s: no valid training windows", bid)
            continue
        parts.append(part)
    if not parts:
        raise SelectionError(
            "no selected building produced any training window: " + "; ".join(warnings)
        )
    combined = ts.concat_datasets(parts)
    if warnings:
        combined = ts.SequenceDataset(
            combined.inputs,
            combined.targets,
            combined.stats,
            combined.window_ids,
            combined.start_dates,
            combined.notes + tuple(warnings),
        )
    return combined
