"""Monte Carlo populations of cells with Gaussian threshold-voltage mismatch.

Each cell carries four signed deviations (volts), one per inverter transistor
T0..T3, added to the threshold magnitude of the matching device type.  Draws
are keyed by (master_seed, cell id), so any population is reproducible and
independent of generation order; see :mod:`srampuf.rng`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .device import TechnologyProfile, profile_from_dict, profile_to_dict
from .errors import ParameterDomainError

_MAX_RESAMPLE_ATTEMPTS = 128


@dataclass(frozen=True)
class CellSample:
    """One Monte Carlo cell instance: per-transistor vth deviations."""

    id: int
    dvth: tuple[float, float, float, float]

    def mirrored(self) -> "CellSample":
        """The left/right swapped twin (T0<->T1, T2<->T3)."""
        d = self.dvth
        return CellSample(id=self.id, dvth=(d[1], d[0], d[3], d[2]))


@dataclass(frozen=True)
class Population:
    profile: TechnologyProfile
    cells: tuple[CellSample, ...]
    master_seed: int

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def dvth_matrix(self) -> np.ndarray:
        """(n, 4) array of deviations in cell-id order."""
        return np.array([c.dvth for c in self.cells], dtype=np.float64)


def delta_n(cell: CellSample) -> float:
    """NMOS-pair threshold difference, T1 minus T0."""
    return cell.dvth[1] - cell.dvth[0]


def delta_p(cell: CellSample) -> float:
    """PMOS-pair threshold magnitude difference, T3 minus T2."""
    return cell.dvth[3] - cell.dvth[2]


def sample_population(profile: TechnologyProfile, n: int, master_seed: int) -> Population:
    """Draw ``n`` cells with independent N(0, sigma) deviations per transistor.

    A draw that would push any |vth| to zero or below is resampled from the
    same cell's stream (deterministically), so the returned population never
    contains a destroyed device.
    """
    if n < 1:
        raise ParameterDomainError("population size must be >= 1")
    keys = rng.stream_key(master_seed, rng.PURPOSE_SAMPLING, cell_id=np.arange(n))
    keys = np.atleast_1d(keys)
    sigma = np.array([profile.sigma_vth_nmos, profile.sigma_vth_nmos,
                      profile.sigma_vth_pmos, profile.sigma_vth_pmos])
    vth_floor = np.array([profile.nmos.vth_nominal, profile.nmos.vth_nominal,
                          profile.pmos.vth_nominal, profile.pmos.vth_nominal])
    d = np.empty((n, 4))
    pending = np.arange(n)
    for attempt in range(_MAX_RESAMPLE_ATTEMPTS):
        counters = 4 * attempt + np.arange(4)
        d[pending] = rng.normal(keys[pending, None], counters[None, :]) * sigma
        bad = np.any(vth_floor + d[pending] <= 0.0, axis=1)
        pending = pending[bad]
        if pending.size == 0:
            break
    else:
        raise ParameterDomainError(
            "could not sample valid deviations; sigma is too large for vth_nominal")
    cells = tuple(CellSample(id=i, dvth=tuple(float(v) for v in d[i])) for i in range(n))
    return Population(profile=profile, cells=cells, master_seed=master_seed)


def population_to_csv(pop: Population, csv_path, manifest_path=None) -> None:
    """Write cells as id,dvth0..3 plus a JSON sidecar with seed and profile."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "dvth0", "dvth1", "dvth2", "dvth3"])
        for c in pop.cells:
            w.writerow([c.id] + [f"{v:.9g}" for v in c.dvth])
    if manifest_path is not None:
        manifest = {"master_seed": pop.master_seed, "n_cells": len(pop.cells),
                    "profile": profile_to_dict(pop.profile)}
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def population_from_csv(csv_path, manifest_path) -> Population:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    profile = profile_from_dict(manifest["profile"])
    cells = []
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cells.append(CellSample(
                id=int(row["id"]),
                dvth=tuple(float(row[f"dvth{i}"]) for i in range(4)),
            ))
    cells.sort(key=lambda c: c.id)
    if [c.id for c in cells] != list(range(len(cells))):
        raise ParameterDomainError(f"cell ids in {csv_path} are not 0..n-1")
    return Population(profile=profile, cells=tuple(cells),
                      master_seed=int(manifest["master_seed"]))
