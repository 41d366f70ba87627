"""Geometric bound on the IU channel error (angle, distance and NLoS uncertainty)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import ArrayGeometry, RfConstants, UserGeometry


@dataclass(frozen=True)
class UncertaintySet:
    per_element_bounds: np.ndarray
    distance_bound: float = 0.0
    pitch_bound: float = 0.0
    azimuth_bound: float = 0.0


@dataclass(frozen=True)
class ElementBoundReport:
    dpsi: np.ndarray
    element_bound: np.ndarray
    s_act: np.ndarray
    s_saf: np.ndarray
    tau: float

    @property
    def area_ratio(self) -> np.ndarray:
        """S_act / S_saf per element, an approximation-quality diagnostic."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.s_saf > 0, self.s_act / self.s_saf, 1.0)


_GRID = [(s, u) for s in (-1, 0, 1) for u in (-1, 0, 1)]


def phase_deviation(theta, phi, pitch_bound, azimuth_bound, n_r, n_c, d_f, lam):
    """Worst phase shift of each element over the angle box.

    Evaluated on the corners, edge midpoints and centre of the box.
    """
    n_r = np.asarray(n_r, dtype=float)
    n_c = np.asarray(n_c, dtype=float)

    def arg(t, p):
        return d_f / lam * (math.sin(t) * math.cos(p) * n_r + math.sin(t) * math.sin(p) * n_c)

    ref = arg(theta, phi)
    worst = np.zeros(np.broadcast(n_r, n_c).shape)
    for s, u in _GRID:
        worst = np.maximum(worst, np.abs(arg(theta + s * pitch_bound, phi + u * azimuth_bound) - ref))
    return 2.0 * math.pi * worst


def region_areas(eps, kappa, dpsi):
    """Actual uncertainty-region area and its circular safe approximation."""
    eps = np.asarray(eps, dtype=float)
    dpsi = np.asarray(dpsi, dtype=float)
    s_act = math.pi * eps ** 2 + 4.0 * math.sqrt(kappa) * eps * dpsi / math.pi
    radius = eps + math.sqrt(2.0 * kappa) * np.sqrt(1.0 - np.cos(dpsi))
    s_saf = math.pi * radius ** 2
    return s_act, s_saf


def element_bound(eps, kappa, dpsi):
    return np.asarray(eps, dtype=float) + math.sqrt(2.0 * kappa) * np.sqrt(1.0 - np.cos(np.asarray(dpsi, dtype=float)))


def aggregate_bound(uset: UncertaintySet, user: UserGeometry, geom: ArrayGeometry, rf: RfConstants):
    """Return (tau_m, report) with tau_m^2 = sum_n element_bound_n^2."""
    n_r, n_c = geom.index_vectors()
    dpsi = phase_deviation(user.pitch, user.azimuth, uset.pitch_bound, uset.azimuth_bound,
                           n_r, n_c, rf.spacing, rf.wavelength)
    eps = np.broadcast_to(np.asarray(uset.per_element_bounds, dtype=float), dpsi.shape)
    bound = element_bound(eps, rf.rician_factor, dpsi)
    s_act, s_saf = region_areas(eps, rf.rician_factor, dpsi)
    tau = float(np.sqrt(np.sum(bound ** 2)))
    return tau, ElementBoundReport(dpsi=dpsi, element_bound=bound, s_act=s_act, s_saf=s_saf, tau=tau)
