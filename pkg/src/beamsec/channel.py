"""Steering vectors, path loss, nominal channels and random realizations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scenario import ArrayGeometry, RfConstants, UserGeometry


@dataclass(frozen=True)
class ChannelEstimate:
    """Nominal channel plus the attached error models.

    For LUs ``nominal`` is the physical channel, ``radius`` and ``sigma`` are
    physical amplitudes (normalized value times the path loss). For IUs
    ``nominal`` is the unit-free LoS part sqrt(kappa)*a and ``path_loss`` is
    the factor lambda/(4 pi d)/sqrt(1+kappa) that multiplies it.
    """
    nominal: np.ndarray
    path_loss: float
    kind: str
    user: UserGeometry
    radius: float = 0.0
    sigma: float = 0.0
    element_bounds: Optional[np.ndarray] = None
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    rf: RfConstants = field(default_factory=RfConstants)

    @property
    def covariance_diag(self) -> np.ndarray:
        """Diagonal of the Gaussian error covariance (3-sigma embedding)."""
        if self.kind == "LU":
            return np.full(self.nominal.size, self.sigma ** 2)
        return (np.asarray(self.element_bounds) / 3.0) ** 2


@dataclass(frozen=True)
class SensingChannel:
    c: np.ndarray
    b: complex
    reflection_var: float


@dataclass(frozen=True)
class TmaTiming:
    tau: np.ndarray
    t_on: np.ndarray


def upa_steering(theta, phi, geom: ArrayGeometry, d_f: float, lam: float) -> np.ndarray:
    """UPA response, entry (n_r, n_c) = exp(-j 2 pi (delta_r n_r + delta_c n_c))."""
    n_r, n_c = geom.index_vectors()
    dr = d_f * math.sin(theta) * math.cos(phi) / lam
    dc = d_f * math.sin(theta) * math.sin(phi) / lam
    return np.exp(-2j * np.pi * (dr * n_r + dc * n_c))


def steering_batch(theta, phi, geom: ArrayGeometry, d_f: float, lam: float) -> np.ndarray:
    """Vectorized steering vectors; returns shape theta.shape + (N,)."""
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    n_r, n_c = geom.index_vectors()
    dr = d_f * np.sin(theta) * np.cos(phi) / lam
    dc = d_f * np.sin(theta) * np.sin(phi) / lam
    return np.exp(-2j * np.pi * (dr * n_r + dc * n_c))


def path_loss(d: float, lam: float) -> float:
    if not d > 0:
        raise ValueError("distance must be positive")
    return lam / (4.0 * math.pi * d)


def _user_steering(user: UserGeometry, rf: RfConstants, geom: ArrayGeometry) -> np.ndarray:
    return upa_steering(user.pitch, user.azimuth, geom, rf.spacing, rf.wavelength)


def lu_nominal_channel(user: UserGeometry, rf: RfConstants, geom: ArrayGeometry, rng_seed,
                       radius: float = 0.1, sigma: Optional[float] = None) -> ChannelEstimate:
    """Rician LU channel with a frozen NLoS draw.

    ``radius`` and ``sigma`` are given relative to the path loss (the same
    normalization as the error bounds in the configuration).
    """
    xi = path_loss(user.distance, rf.wavelength)
    a = _user_steering(user, rf, geom)
    kappa = rf.rician_factor
    rng = np.random.default_rng(rng_seed)
    nlos = (rng.standard_normal(geom.n) + 1j * rng.standard_normal(geom.n)) / math.sqrt(2.0)
    if math.isinf(kappa):
        h = a.astype(complex)
    else:
        h = math.sqrt(kappa / (kappa + 1.0)) * a + math.sqrt(1.0 / (kappa + 1.0)) * nlos
    sigma = radius / 3.0 if sigma is None else sigma
    return ChannelEstimate(nominal=xi * h, path_loss=xi, kind="LU", user=user,
                           radius=radius * xi, sigma=sigma * xi, array=geom, rf=rf)


def iu_nominal_channel(user: UserGeometry, rf: RfConstants, geom: ArrayGeometry,
                       element_bounds=None) -> ChannelEstimate:
    kappa = rf.rician_factor
    a = _user_steering(user, rf, geom)
    g = math.sqrt(kappa) * a
    scale = path_loss(user.distance, rf.wavelength) / math.sqrt(1.0 + kappa)
    if element_bounds is None:
        element_bounds = np.zeros(geom.n)
    return ChannelEstimate(nominal=g, path_loss=scale, kind="IU", user=user,
                           element_bounds=np.broadcast_to(np.asarray(element_bounds, float), (geom.n,)).copy(),
                           array=geom, rf=rf)


def reflection_variance(d: float, rf: RfConstants) -> float:
    return rf.rcs * rf.wavelength ** 2 / ((4.0 * math.pi) ** 3 * d ** 4)


def sensing_channel(user: UserGeometry, rf: RfConstants, geom: ArrayGeometry) -> SensingChannel:
    a = _user_steering(user, rf, geom)
    b = complex(np.exp(-2j * np.pi * user.distance / rf.wavelength))
    return SensingChannel(c=b * np.conj(a), b=b, reflection_var=reflection_variance(user.distance, rf))


def _cn(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_lu_realization(est: ChannelEstimate, sigma_he: float, rng, size=None) -> np.ndarray:
    """nominal + CN(0, sigma_he^2 I); ``size`` draws give shape (size, N)."""
    shape = est.nominal.shape if size is None else (size,) + est.nominal.shape
    if sigma_he == 0:
        return np.broadcast_to(est.nominal, shape).copy()
    return est.nominal + _cn(rng, shape, sigma_he)


def sample_iu_deviation(est: ChannelEstimate, uset, rng, size: int, composition: str = "gaussian"):
    """Draw IU uncertainty; returns (distances, dtheta, dphi, delta_g).

    Distance and angle errors are uniform within their bounds. With
    ``composition="gaussian"`` the small-scale deviation delta_g is drawn
    per element from CN(0, (b_n/3)^2) truncated to |delta_g_n| <= b_n, where
    b_n is the aggregate element bound stored on ``est`` (angle effect
    included); this is the model the outage constraints are written for.
    With ``composition="physical"`` delta_g is the angle-induced LoS change
    plus a truncated NLoS term with the raw per-element bounds of ``uset``.
    """
    u = est.user
    rf, geom = est.rf, est.array
    kappa = rf.rician_factor
    dd = rng.uniform(-uset.distance_bound, uset.distance_bound, size)
    dt = rng.uniform(-uset.pitch_bound, uset.pitch_bound, size)
    dp = rng.uniform(-uset.azimuth_bound, uset.azimuth_bound, size)
    if composition == "gaussian":
        agg = est.element_bounds if est.element_bounds is not None else uset.per_element_bounds
        bounds = np.broadcast_to(np.asarray(agg, dtype=float), (geom.n,))
    elif composition == "physical":
        bounds = np.broadcast_to(np.asarray(uset.per_element_bounds, dtype=float), (geom.n,))
    else:
        raise ValueError(f"unknown composition {composition!r}")
    nlos = _cn(rng, (size, geom.n)) * (bounds / 3.0)
    # truncate to the per-element bounds by redrawing the offending entries
    bad = np.abs(nlos) > bounds
    while np.any(bad):
        fresh = _cn(rng, (size, geom.n)) * (bounds / 3.0)
        nlos = np.where(bad, fresh, nlos)
        bad = np.abs(nlos) > bounds
    if composition == "gaussian":
        return u.distance + dd, dt, dp, nlos
    a = steering_batch(u.pitch + dt, u.azimuth + dp, geom, rf.spacing, rf.wavelength)
    delta = math.sqrt(kappa) * a - est.nominal + nlos
    return u.distance + dd, dt, dp, delta


def sample_iu_realization(est: ChannelEstimate, uset, rng, size=None, composition: str = "gaussian") -> np.ndarray:
    """Physical IU channel(s) assembled from a random point of the uncertainty set."""
    n = 1 if size is None else size
    d, _, _, delta = sample_iu_deviation(est, uset, rng, n, composition)
    kappa = est.rf.rician_factor
    scale = est.rf.wavelength / (4.0 * math.pi * d) / math.sqrt(1.0 + kappa)
    g = scale[:, None] * (est.nominal + delta)
    return g[0] if size is None else g


def tma_timing(amplitudes, phases, a_max: float, t_p: float) -> TmaTiming:
    """Map element amplitudes/phases to TMA on-durations and switch-on times."""
    amp = np.asarray(amplitudes, dtype=float)
    ph = np.asarray(phases, dtype=float)
    if np.any(amp < 0) or np.any(amp > a_max * (1 + 1e-12)):
        raise ValueError("infeasible amplitude: require 0 <= A_n <= A_max")
    tau = t_p / math.pi * np.arcsin(np.clip(amp / a_max, 0.0, 1.0))
    t_on = np.mod(-t_p * ph / (2.0 * math.pi) - tau / 2.0, t_p)
    t_on = np.where(np.isclose(t_on, t_p), 0.0, t_on)
    return TmaTiming(tau=tau, t_on=t_on)
