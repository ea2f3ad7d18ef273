"""Domain types and the dipolar-coupling kernel.

Everything downstream (analytic transfer curves, the density-matrix
propagator, powder averaging, fitting) is driven by two scalar functions of
time defined here: the rotor-modulated heteronuclear dipolar coupling d(t)
and its exact running integral, the accumulated dipolar phase phi(t).
Off-resonance spin-lock geometry (effective-field magnitudes and tilt
angles) also lives here because it only rescales d.

Unit convention: all angular frequencies are stored in rad/s, times in
seconds, angles in radians.  User-facing layers (the CLI) convert from
kHz / microseconds / degrees at the boundary.

All functions are pure and all types are immutable; values can be shared
freely across threads or processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Orientation:
    """Euler angles (beta, gamma) of the dipolar tensor in the rotor-fixed frame.

    beta must lie in [0, pi], gamma in [0, 2*pi).  Only two angles are
    needed: the coupling is invariant under the third Euler rotation.
    """

    beta: float
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= math.pi:
            raise ValueError(f"beta must be in [0, pi], got {self.beta}")
        if not 0.0 <= self.gamma < 2.0 * math.pi:
            raise ValueError(f"gamma must be in [0, 2*pi), got {self.gamma}")


@dataclass(frozen=True)
class CouplingParams:
    """Dipolar anisotropy constant d in rad/s.  Negative values are allowed."""

    d: float

    def __post_init__(self):
        if not math.isfinite(self.d):
            raise ValueError(f"coupling constant must be finite, got {self.d}")


@dataclass(frozen=True)
class SpinningParams:
    """Rotor angular frequency omega_r in rad/s.

    omega_r = 0 selects the stationary-sample branch of the dynamics.
    """

    omega_r: float

    def __post_init__(self):
        if not (math.isfinite(self.omega_r) and self.omega_r >= 0.0):
            raise ValueError(f"omega_r must be finite and >= 0, got {self.omega_r}")

    @property
    def rotor_period(self) -> float:
        """2*pi/omega_r in seconds (inf for a stationary sample)."""
        return 2.0 * math.pi / self.omega_r if self.omega_r > 0.0 else math.inf


@dataclass(frozen=True)
class RfScheme:
    """Spin-lock amplitudes and resonance offsets for the I and S channels (rad/s)."""

    omega1_i: float
    omega1_s: float
    offset_i: float = 0.0
    offset_s: float = 0.0

    def __post_init__(self):
        if not (self.omega1_i > 0.0 and self.omega1_s > 0.0):
            raise ValueError("spin-lock amplitudes omega1_i, omega1_s must be > 0")
        for name in ("omega1_i", "omega1_s", "offset_i", "offset_s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class EffectiveField:
    """Effective spin-lock fields: magnitudes (rad/s) and tilt angles from +z (rad).

    On resonance both tilt angles are exactly pi/2 and the magnitudes equal
    the nominal amplitudes.
    """

    omega1_ie: float
    omega1_se: float
    theta_i: float
    theta_s: float

    def __post_init__(self):
        if not (self.omega1_ie > 0.0 and self.omega1_se > 0.0):
            raise ValueError("effective-field magnitudes must be > 0")
        for theta in (self.theta_i, self.theta_s):
            if not 0.0 < theta < math.pi:
                raise ValueError(f"tilt angle must be in (0, pi), got {theta}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_k = k*dt, k = 0 .. n_points-1."""

    dt: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")

    def times(self) -> np.ndarray:
        """Sample times in seconds, shape (n_points,)."""
        return np.arange(self.n_points) * self.dt

    @property
    def duration(self) -> float:
        return (self.n_points - 1) * self.dt


def dipolar_coupling_at(coupling: CouplingParams, orient: Orientation,
                        spin: SpinningParams, t):
    """Rotor-modulated dipolar coupling d(t) in rad/s.

    d(t) = d * [sqrt(2)*sin(2*beta)*cos(omega_r*t + gamma)
                - sin(beta)^2 * cos(2*omega_r*t + 2*gamma)]

    Args:
        t: time in seconds, scalar or ndarray.

    Returns:
        Scalar or ndarray matching ``t``.
    """
    wt = spin.omega_r * np.asarray(t, dtype=float) + orient.gamma
    sin_beta = math.sin(orient.beta)
    c1 = SQRT2 * math.sin(2.0 * orient.beta)
    c2 = sin_beta * sin_beta
    out = coupling.d * (c1 * np.cos(wt) - c2 * np.cos(2.0 * wt))
    return out if np.ndim(t) else float(out)


def dipolar_phase(coupling: CouplingParams, orient: Orientation,
                  spin: SpinningParams, t):
    """Accumulated dipolar phase phi(t) = integral of d(t') from 0 to t, in rad.

    Closed form of the exact antiderivative; for a spinning sample

        phi(t) = d/(2*omega_r) * {2*sqrt(2)*sin(2*beta)*[sin(omega_r*t + gamma) - sin(gamma)]
                                  - sin(beta)^2 * [sin(2*omega_r*t + 2*gamma) - sin(2*gamma)]}

    and for omega_r = 0 the stationary branch phi(t) = d(0)*t is used
    (an explicit branch, not a small-denominator limit).  phi vanishes at
    every integer multiple of the rotor period (rotor echo).

    Args:
        t: time in seconds, scalar or ndarray.
    """
    tt = np.asarray(t, dtype=float)
    if spin.omega_r == 0.0:
        out = dipolar_coupling_at(coupling, orient, spin, 0.0) * tt
        return out if np.ndim(t) else float(out)
    wt = spin.omega_r * tt + orient.gamma
    sin_beta = math.sin(orient.beta)
    c1 = 2.0 * SQRT2 * math.sin(2.0 * orient.beta)
    c2 = sin_beta * sin_beta
    pref = coupling.d / (2.0 * spin.omega_r)
    out = pref * (c1 * (np.sin(wt) - math.sin(orient.gamma))
                  - c2 * (np.sin(2.0 * wt) - math.sin(2.0 * orient.gamma)))
    return out if np.ndim(t) else float(out)


def effective_field(rf: RfScheme) -> EffectiveField:
    """Effective-field magnitudes and tilt angles for both channels.

    omega1_e = sqrt(offset^2 + omega1^2), theta = arccos(offset / omega1_e).
    """
    w_ie = math.hypot(rf.offset_i, rf.omega1_i)
    w_se = math.hypot(rf.offset_s, rf.omega1_s)
    return EffectiveField(
        omega1_ie=w_ie,
        omega1_se=w_se,
        theta_i=math.acos(rf.offset_i / w_ie),
        theta_s=math.acos(rf.offset_s / w_se),
    )


def scaled_coupling(coupling: CouplingParams, eff: EffectiveField) -> CouplingParams:
    """Coupling rescaled by sin(theta_i)*sin(theta_s) for tilted spin locks.

    Only the transfer-driving perpendicular part of the tilted-frame dipolar
    interaction is kept; the parallel part is a small perturbation and is
    dropped.  On resonance the scale factor is exactly 1.
    """
    scale = math.sin(eff.theta_i) * math.sin(eff.theta_s)
    return CouplingParams(d=scale * coupling.d)
