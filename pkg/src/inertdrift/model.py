"""Model constants, state records and the closed-form interior dynamics.

Between contacts (gap > 0) the local time is frozen, so the velocity relaxes
deterministically toward ``-g/gamma``.  The helpers here expose that motion and
the constants of the regeneration scheme built around the renewal point
``(0, -g/(1+gamma))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class ModelParams:
    """Viscosity ``gamma`` (1/time) and gravity ``g`` (velocity/time).

    ``gamma_zero_mode`` runs the inviscid model, where ``gamma`` must be 0.
    """

    gamma: float = 1.0
    g: float = 1.0
    gamma_zero_mode: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.g) and self.g > 0):
            raise ValueError(f"g must be positive, got {self.g}")
        if self.gamma_zero_mode:
            if self.gamma != 0:
                raise ValueError("gamma_zero_mode requires gamma == 0")
        elif not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @classmethod
    def inviscid(cls, g: float = 1.0) -> "ModelParams":
        return cls(0.0, g, True)

    @property
    def velocity_floor(self) -> float:
        """Infimum of reachable velocities (-inf without viscosity)."""
        return -math.inf if self.gamma_zero_mode else -self.g / self.gamma

    @property
    def renewal_v(self) -> float:
        return -self.g / (1.0 + self.gamma)

    @property
    def drift_rate(self) -> float:
        """Long-run speed of both particles."""
        return -self.g / (1.0 + self.gamma)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "g": self.g, "gamma_zero_mode": self.gamma_zero_mode}


@dataclass(frozen=True)
class SystemState:
    """Augmented state of one path: gap ``h = s - x``, velocity, positions,
    driving noise ``b`` and accumulated local time ``l``."""

    t: float
    h: float
    v: float
    s: float
    x: float
    b: float
    l: float

    @classmethod
    def initial(cls, h: float, v: float) -> "SystemState":
        """Start at time 0 with the inert particle at the origin."""
        return cls(0.0, float(h), float(v), 0.0, -float(h), 0.0, 0.0)

    def validate(self, params: ModelParams) -> None:
        vals = (self.t, self.h, self.v, self.s, self.x, self.b, self.l)
        if not all(math.isfinite(u) for u in vals):
            raise ValueError("state contains non-finite values")
        if self.h < 0:
            raise ValueError(f"gap must be nonnegative, got {self.h}")
        if self.l < 0:
            raise ValueError("local time must be nonnegative")
        if not params.gamma_zero_mode and self.v <= params.velocity_floor:
            raise ValueError(f"velocity {self.v} at or below floor {params.velocity_floor}")

    def with_time(self, t: float) -> "SystemState":
        return replace(self, t=t)


@dataclass(frozen=True)
class RenewalConfig:
    a: float
    b: float
    renewal_v: float
    boundary_tol: float = 1e-9

    def __post_init__(self):
        if not self.a < self.renewal_v < self.b < 0:
            raise ValueError("renewal levels must satisfy a < renewal_v < b < 0")
        if not self.boundary_tol > 0:
            raise ValueError("boundary_tol must be positive")

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "renewal_v": self.renewal_v,
                "boundary_tol": self.boundary_tol}


def derive_renewal_config(params: ModelParams, boundary_tol: float = 1e-9) -> RenewalConfig:
    """Levels a < -g/(1+gamma) < b whose crossings arm the renewal detector."""
    if params.gamma_zero_mode:
        raise ValueError("renewal constants are undefined without viscosity")
    gam, g = params.gamma, params.g
    a = -(g + g / (2 * gam)) / (1 + gam)
    b = -(g - g / (2 * (1 + gam))) / (1 + gam)
    cfg = RenewalConfig(a, b, -g / (1 + gam), boundary_tol)
    if not -g / gam < cfg.a:
        raise ValueError("level a fell below the velocity floor")
    return cfg


def interior_velocity(params: ModelParams, v0: float, dt: float) -> float:
    """Velocity after ``dt`` units without boundary contact."""
    if params.gamma_zero_mode:
        return v0 - params.g * dt
    floor = params.g / params.gamma
    if math.isinf(dt) and dt > 0:
        return -floor
    return (v0 + floor) * math.exp(-params.gamma * dt) - floor


def interior_hitting_time(params: ModelParams, v0: float, a_level: float) -> float:
    """Time for the contact-free velocity to fall from ``v0`` to ``a_level``."""
    if params.gamma_zero_mode:
        if not a_level < v0:
            raise ValueError("a_level must lie below v0")
        return (v0 - a_level) / params.g
    floor = params.g / params.gamma
    if a_level <= -floor:
        raise ValueError(f"a_level must exceed the velocity floor {-floor}")
    if a_level >= v0:
        raise ValueError("a_level must lie below v0")
    return math.log((v0 + floor) / (a_level + floor)) / params.gamma
