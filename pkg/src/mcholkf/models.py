"""Toy forecast models bound to a grid geometry.

Three kinds: the standard 40-ish variable chaotic ring model integrated
with RK4, a 2D periodic advection-diffusion field stepped explicitly
(upwind advection, centered diffusion), and an identity model for tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .geometry import GridGeometry
from .validation import as_float_array

MODEL_KINDS = ("lorenz96", "advdiff2d", "identity")


@dataclass(frozen=True)
class ModelHandle:
    """Immutable model description; use propagate() to run it."""

    kind: str
    geometry: GridGeometry
    dt: float = 0.0
    steps_per_window: int = 1
    forcing: float = 8.0
    velocity: tuple[float, float] = (1.0, 0.5)
    diffusivity: float = 0.05


def lorenz96_model(
    geometry: GridGeometry,
    forcing: float = 8.0,
    dt: float = 0.005,
    steps_per_window: int = 10,
) -> ModelHandle:
    if geometry.kind != "ring1d":
        raise ConfigurationError("lorenz96 requires a ring1d geometry")
    if geometry.nx < 4:
        raise ConfigurationError(f"lorenz96 needs at least 4 components, got {geometry.nx}")
    if dt <= 0 or steps_per_window < 1:
        raise ConfigurationError(f"invalid dt={dt} or steps_per_window={steps_per_window}")
    return ModelHandle(
        kind="lorenz96",
        geometry=geometry,
        dt=float(dt),
        steps_per_window=int(steps_per_window),
        forcing=float(forcing),
    )


def advdiff2d_model(
    geometry: GridGeometry,
    velocity: tuple[float, float] = (1.0, 0.5),
    diffusivity: float = 0.05,
    dt: float = 0.05,
    steps_per_window: int = 4,
) -> ModelHandle:
    if geometry.kind != "grid2d":
        raise ConfigurationError("advdiff2d requires a grid2d geometry")
    if dt <= 0 or steps_per_window < 1:
        raise ConfigurationError(f"invalid dt={dt} or steps_per_window={steps_per_window}")
    if diffusivity < 0:
        raise ConfigurationError(f"diffusivity must be nonnegative, got {diffusivity}")
    # Explicit diffusion stability on the unit grid: kappa dt (1/dx^2 + 1/dy^2) <= 1/4.
    margin = diffusivity * dt * 2.0
    if margin > 0.25:
        raise ConfigurationError(
            f"unstable explicit diffusion: kappa*dt*(1/dx^2+1/dy^2) = {margin:.4g} > 0.25"
        )
    return ModelHandle(
        kind="advdiff2d",
        geometry=geometry,
        dt=float(dt),
        steps_per_window=int(steps_per_window),
        velocity=(float(velocity[0]), float(velocity[1])),
        diffusivity=float(diffusivity),
    )


def identity_model(geometry: GridGeometry) -> ModelHandle:
    return ModelHandle(kind="identity", geometry=geometry, dt=1.0, steps_per_window=1)


def _l96_tendency(x: np.ndarray, forcing: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def _rk4_step(x: np.ndarray, dt: float, forcing: float) -> np.ndarray:
    k1 = _l96_tendency(x, forcing)
    k2 = _l96_tendency(x + 0.5 * dt * k1, forcing)
    k3 = _l96_tendency(x + 0.5 * dt * k2, forcing)
    k4 = _l96_tendency(x + dt * k3, forcing)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _to_field(model: ModelHandle, x: np.ndarray) -> np.ndarray:
    g = model.geometry
    if g.ordering == "row_major":
        return x.reshape(g.ny, g.nx)
    return x.reshape(g.nx, g.ny).T


def _from_field(model: ModelHandle, u: np.ndarray) -> np.ndarray:
    g = model.geometry
    if g.ordering == "row_major":
        return u.reshape(-1)
    return u.T.reshape(-1)


def _advdiff_step(model: ModelHandle, u: np.ndarray) -> np.ndarray:
    ux, uy = model.velocity
    dt = model.dt
    if ux >= 0:
        ddx = u - np.roll(u, 1, axis=1)
    else:
        ddx = np.roll(u, -1, axis=1) - u
    if uy >= 0:
        ddy = u - np.roll(u, 1, axis=0)
    else:
        ddy = np.roll(u, -1, axis=0) - u
    lap = (
        np.roll(u, 1, axis=0)
        + np.roll(u, -1, axis=0)
        + np.roll(u, 1, axis=1)
        + np.roll(u, -1, axis=1)
        - 4.0 * u
    )
    return u + dt * (-ux * ddx - uy * ddy + model.diffusivity * lap)


def _window_steps(model: ModelHandle, window: float | None) -> int:
    if window is None:
        return model.steps_per_window
    if window < 0:
        raise ValueError(f"window must be nonnegative, got {window}")
    if model.kind == "identity":
        return 1 if window else 0
    ratio = window / model.dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(
            f"window {window} is not an integer multiple of dt {model.dt}"
        )
    return steps


def propagate(model: ModelHandle, x: np.ndarray, window: float | None = None) -> np.ndarray:
    """Advance one state vector through the model.

    window defaults to the handle's steps_per_window * dt; otherwise it
    must be an integer number of dt steps. Non-finite values abort with
    the offending step index.
    """
    x = as_float_array(x, "x", ndim=1)
    if x.size != model.geometry.nstate:
        raise ValueError(
            f"state has {x.size} entries, geometry has {model.geometry.nstate}"
        )
    steps = _window_steps(model, window)
    if model.kind == "identity" or steps == 0:
        return x.copy()

    # Overflow in a blowing-up trajectory is expected and detected below,
    # so the intermediate warnings carry no information.
    if model.kind == "lorenz96":
        out = x.copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(steps):
                out = _rk4_step(out, model.dt, model.forcing)
                if not np.all(np.isfinite(out)):
                    raise DivergenceError(
                        f"model state diverged at step {k + 1} of {steps}", step=k + 1
                    )
        return out

    u = _to_field(model, x).copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            u = _advdiff_step(model, u)
            if not np.all(np.isfinite(u)):
                raise DivergenceError(
                    f"model state diverged at step {k + 1} of {steps}", step=k + 1
                )
    return _from_field(model, u)
