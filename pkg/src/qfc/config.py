"""Experiment configuration: JSON schemas, validation, fingerprints.

Every CLI output embeds the configuration fingerprint (a stable hash of
the canonicalized JSON), the master seed, and the toolkit version, so that
reruns are byte-identical and artifacts can be matched to the run that
produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .control import CostSpec, cost_from_json, cost_to_json
from .errors import ConfigError
from .filtering import ModelSpec
from .operators import operator_from_json, operator_to_json

__all__ = [
    "canonical_json",
    "fingerprint",
    "model_to_json",
    "model_from_json",
    "model_fingerprint",
    "cost_fingerprint",
    "ExperimentConfig",
    "default_scenario_config",
]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    """Stable 16-hex-digit hash of a canonicalized JSON-able object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def model_to_json(model: ModelSpec) -> dict:
    return {
        "dim": model.dim,
        "H0": operator_to_json(model.hamiltonian),
        "V": [operator_to_json(V) for V in model.controls],
        "R": [operator_to_json(R) for R in model.dissipators],
        "L": operator_to_json(model.coupling),
        "u_max": model.u_max.tolist(),
        "convention": model.convention,
    }


def model_from_json(obj: dict) -> ModelSpec:
    try:
        return ModelSpec(
            dim=int(obj["dim"]),
            hamiltonian=operator_from_json(obj["H0"]),
            controls=tuple(operator_from_json(V) for V in obj.get("V", [])),
            coupling=operator_from_json(obj["L"]),
            dissipators=tuple(operator_from_json(R) for R in obj.get("R", [])),
            u_max=np.asarray(obj["u_max"], dtype=float) if "u_max" in obj else None,
            convention=obj.get("convention", "operator"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid model specification: {exc}") from exc


def model_fingerprint(model: ModelSpec) -> str:
    return fingerprint(model_to_json(model))


def cost_fingerprint(cost: CostSpec) -> str:
    return fingerprint(cost_to_json(cost))


@dataclass
class ExperimentConfig:
    """Validated experiment description loaded from JSON."""

    model: ModelSpec
    cost: CostSpec
    grid_n: int
    grid_dt: Optional[float]       # None -> CFL-derived
    grid_store_slices: int
    sim_t0: float
    sim_T: float
    sim_dt: float
    n_traj: int
    master_seed: int
    rho0_bloch: np.ndarray
    out_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    @classmethod
    def from_json(cls, obj: dict, out_dir: str = "out") -> "ExperimentConfig":
        for section in ("model", "cost", "sim"):
            if section not in obj:
                raise ConfigError(f"config is missing the '{section}' section")
        model = model_from_json(obj["model"])
        cost_obj = obj["cost"]
        for key in ("g", "C0", "S"):
            if key not in cost_obj:
                raise ConfigError(f"cost specification is missing '{key}'")
        try:
            cost, box = cost_from_json(cost_obj)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid cost specification: {exc}") from exc
        if box is not None and not np.allclose(box, model.u_max):
            raise ConfigError("cost u_max disagrees with the model control box")
        if cost.n_controls != model.n_controls:
            raise ConfigError("cost and model disagree on the number of controls")
        grid = obj.get("grid", {})
        grid_n = int(grid.get("N", 41))
        if grid_n < 3 or grid_n % 2 == 0:
            raise ConfigError("grid N must be an odd integer >= 3")
        grid_dt = grid.get("dt_pde")
        grid_dt = None if grid_dt is None else float(grid_dt)
        store = int(grid.get("store_slices", 33))
        sim = obj["sim"]
        try:
            t0 = float(sim.get("t0", 0.0))
            T = float(sim["T"])
            dt = float(sim["dt"])
            n_traj = int(sim.get("N_traj", 2))
            seed = int(sim.get("master_seed", 0))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid sim section: {exc}") from exc
        if T <= t0 or dt <= 0:
            raise ConfigError("need sim.T > sim.t0 and sim.dt > 0")
        if n_traj < 1:
            raise ConfigError("sim.N_traj must be >= 1")
        if seed < 0:
            raise ConfigError("sim.master_seed must be non-negative")
        rho0 = np.asarray(obj.get("start", {}).get("bloch", [0.0, 0.0, 0.0]),
                          dtype=float)
        if rho0.shape != (3,) or np.linalg.norm(rho0) > 1.0 + 1e-9:
            raise ConfigError("start.bloch must be a 3-vector inside the unit ball")
        return cls(model=model, cost=cost, grid_n=grid_n, grid_dt=grid_dt,
                   grid_store_slices=store, sim_t0=t0, sim_T=T, sim_dt=dt,
                   n_traj=n_traj, master_seed=seed, rho0_bloch=rho0,
                   out_dir=out_dir, raw=obj)

    @classmethod
    def load(cls, path, out_dir: str = "out") -> "ExperimentConfig":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(obj, out_dir=out_dir)

    def output_stamp(self) -> dict:
        """Common provenance block embedded in every artifact."""
        return {
            "fingerprint": self.fingerprint,
            "master_seed": self.master_seed,
            "version": __version__,
        }


def default_scenario_config(n_traj: int = 2000, master_seed: int = 2024,
                            grid_n: int = 41) -> dict:
    """The controlled-qubit benchmark scenario as a config JSON object.

    kappa = 1 dephasing measurement, full Hamiltonian control with cost
    (1/2)|u|^2, terminal cost (1/2)(1 - z), start at p0 = (0.6, 0, 0).
    """
    kappa = 1.0
    eye = np.eye(2)
    sx = [[0.0, 1.0], [1.0, 0.0]]
    sy_im = [[0.0, -1.0], [1.0, 0.0]]
    sz = [[1.0, 0.0], [0.0, -1.0]]
    zero2 = np.zeros((2, 2))

    def op(re, im=None):
        return {"dim": 2, "re": np.asarray(re, dtype=float).tolist(),
                "im": np.asarray(im if im is not None else zero2,
                                 dtype=float).tolist()}

    return {
        "model": {
            "dim": 2,
            "H0": op(zero2),
            "V": [op(0.5 * np.asarray(sx)),
                  op(zero2, 0.5 * np.asarray(sy_im)),
                  op(0.5 * np.asarray(sz))],
            "R": [],
            "L": op(0.5 * kappa * np.asarray(sz)),
            "u_max": [10.0, 10.0, 10.0],
            "convention": "operator",
        },
        "cost": {
            "g": np.eye(3).tolist(),
            "F": [op(zero2), op(zero2), op(zero2)],
            "C0": op(zero2),
            "S": op(0.5 * (eye - np.asarray(sz))),
        },
        "grid": {"N": grid_n, "dt_pde": None, "store_slices": 33},
        "sim": {"t0": 0.0, "T": 1.0, "dt": 1e-3, "N_traj": n_traj,
                "master_seed": master_seed},
        "start": {"bloch": [0.6, 0.0, 0.0]},
    }
