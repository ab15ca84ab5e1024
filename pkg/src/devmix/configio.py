"""YAML/JSON config parsing and serialization for densities, measures,
families, EM configs and scenarios.

The on-disk schema uses the same key names as the dataclasses; see README
for annotated examples. ``yaml.safe_load`` also accepts JSON, so either
format works for ``--config``.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import yaml

from .errors import InputError
from .estimation import EmConfig
from .known_density import GaussianMixtureH0, KdeH0, KnownDensity, PwlPushforwardH0
from .mixing import Atom, ConstraintClass, MixingMeasure
from .model import DeviatedMixture, FamilyTag

_METRIC_RE = re.compile(r"^w(\d+)_(gstar|gbar|gtilde)$")


def load_config(path) -> dict:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise InputError(f"config {path} must be a mapping")
    return data


def h0_from_dict(spec: dict) -> KnownDensity:
    if not isinstance(spec, dict) or "type" not in spec:
        raise InputError("h0 spec needs a 'type' key")
    kind = spec["type"]
    if kind == "gaussian_mixture":
        return GaussianMixtureH0(spec["weights"], spec["means"], spec["covariances"])
    if kind == "kde":
        return KdeH0(
            np.asarray(spec["centers"], dtype=float),
            float(spec["bandwidth"]),
            spec.get("kernel", "gaussian"),
            nu=float(spec["nu"]) if spec.get("nu") is not None else None,
        )
    if kind == "pwl_pushforward":
        return PwlPushforwardH0(
            spec.get("breakpoints", []),
            spec["slopes"],
            spec["intercepts"],
            require_nonlinear=bool(spec.get("require_nonlinear", True)),
        )
    raise InputError(f"unknown h0 type {kind!r}")


def h0_to_dict(h0: KnownDensity) -> dict:
    if isinstance(h0, GaussianMixtureH0):
        return {
            "type": "gaussian_mixture",
            "weights": h0.weights.tolist(),
            "means": h0.means.tolist(),
            "covariances": h0.covariances.tolist(),
        }
    if isinstance(h0, KdeH0):
        out = {
            "type": "kde",
            "centers": h0.centers.tolist(),
            "bandwidth": h0.bandwidth,
            "kernel": h0.kernel,
        }
        if h0.nu is not None:
            out["nu"] = h0.nu
        return out
    if isinstance(h0, PwlPushforwardH0):
        return {
            "type": "pwl_pushforward",
            "breakpoints": h0.breakpoints.tolist(),
            "slopes": h0.slopes.tolist(),
            "intercepts": h0.intercepts.tolist(),
        }
    raise InputError(f"cannot serialize h0 of type {type(h0).__name__}")


def measure_from_dict(spec: dict) -> MixingMeasure:
    locations = np.asarray(spec["locations"], dtype=float)
    if locations.ndim == 1:
        locations = locations.reshape(-1, 1)
    scales = spec.get("scales")
    atoms = []
    for i, loc in enumerate(locations):
        scale = np.asarray(scales[i], dtype=float) if scales is not None else None
        atoms.append(Atom(loc, scale))
    return MixingMeasure(tuple(atoms), np.asarray(spec["weights"], dtype=float))


def measure_to_dict(G: MixingMeasure) -> dict:
    out = {"weights": G.weights.tolist(), "locations": G.locations().tolist()}
    if G.has_scale:
        out["scales"] = [a.scale.tolist() for a in G.atoms]
    return out


def family_from_dict(spec: dict) -> FamilyTag:
    kind = spec.get("kind")
    if kind == "location":
        return FamilyTag.location(np.asarray(spec["shared_cov"], dtype=float))
    if kind == "location_scale":
        return FamilyTag.location_scale()
    raise InputError(f"unknown family kind {kind!r}")


def family_to_dict(family: FamilyTag) -> dict:
    if family.uses_scale:
        return {"kind": "location_scale"}
    return {"kind": "location", "shared_cov": family.shared_cov.tolist()}


def constraint_from_dict(spec: dict) -> ConstraintClass:
    return ConstraintClass(spec["kind"], int(spec["size"]), spec.get("c0"))


def em_config_from_dict(spec: dict, family: FamilyTag) -> EmConfig:
    kwargs = dict(spec)
    constraint = constraint_from_dict(kwargs.pop("constraint"))
    kwargs.pop("family", None)
    provided = kwargs.pop("provided_init", None)
    if provided is not None:
        provided = (float(provided["lambda"]), measure_from_dict(provided["g"]))
    eig = kwargs.pop("eigen_bounds", None)
    if eig is not None:
        kwargs["eigen_bounds"] = (float(eig[0]), float(eig[1]))
    return EmConfig(constraint=constraint, family=family, provided_init=provided, **kwargs)


def em_config_to_dict(cfg: EmConfig) -> dict:
    out = {
        "constraint": {"kind": cfg.constraint.kind, "size": cfg.constraint.size},
        "max_iterations": cfg.max_iterations,
        "tolerance": cfg.tolerance,
        "restarts": cfg.restarts,
        "lambda_floor": cfg.lambda_floor,
        "mean_box": cfg.mean_box,
        "eigen_bounds": list(cfg.eigen_bounds),
        "init_strategy": cfg.init_strategy,
        "seed": cfg.seed,
    }
    if cfg.constraint.c0 is not None:
        out["constraint"]["c0"] = cfg.constraint.c0
    if cfg.provided_init is not None:
        lam0, G0 = cfg.provided_init
        out["provided_init"] = {"lambda": lam0, "g": measure_to_dict(G0)}
    return out


def parse_metric_name(name: str):
    from .harness import Metric

    if name == "abs_lambda":
        return Metric("abs_lambda")
    if name == "hellinger":
        return Metric("hellinger")
    m = _METRIC_RE.match(name)
    if m:
        kind = {"gstar": "w_gstar", "gbar": "w_gbar", "gtilde": "w_gtilde"}[m.group(2)]
        return Metric(kind, int(m.group(1)))
    raise InputError(f"unknown metric name {name!r}")


def model_from_dict(spec: dict) -> DeviatedMixture:
    h0 = h0_from_dict(spec["h0"])
    family = family_from_dict(spec["family"])
    G = measure_from_dict(spec["g"])
    return DeviatedMixture(h0, float(spec["lambda"]), G, family)


def model_to_dict(model: DeviatedMixture) -> dict:
    return {
        "h0": h0_to_dict(model.h0),
        "lambda": model.lam,
        "g": measure_to_dict(model.G),
        "family": family_to_dict(model.family),
    }


def scenario_from_dict(spec: dict):
    from .harness import ScenarioConfig

    if "scenario" in spec:
        spec = spec["scenario"]
    family = family_from_dict(spec["family"])
    return ScenarioConfig(
        name=str(spec["name"]),
        h0=h0_from_dict(spec["h0"]),
        lambda_star=float(spec["lambda_star"]),
        g_star=measure_from_dict(spec["g_star"]),
        family=family,
        fit=em_config_from_dict(spec["fit"], family),
        n_grid=tuple(int(n) for n in spec["n_grid"]),
        replications=int(spec["replications"]),
        metrics=tuple(parse_metric_name(m) for m in spec["metrics"]),
        master_seed=int(spec["master_seed"]),
    )


def scenario_to_dict(cfg) -> dict:
    return {
        "scenario": {
            "name": cfg.name,
            "h0": h0_to_dict(cfg.h0),
            "lambda_star": cfg.lambda_star,
            "g_star": measure_to_dict(cfg.g_star),
            "family": family_to_dict(cfg.family),
            "fit": em_config_to_dict(cfg.fit),
            "n_grid": list(cfg.n_grid),
            "replications": cfg.replications,
            "metrics": [m.name for m in cfg.metrics],
            "master_seed": cfg.master_seed,
        }
    }


def dump_config(data: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
