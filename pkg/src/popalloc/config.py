"""TOML run configuration: schema validation and construction of model objects."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .allocation import design_moments, optimal_cdr, optimal_cir
from .exceptions import ConfigError
from .model import (
    CIR,
    LinkFunction,
    MixtureLaw,
    OutcomeModel,
    PostStratify,
    law_from_dict,
)
from .simulate import StudyConfig

_NUM = {"type": "number"}
_TRIPLE = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}


def _table(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_LAW = _table({
    "w1": _table({"mu": _NUM, "sigma": _NUM, "lower": _NUM, "upper": _NUM},
                 ["mu", "sigma", "lower", "upper"]),
    "w2": _NUM,
}, ["w1", "w2"])
_ARM = _table({"mean": _TRIPLE, "log_variance": _TRIPLE}, ["mean"])

SCHEMA = _table({
    "trial": _LAW,
    "outcome": _table({"family": {"enum": ["normal", "bernoulli"]}, "arm1": _ARM, "arm0": _ARM},
                      ["arm1", "arm0"]),
    "targets": _table({
        "transport": _LAW,
        "generalize": _table({"mixture_weight": _NUM}),
        "poststrat": _table({"cutpoint": _NUM,
                             "weights": {"type": "array", "items": _NUM, "minItems": 4,
                                         "maxItems": 4}}, ["cutpoint", "weights"]),
    }),
    "design": _table({
        "link": {"enum": ["identity", "log", "logit"]},
        "gamma": _NUM,
        "grid_points": {"type": "integer", "minimum": 2},
        "quadrature_order": {"type": "integer", "minimum": 1},
    }),
    "study": _table({
        "n": {"type": "integer", "minimum": 2},
        "n_star": {"type": "integer", "minimum": 1},
        "replications": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "oracle_nuisances": {"type": "boolean"},
        "reference": {"type": "string"},
        "designs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    }),
    "estimate": _table({
        "trial": {"type": "string"},
        "target": {"type": "string"},
        "generalization": {"type": "string"},
        "weights": {"type": "string"},
        "link": {"enum": ["identity", "log", "logit"]},
        "outcome_family": {"enum": ["gaussian", "binomial"]},
    }),
}, ["trial", "outcome"])

DEFAULT_DESIGNS = ["pi=0.5", "pi_opt[trial]", "pi_opt[transport]", "pi_opt[generalize]",
                   "pi_opt[poststrat]", "p_opt"]


def bundled_config_path() -> Path:
    return Path(str(resources.files("popalloc") / "data" / "baseline.toml"))


@dataclass
class RunConfig:
    """Validated configuration document plus provenance."""

    doc: dict
    path: Path | None = None
    sha256: str = ""
    base_dir: Path = field(default_factory=Path.cwd)

    # -- model objects --------------------------------------------------
    @property
    def trial(self):
        return law_from_dict(self.doc["trial"])

    @property
    def outcome(self) -> OutcomeModel:
        return OutcomeModel.from_dict(self.doc["outcome"])

    @property
    def link(self) -> LinkFunction:
        return LinkFunction.from_name(self.doc.get("design", {}).get("link", "identity"))

    @property
    def gamma(self) -> float:
        return float(self.doc.get("design", {}).get("gamma", 0.5))

    @property
    def order(self) -> int:
        return int(self.doc.get("design", {}).get("quadrature_order", 64))

    @property
    def grid_points(self) -> int:
        return int(self.doc.get("design", {}).get("grid_points", 81))

    @property
    def transport_law(self):
        t = self.doc.get("targets", {}).get("transport")
        return None if t is None else law_from_dict(t)

    def strata(self, weights=None) -> PostStratify | None:
        ps = self.doc.get("targets", {}).get("poststrat")
        if ps is None:
            return None
        return PostStratify.quadrants(ps["cutpoint"], weights if weights is not None else ps["weights"])

    def targets(self) -> dict:
        from .model import Generalize, Transport, Trial

        out = {"trial": Trial()}
        tr = self.transport_law
        if tr is not None:
            out["transport"] = Transport(tr)
            gen = self.doc["targets"].get("generalize")
            if gen is not None:
                lam = float(gen.get("mixture_weight", 0.5))
                out["generalize"] = Generalize(MixtureLaw(self.trial, tr, lam), lam)
        strata = self.strata()
        if strata is not None:
            out["poststrat"] = strata
        return out

    def design(self, label: str):
        """Parse ``pi=<x>``, ``pi_opt[<target>]`` or ``p_opt``."""
        if m := re.fullmatch(r"pi=([0-9.eE+-]+)", label):
            return CIR(float(m.group(1)))
        if m := re.fullmatch(r"pi_opt\[(\w+)\]", label):
            targets = self.targets()
            if m.group(1) not in targets:
                raise ConfigError(f"design {label!r} names unknown target; have {sorted(targets)}")
            moments = design_moments(self.trial, targets[m.group(1)], self.outcome, self.order)
            return CIR(optimal_cir(moments, self.link))
        if label == "p_opt":
            moments = None
            if self.link.name != "identity":
                moments = design_moments(self.trial, self.targets()["trial"], self.outcome, self.order)
            return optimal_cdr(self.outcome, self.link, moments)
        raise ConfigError(f"cannot parse design label {label!r}")

    def designs(self) -> dict:
        labels = self.doc.get("study", {}).get("designs", DEFAULT_DESIGNS)
        return {label: self.design(label) for label in labels}

    def study(self, replications=None, seed=None, oracle=None) -> StudyConfig:
        st = self.doc.get("study", {})
        if self.transport_law is None or self.strata() is None:
            raise ConfigError("a study needs [targets.transport] and [targets.poststrat]")
        return StudyConfig(
            trial=self.trial,
            outcome=self.outcome,
            transport_law=self.transport_law,
            strata=self.strata(),
            designs=self.designs(),
            mixture_weight=float(self.doc["targets"].get("generalize", {}).get("mixture_weight", 0.5)),
            n=int(st.get("n", 250)),
            n_star=int(st.get("n_star", 250)),
            replications=int(replications if replications is not None else st.get("replications", 5000)),
            master_seed=int(seed if seed is not None else st.get("master_seed", 0)),
            oracle=bool(oracle if oracle is not None else st.get("oracle_nuisances", False)),
            reference=st.get("reference"),
        )

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path=None) -> RunConfig:
    """Read and validate a TOML configuration (the bundled one when ``path`` is None)."""
    path = Path(path) if path is not None else bundled_config_path()
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = tomllib.loads(raw.decode())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    validate(doc, str(path))
    return RunConfig(doc, path, hashlib.sha256(raw).hexdigest(), path.parent)


def validate(doc: dict, where: str = "config") -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: e.path)
    if errors:
        e = errors[0]
        key = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: at key '{key}': {e.message}")
