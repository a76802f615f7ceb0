"""Run configuration: one strict JSON document drives the whole pipeline.

Unknown keys are rejected everywhere so a typo in a hyperparameter name
fails loudly instead of silently training with defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .distances import ImageDistanceKind
from .embedding import TripletTrainConfig
from .errors import ConfigError, ParameterError
from .generator import GeneratorTrainConfig


@dataclass
class DataPaths:
    images_path: str
    labels_path: str
    test_images_path: str
    test_labels_path: str


@dataclass
class EvalConfig:
    stored_classes: list[int] = field(default_factory=lambda: [1, 2, 3])
    threshold_min: float = 0.0
    threshold_max: float = 4.0
    threshold_count: int = 1000
    attempts: int = 1000
    fraction: float = 0.2
    templates_per_class: int = 10
    pairs_per_class: int = 200
    pca_per_class: int = 300
    sweep_alphas: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.4, 0.8])

    def __post_init__(self):
        if not self.stored_classes:
            raise ConfigError("eval.stored_classes: must be nonempty")
        if not self.threshold_min < self.threshold_max:
            raise ConfigError("eval.threshold_min must be < eval.threshold_max")
        if self.threshold_count < 2:
            raise ConfigError("eval.threshold_count: must be >= 2")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"eval.fraction: must be in (0, 1], got {self.fraction}")
        if self.attempts < 1 or self.templates_per_class < 1 or self.pairs_per_class < 1:
            raise ConfigError("eval counts must be >= 1")


@dataclass
class RunConfig:
    seed: int
    data: DataPaths
    embedding: TripletTrainConfig
    generator: GeneratorTrainConfig
    eval: EvalConfig


_SCHEMA = {
    "": {"seed", "data", "embedding", "generator", "eval"},
    "data": {"images_path", "labels_path", "test_images_path", "test_labels_path"},
    "embedding": {"margin", "learning_rate", "batch_size", "epochs", "triplets_per_epoch"},
    "generator": {
        "alpha", "pi_emb", "distance", "omega", "kappa1", "kappa2",
        "learning_rate", "batch_size", "epochs",
    },
    "eval": {
        "stored_classes", "threshold_min", "threshold_max", "threshold_count",
        "attempts", "fraction", "templates_per_class", "pairs_per_class",
        "pca_per_class", "sweep_alphas",
    },
}


def _section(doc: dict, name: str) -> dict:
    sub = doc.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(sub) - _SCHEMA[name]
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    return sub


def parse_run_config(doc: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _SCHEMA[""]
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    seed = seed_override if seed_override is not None else doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed: expected an integer, got {seed!r}")

    d = _section(doc, "data")
    missing = _SCHEMA["data"] - set(d)
    if missing:
        raise ConfigError(f"data: missing key(s) {sorted(missing)}")
    data = DataPaths(**{k: str(d[k]) for k in _SCHEMA["data"]})

    e = _section(doc, "embedding")
    try:
        embedding = TripletTrainConfig(
            margin=float(e.get("margin", 0.2)),
            learning_rate=float(e.get("learning_rate", 5e-5)),
            batch_size=int(e.get("batch_size", 64)),
            epochs=int(e.get("epochs", 10)),
            triplets_per_epoch=int(e.get("triplets_per_epoch", 30000)),
            seed=seed,
        )
    except (ConfigError, TypeError, ValueError) as exc:
        raise ConfigError(f"embedding: {exc}") from exc

    g = _section(doc, "generator")
    try:
        distance = ImageDistanceKind(
            kind=str(g.get("distance", "l2")),
            omega=float(g.get("omega", 0.5)),
            kappa1=float(g.get("kappa1", 1e-4)),
            kappa2=float(g.get("kappa2", 9e-4)),
        )
        generator = GeneratorTrainConfig(
            alpha=float(g.get("alpha", 0.3)),
            pi_emb=float(g.get("pi_emb", 0.9)),
            distance=distance,
            learning_rate=float(g.get("learning_rate", 1e-4)),
            batch_size=int(g.get("batch_size", 64)),
            epochs=int(g.get("epochs", 20)),
            seed=seed,
        )
    except (ConfigError, ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"generator: {exc}") from exc

    v = _section(doc, "eval")
    try:
        eval_cfg = EvalConfig(
            stored_classes=[int(c) for c in v.get("stored_classes", [1, 2, 3])],
            threshold_min=float(v.get("threshold_min", 0.0)),
            threshold_max=float(v.get("threshold_max", 4.0)),
            threshold_count=int(v.get("threshold_count", 1000)),
            attempts=int(v.get("attempts", 1000)),
            fraction=float(v.get("fraction", 0.2)),
            templates_per_class=int(v.get("templates_per_class", 10)),
            pairs_per_class=int(v.get("pairs_per_class", 200)),
            pca_per_class=int(v.get("pca_per_class", 300)),
            sweep_alphas=[float(a) for a in v.get("sweep_alphas", [0.0, 0.1, 0.2, 0.4, 0.8])],
        )
    except (ConfigError, TypeError, ValueError) as exc:
        raise ConfigError(f"eval: {exc}") from exc

    return RunConfig(seed=seed, data=data, embedding=embedding,
                     generator=generator, eval=eval_cfg)


def load_run_config(path: str, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(doc, seed_override)
