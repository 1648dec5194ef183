"""Run-configuration files: a JSON document with dataset / model / train /
eval / output sections. Parsing is strict: unknown keys are rejected and
decode failures report the line number.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .episodes import SyntheticSpec
from .errors import ConfigError
from .training import EvalConfig, ModelConfig, PAPER_CRITIC_WIDTH, TrainConfig

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_EVAL_FIELDS = {f.name for f in dataclasses.fields(EvalConfig)}
_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SyntheticSpec)}


@dataclass
class RunConfig:
    """Everything one experiment needs, as parsed from a config file."""

    dataset_synthetic: SyntheticSpec | None
    dataset_csv: str | None
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    output_dir: str

    def to_dict(self) -> dict:
        dataset = ({"synthetic": dataclasses.asdict(self.dataset_synthetic)}
                   if self.dataset_synthetic is not None else {"csv": self.dataset_csv})
        return {
            "dataset": dataset,
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "eval": dataclasses.asdict(self.eval),
            "output": {"dir": self.output_dir},
        }


def config_fingerprint(doc: dict) -> str:
    """Stable hash of a canonicalized config document."""
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _reject_unknown(section: str, doc: dict, allowed: set[str]) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {section!r}")


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def parse_config(doc: dict) -> RunConfig:
    """Validate a config dict and build the typed configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown("<root>", doc, {"dataset", "model", "train", "eval", "output"})

    dataset = _section(doc, "dataset")
    _reject_unknown("dataset", dataset, {"synthetic", "csv"})
    if "synthetic" in dataset and "csv" in dataset:
        raise ConfigError("dataset section must give either 'synthetic' or 'csv', not both")
    synthetic = None
    csv_path = None
    if "csv" in dataset:
        csv_path = dataset["csv"]
        if not isinstance(csv_path, str):
            raise ConfigError("dataset.csv must be a path string")
    else:
        synth_doc = dataset.get("synthetic", {})
        if not isinstance(synth_doc, dict):
            raise ConfigError("dataset.synthetic must be an object")
        _reject_unknown("dataset.synthetic", synth_doc, _SYNTH_FIELDS)
        try:
            synthetic = SyntheticSpec(**synth_doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from exc

    model_doc = dict(_section(doc, "model"))
    _reject_unknown("model", model_doc, _MODEL_FIELDS)
    if model_doc.get("critic_width") == "paper":
        model_doc["critic_width"] = PAPER_CRITIC_WIDTH
    if "hidden_sizes" in model_doc:
        model_doc["hidden_sizes"] = tuple(model_doc["hidden_sizes"])
    try:
        model = ModelConfig(**model_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc

    train_doc = _section(doc, "train")
    _reject_unknown("train", train_doc, _TRAIN_FIELDS)
    try:
        train = TrainConfig(**train_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    eval_doc = _section(doc, "eval")
    _reject_unknown("eval", eval_doc, _EVAL_FIELDS)
    try:
        eval_cfg = EvalConfig(**eval_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eval: {exc}") from exc

    output = _section(doc, "output")
    _reject_unknown("output", output, {"dir"})
    output_dir = output.get("dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("output.dir must be a path string")

    return RunConfig(
        dataset_synthetic=synthetic,
        dataset_csv=csv_path,
        model=model,
        train=train,
        eval=eval_cfg,
        output_dir=output_dir,
    )


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file; errors carry the line number."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_config(doc)


def synthetic_preset() -> dict:
    """The default desk-scale experiment document (planted 16-d mixture)."""
    return {
        "dataset": {
            "synthetic": {
                "dim": 16,
                "base_classes": 20,
                "novel_classes": 5,
                "relatives_per_novel": 3,
                "cluster_sigma": 0.5,
                "seed": 0,
            }
        },
        "model": {"hidden_sizes": [64], "embed_dim": 32, "activation": "tanh",
                  "critic_width": 64},
        "train": {
            "b_related": 3,
            "window": 10,
            "max_pretrain_epochs": 60,
            "val_episodes": 30,
            "align_iterations": 100,
            "seed": 0,
        },
        "eval": {"n_way": 5, "k_shot": 5, "q_queries": 15, "episodes": 100},
        "output": {"dir": "out"},
    }
