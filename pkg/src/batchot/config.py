"""Run configuration and its ``key = value`` text format.

Lines look like ``learning_rate = 0.01``; blank lines and ``#`` comments are
ignored.  ``lambda`` is accepted as an alias for ``lam``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from batchot.errors import InputError
from batchot.loss import Weighting

LOSSES = ("ot", "contrastive", "triplet")
DATASETS = ("blobs", "mnist")
ALIASES = {"lambda": "lam"}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class RunConfig:
    dataset: str = "blobs"
    # mnist: either a directory with the standard file names or explicit paths
    mnist_dir: str = ""
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    train_limit: int = 0
    test_limit: int = 0
    subset_seed: int = 0
    # blobs
    blob_classes: int = 5
    blob_per_class: int = 200
    blob_dim: int = 10
    blob_sigma: float = 0.08
    blob_seed: int = 0
    test_fraction: float = 0.2
    # model; empty means the dataset default
    layers: str = ""
    loss: str = "ot"
    weighting: str = "optimal_transport"
    batch_size: int = 64
    epochs: int = 30
    lam: float = 0.01
    gamma: float = 10.0
    epsilon: float = 1.0
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    sinkhorn_iterations: int = 20
    stabilized: bool = False
    seed: int = 0
    eval_every: int = 0
    classifier_epochs: int = 500
    classifier_lr: float = 0.5
    record_time: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise InputError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.loss not in LOSSES:
            raise InputError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        try:
            Weighting(self.weighting)
        except ValueError:
            raise InputError(f"unknown weighting {self.weighting!r}") from None
        for name in ("batch_size", "epochs", "sinkhorn_iterations", "classifier_epochs"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        for name in ("lam", "gamma", "epsilon", "learning_rate", "blob_sigma", "classifier_lr"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.eval_every < 0:
            raise InputError("weight_decay and eval_every must be >= 0")
        self.hidden_and_embedding()

    def hidden_and_embedding(self) -> list[int]:
        spec = self.layers or ("256,64" if self.dataset == "mnist" else "32,16")
        try:
            sizes = [int(tok) for tok in spec.split(",") if tok.strip()]
        except ValueError:
            raise InputError(f"layers must be comma-separated integers, got {spec!r}") from None
        if not sizes or min(sizes) < 1:
            raise InputError(f"invalid layers {spec!r}")
        return sizes

    @property
    def resolved_eval_every(self) -> int:
        if self.eval_every:
            return self.eval_every
        return 5 if self.dataset == "mnist" else 1

    def mnist_paths(self) -> dict[str, str]:
        import os

        paths = {}
        for key, default_name in MNIST_FILES.items():
            explicit = getattr(self, f"mnist_{key}")
            if explicit:
                paths[key] = explicit
            elif self.mnist_dir:
                base = os.path.join(self.mnist_dir, default_name)
                paths[key] = base if os.path.exists(base) or not os.path.exists(base + ".gz") else base + ".gz"
            else:
                raise InputError(f"mnist dataset needs --mnist-dir or --mnist-{key.replace('_', '-')}")
        return paths

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def convert_value(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise InputError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in known:
            raise InputError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = convert_value(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (``None`` values skipped)."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[ALIASES.get(key, key)] = value
    return RunConfig(**values)


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
