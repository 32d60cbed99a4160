"""Two-layer stacked SVM: partition-trained members and an output-layer SVM.

The training set is shuffled and cut into ``n_members + 1`` disjoint parts.
Member ``i`` is an RBF SVM trained on part ``i``; every member then scores
the held-out last part, and the resulting vectors of speech probabilities
(one column per member) train the output-layer SVM.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, SingleClassPartition, TooFewRows, VadError
from .features import LabeledDataset
from .svm import GridSpec, SvmHyperparams, SvmModel, grid_search, hyperparams_dict, train_svm

log = logging.getLogger(__name__)

ENSEMBLE_VERSION = 1
HpChoice = Union[SvmHyperparams, str]


@dataclass
class EnsembleConfig:
    n_members: int = 5
    member_hp: HpChoice = "grid"
    meta_hp: HpChoice = "grid"
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    meta_grid: GridSpec | None = None  # None: same as ``grid``
    per_member_grid: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.n_members < 1:
            raise InvalidConfig("need at least one ensemble member")
        for hp in (self.member_hp, self.meta_hp):
            if isinstance(hp, str) and hp != "grid":
                raise InvalidConfig(f"hyperparameters must be SvmHyperparams or 'grid', got {hp!r}")

    @property
    def n_partitions(self) -> int:
        return self.n_members + 1

    def to_dict(self) -> dict:
        def hp(h):
            return h if isinstance(h, str) else hyperparams_dict(h)
        meta_grid = self.meta_grid or self.grid
        return {
            "n_members": self.n_members,
            "n_partitions": self.n_partitions,
            "member_hp": hp(self.member_hp),
            "meta_hp": hp(self.meta_hp),
            "seed": self.seed,
            "grid": {"c_values": list(self.grid.c_values),
                     "gamma_values": list(self.grid.gamma_values),
                     "folds": self.grid.folds},
            "meta_grid": {"c_values": list(meta_grid.c_values),
                          "gamma_values": list(meta_grid.gamma_values),
                          "folds": meta_grid.folds},
            "per_member_grid": self.per_member_grid,
        }


@dataclass
class EnsembleModel:
    members: list[SvmModel]
    meta: SvmModel
    config: dict = field(default_factory=dict)

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def meta_features(self, x) -> np.ndarray:
        return meta_features(self.members, x)

    def predict_proba(self, x):
        return self.meta.predict_proba(meta_features(self.members, x))

    def predict(self, x):
        p = np.asarray(self.predict_proba(x))
        lab = np.where(p >= 0.5, 1, -1)
        return int(lab) if lab.ndim == 0 else lab

    def to_dict(self) -> dict:
        return {
            "version": ENSEMBLE_VERSION,
            "kind": "ensemble",
            "layers": 2,
            "n_members": self.n_members,
            "seed": self.config.get("seed"),
            "config": self.config,
            "members": [m.to_dict() for m in self.members],
            "meta": self.meta.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleModel:
        if d.get("version") != ENSEMBLE_VERSION:
            raise InvalidConfig(f"unsupported ensemble version {d.get('version')!r}")
        if d.get("layers", 2) != 2:
            raise InvalidConfig("only two-layer stacks are supported")
        members = [SvmModel.from_dict(m) for m in d["members"]]
        meta = SvmModel.from_dict(d["meta"])
        if meta.dim != len(members) or d["n_members"] != len(members):
            raise InvalidConfig("meta model input dimension does not match member count")
        return cls(members, meta, d.get("config", {}))


def partition(data: LabeledDataset, n_parts: int, seed: int) -> list[LabeledDataset]:
    """Seeded shuffle, then contiguous split; earlier parts absorb the remainder."""
    n = len(data)
    if n_parts < 1 or n < n_parts:
        raise TooFewRows(f"cannot split {n} rows into {n_parts} parts")
    perm = np.random.default_rng(seed).permutation(n)
    base, rem = divmod(n, n_parts)
    sizes = [base + (1 if k < rem else 0) for k in range(n_parts)]
    bounds = np.cumsum([0] + sizes)
    parts = []
    for k in range(n_parts):
        part = data.subset(perm[bounds[k]:bounds[k + 1]])
        if np.unique(part.labels).size < 2:
            raise SingleClassPartition(f"partition {k} contains a single class")
        parts.append(part)
    return parts


def meta_features(members: list[SvmModel], x) -> np.ndarray:
    """Speech probability from each member, in member order (one column per member)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != members[0].dim:
        raise DimensionMismatch(f"members expect {members[0].dim} features, got {x.shape[-1]}")
    cols = [np.atleast_1d(m.predict_proba(x)) for m in members]
    z = np.stack(cols, axis=-1)
    return z[0] if x.ndim == 1 else z


def predict(ens: EnsembleModel, x) -> tuple[float, int]:
    p = float(ens.predict_proba(np.asarray(x, dtype=np.float64).reshape(-1)))
    return p, (1 if p >= 0.5 else -1)


def _train_member(args):
    index, part, hp, grid, grid_seed = args
    try:
        if hp == "grid":
            hp, _ = grid_search(part, grid, grid_seed)
        return train_svm(part, hp)
    except VadError as exc:
        raise type(exc)(f"ensemble member {index}: {exc}") from exc


def train_members(parts: list[LabeledDataset], cfg: EnsembleConfig) -> list[SvmModel]:
    """Train one member per part; members are independent so may run in parallel."""
    hp = cfg.member_hp
    if hp == "grid" and not cfg.per_member_grid:
        hp, acc = grid_search(parts[0], cfg.grid, cfg.seed)
        log.info("shared member hyperparameters C=%g gamma=%g (cv %.4f)", hp.C, hp.gamma, acc)
    jobs = [(i, p, hp, cfg.grid, cfg.seed ^ i) for i, p in enumerate(parts)]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_train_member, jobs))
    return [_train_member(j) for j in jobs]


def train_meta(members: list[SvmModel], held_out: LabeledDataset, cfg: EnsembleConfig) -> SvmModel:
    z = meta_features(members, held_out.vectors)
    data = (z, held_out.labels)
    hp = cfg.meta_hp
    if hp == "grid":
        hp, acc = grid_search(data, cfg.meta_grid or cfg.grid, cfg.seed)
        log.info("output-layer hyperparameters C=%g gamma=%g (cv %.4f)", hp.C, hp.gamma, acc)
    return train_svm(data, hp)


def train_ensemble(data: LabeledDataset, cfg: EnsembleConfig = EnsembleConfig()) -> EnsembleModel:
    parts = partition(data, cfg.n_partitions, cfg.seed)
    members = train_members(parts[:cfg.n_members], cfg)
    meta = train_meta(members, parts[-1], cfg)
    return EnsembleModel(members, meta, cfg.to_dict())


@dataclass
class SweepRow:
    n_members: int
    accuracy: float
    member_accuracies: list[float]

    @property
    def mean_member_accuracy(self) -> float:
        return float(np.mean(self.member_accuracies))


def sweep(data: LabeledDataset, test: LabeledDataset, n_max: int,
          cfg: EnsembleConfig = EnsembleConfig()) -> list[SweepRow]:
    """Ensemble accuracy on ``test`` for member counts 1..n_max.

    The data is split once into ``n_max + 1`` parts with the config seed.
    Ensemble ``n`` uses members trained on parts ``0..n-1`` and an output
    layer trained on the last part, so every size shares the same members
    and the same held-out part.
    """
    parts = partition(data, n_max + 1, cfg.seed)
    members = train_members(parts[:n_max], cfg)
    member_acc = [float(np.mean(m.predict(test.vectors) == test.labels)) for m in members]
    rows = []
    for n in range(1, n_max + 1):
        meta = train_meta(members[:n], parts[-1], cfg)
        ens = EnsembleModel(members[:n], meta)
        acc = float(np.mean(ens.predict(test.vectors) == test.labels))
        rows.append(SweepRow(n, acc, member_acc[:n]))
    return rows


def save_ensemble(path, ens: EnsembleModel, meta: dict | None = None) -> None:
    d = ens.to_dict()
    if meta:
        d["meta_info"] = meta
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n", encoding="utf-8")


def load_ensemble(path) -> EnsembleModel:
    return EnsembleModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
