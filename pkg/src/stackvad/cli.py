"""Command-line driver: synth / extract / grid-search / train / sweep / eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver hit its
iteration cap.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .audio_io import FrameSpec
from .ensemble import (EnsembleConfig, EnsembleModel, save_ensemble, sweep, train_ensemble)
from .errors import DataError, IterationLimit, VadError
from .features import (GateConfig, LabeledDataset, MfccConfig, config_dict, extract_dataset,
                       load_features, read_manifest, save_features, silent_mask)
from .metrics import evaluate, write_report, write_roc_csv
from .nn import MlpConfig, MlpModel, save_mlp, train_mlp
from .svm import GridSpec, SvmHyperparams, SvmModel, grid_search, hyperparams_dict, train_svm
from .synth import SynthSpec, generate_corpus

log = logging.getLogger("stackvad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    frame: FrameSpec = field(default_factory=FrameSpec)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    threshold: float | None = None
    n_members: int = 5
    member_hp: SvmHyperparams | str = "grid"
    meta_hp: SvmHyperparams | str = "grid"
    svm_hp: SvmHyperparams | str = "grid"
    grid: GridSpec = field(default_factory=GridSpec)
    nn: MlpConfig = field(default_factory=MlpConfig)

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(n_members=self.n_members, member_hp=self.member_hp,
                              meta_hp=self.meta_hp, seed=self.seed, grid=self.grid,
                              jobs=self.jobs)


def _only(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    return d


def _hp(value, section: str):
    if value == "grid":
        return "grid"
    if isinstance(value, dict):
        return SvmHyperparams(**_only(SvmHyperparams, value, section))
    raise ValueError(f"[{section}] must be a table of hyperparameters or \"grid\"")


def load_config(path: str | None) -> RunConfig:
    """Read a TOML file with optional tables: frame, mfcc, gate, svm, ensemble, grid, nn."""
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if "seed" in raw:
        cfg.seed = int(raw["seed"])
    if "jobs" in raw:
        cfg.jobs = int(raw["jobs"])
    if "frame" in raw:
        cfg.frame = FrameSpec(**_only(FrameSpec, raw["frame"], "frame"))
    if "mfcc" in raw:
        cfg.mfcc = MfccConfig(**_only(MfccConfig, raw["mfcc"], "mfcc"))
    if "threshold" in raw.get("gate", {}):
        cfg.threshold = float(raw["gate"]["threshold"])
    if "svm" in raw:
        cfg.svm_hp = _hp(raw["svm"], "svm")
    ens = raw.get("ensemble", {})
    if "n_members" in ens:
        cfg.n_members = int(ens["n_members"])
    if "member" in ens:
        cfg.member_hp = _hp(ens["member"], "ensemble.member")
    if "meta" in ens:
        cfg.meta_hp = _hp(ens["meta"], "ensemble.meta")
    if "grid" in raw:
        g = _only(GridSpec, raw["grid"], "grid")
        cfg.grid = GridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in g.items()})
    if "nn" in raw:
        n = _only(MlpConfig, raw["nn"], "nn")
        if "layer_sizes" in n:
            n["layer_sizes"] = tuple(n["layer_sizes"])
        cfg.nn = MlpConfig(**n)
    return cfg


def _echo(cfg: RunConfig) -> dict:
    def hp(h):
        return h if isinstance(h, str) else hyperparams_dict(h)
    nn = asdict(cfg.nn)
    nn["layer_sizes"] = list(nn["layer_sizes"])
    return {
        "seed": cfg.seed,
        **config_dict(cfg.frame, cfg.mfcc),
        "threshold": cfg.threshold,
        "n_members": cfg.n_members,
        "member_hp": hp(cfg.member_hp),
        "meta_hp": hp(cfg.meta_hp),
        "svm_hp": hp(cfg.svm_hp),
        "grid": {"c_values": list(cfg.grid.c_values),
                 "gamma_values": list(cfg.grid.gamma_values), "folds": cfg.grid.folds},
        "nn": nn,
    }


def _settings(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    if getattr(args, "n_members", None) is not None:
        cfg.n_members = args.n_members
    if getattr(args, "epochs", None) is not None:
        cfg.nn = MlpConfig(**{**asdict(cfg.nn), "epochs": args.epochs})
    if getattr(args, "no_standardize", False):
        cfg.nn = MlpConfig(**{**asdict(cfg.nn), "standardize": False})
    cfg.nn = MlpConfig(**{**asdict(cfg.nn), "seed": cfg.seed})
    return cfg


def _load_features(path) -> tuple[LabeledDataset, dict]:
    try:
        return load_features(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    kind = d.get("kind", "svm")
    if kind == "ensemble":
        return EnsembleModel.from_dict(d), d
    if kind == "nn":
        return MlpModel.from_dict(d), d
    return SvmModel.from_dict(d), d


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(args.n_speech, args.n_nonspeech, args.duration, args.rate, args.seed)
    manifest = generate_corpus(args.out, spec)
    print(f"wrote {spec.n_speech + spec.n_nonspeech} clips and {manifest}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _settings(args)
    rows = []
    for m in args.manifest:
        try:
            rows.extend(read_manifest(m))
        except OSError as exc:
            raise DataError(f"{m}: {exc.strerror or exc}") from exc
    gate = None if cfg.threshold is None else GateConfig(cfg.threshold)
    data, gate = extract_dataset(rows, cfg.frame, cfg.mfcc, gate,
                                 drop_silent=not args.keep_silent, jobs=cfg.jobs)
    meta = {
        "config": _echo(cfg),
        "seed": cfg.seed,
        "gate_threshold": gate.energy_threshold,
        "drop_silent": not args.keep_silent,
    }
    save_features(args.out, data, meta)
    counts = data.class_counts()
    print(f"speech={counts['speech']} nonspeech={counts['nonspeech']} total={len(data)} "
          f"gate_threshold={gate.energy_threshold:.6g}")
    return EXIT_OK


def _subsample(data: LabeledDataset, max_rows: int | None, seed: int) -> LabeledDataset:
    if max_rows is None or len(data) <= max_rows:
        return data
    idx = np.sort(np.random.default_rng(seed).choice(len(data), max_rows, replace=False))
    return data.subset(idx)


def cmd_grid_search(args) -> int:
    cfg = _settings(args)
    data, _ = _load_features(args.features)
    data = _subsample(data, args.max_rows, cfg.seed)
    hp, acc = grid_search(data, cfg.grid, cfg.seed, jobs=cfg.jobs)
    result = {"C": hp.C, "gamma": hp.gamma, "cv_accuracy": acc, "folds": cfg.grid.folds,
              "seed": cfg.seed}
    if args.out:
        _write_json(args.out, result)
    print(f"C={hp.C:g} gamma={hp.gamma:g} cv_accuracy={acc:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _settings(args)
    data, fmeta = _load_features(args.features)
    info = {"config": _echo(cfg), "seed": cfg.seed, "features": fmeta,
            "gate_threshold": cfg.threshold if cfg.threshold is not None
            else fmeta.get("gate_threshold")}
    unconverged = []
    if args.kind == "ensemble":
        ens = train_ensemble(data, cfg.ensemble_config())
        unconverged = [i for i, m in enumerate(ens.members + [ens.meta]) if not m.converged]
        save_ensemble(args.out, ens, info)
        desc = f"ensemble of {ens.n_members} members"
    elif args.kind == "svm":
        data = _subsample(data, args.max_rows, cfg.seed)
        hp = cfg.svm_hp
        if hp == "grid":
            hp, _ = grid_search(data, cfg.grid, cfg.seed, jobs=cfg.jobs)
        model = train_svm(data, hp)
        unconverged = [] if model.converged else [0]
        _write_json(args.out, {**model.to_dict(), "kind": "svm", "meta_info": info})
        desc = f"svm with {model.support_vectors.shape[0]} support vectors"
    else:
        model = train_mlp(data, cfg.nn)
        save_mlp(args.out, model, info)
        desc = f"network trained for {cfg.nn.epochs} epochs"
    print(f"wrote {args.out}: {desc}")
    if unconverged:
        raise IterationLimit(f"model(s) {unconverged} stopped at the iteration cap")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _settings(args)
    train, _ = _load_features(args.features)
    test, _ = _load_features(args.eval_features)
    rows = sweep(train, test, cfg.n_members, cfg.ensemble_config())
    out = args.out or args.report
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_members", "accuracy", "mean_member_accuracy", "member_accuracies", "seed"])
        for r in rows:
            w.writerow([r.n_members, repr(r.accuracy), repr(r.mean_member_accuracy),
                        ";".join(repr(a) for a in r.member_accuracies), cfg.seed])
    for r in rows:
        print(f"n={r.n_members} accuracy={r.accuracy:.4f} "
              f"mean_member={r.mean_member_accuracy:.4f}")
    return EXIT_OK


def score_frames(model, vectors: np.ndarray) -> np.ndarray:
    """Speech probability per row for any of the three model kinds."""
    if vectors.shape[0] == 0:
        return np.empty(0)
    return np.atleast_1d(np.asarray(model.predict_proba(vectors), dtype=np.float64))


def cmd_eval(args) -> int:
    model, raw = load_model(args.model)
    data, fmeta = _load_features(args.features)
    if data.dim != model.dim:
        raise DataError(f"model expects {model.dim} features, file has {data.dim}")
    threshold = args.threshold
    if threshold is None:
        threshold = raw.get("meta_info", {}).get("gate_threshold")
    if threshold is None:
        threshold = fmeta.get("gate_threshold")
    silent = silent_mask(data.vectors, GateConfig(threshold)) if threshold is not None \
        else np.zeros(len(data), dtype=bool)

    scores = np.zeros(len(data))
    scores[~silent] = score_frames(model, data.vectors[~silent])
    labels = np.where(silent, -1, data.labels)
    report = evaluate(scores, labels)
    if np.any(silent):
        kept = evaluate(scores[~silent], labels[~silent])
        without = {k: v for k, v in kept.to_dict().items() if k != "roc"}
    else:
        without = {k: v for k, v in report.to_dict().items() if k != "roc"}
    report.extra = {
        "gate_threshold": threshold,
        "n_silent": int(np.sum(silent)),
        "excluding_silent": without,
        "model": Path(args.model).name,
        "seed": raw.get("meta_info", {}).get("seed"),
    }
    out = Path(args.report or args.out or "report.json")
    write_report(out, report)
    roc_path = out.with_suffix(".roc.csv")
    write_roc_csv(roc_path, report.roc)
    print(f"accuracy={report.accuracy:.4f} auc={report.auc:.4f} tpr={report.tpr:.4f} "
          f"fpr={report.fpr:.4f} (excluding silent: accuracy={without['accuracy']:.4f})")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stackvad", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="TOML run configuration")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, help="worker count for parallel stages")

    s = sub.add_parser("synth", help="generate a synthetic speech/noise/music corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-speech", type=int, default=10)
    s.add_argument("--n-nonspeech", type=int, default=10)
    s.add_argument("--duration", type=float, default=2.0, help="seconds per clip")
    s.add_argument("--rate", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="frame + MFCC a manifest into a feature file")
    s.add_argument("--manifest", required=True, action="append",
                   help="path,label CSV (repeat to concatenate)")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, help="gate threshold on coefficient 0")
    s.add_argument("--keep-silent", action="store_true",
                   help="test mode: keep gated speech frames")
    common(s)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("grid-search", help="cross-validated (C, gamma) selection")
    s.add_argument("--features", required=True)
    s.add_argument("--out")
    s.add_argument("--max-rows", type=int)
    common(s)
    s.set_defaults(func=cmd_grid_search)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--features", required=True)
    s.add_argument("--kind", choices=("svm", "ensemble", "nn"), default="ensemble")
    s.add_argument("--model", "--out", dest="out", required=True, help="model file to write")
    s.add_argument("--n-members", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--no-standardize", action="store_true", help="nn: feed raw MFCCs")
    s.add_argument("--max-rows", type=int, help="svm: seeded subsample of the training rows")
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="ensemble accuracy for 1..n members")
    s.add_argument("--features", required=True)
    s.add_argument("--eval-features", required=True, help="feature file to score")
    s.add_argument("--n-members", type=int, help="largest ensemble (default 5)")
    s.add_argument("--out")
    s.add_argument("--report")
    common(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("eval", help="score a feature file with a model")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--report", help="report JSON path (ROC CSV written alongside)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and not (args.out or args.report):
        parser.error("sweep needs --out or --report")
    try:
        return args.func(args)
    except IterationLimit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (VadError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
