"""Command-line entry point: ``iaml {augment,eval,dist,train,sweep}``.

Flags override values from ``--config file.json``, which override built-in
defaults; ``IAML_SEED`` supplies the default seed. Each run echoes its
resolved config to standard error as one JSON line. Exit codes: 0 success,
1 invalid input or domain error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .dataset import atomic_write_text, digest_file, load_records, manifest_path, write_augmented
from .geometry import BBox
from .metrics import DEFAULT_THRESHOLDS, evaluate
from .payoff import bin_payoff
from .sampler import STRATEGIES, AugmentationConfig, build_bins, derive_stream
from .toytrainer.train import LOSS_KINDS, TrainConfig, TrainingDiverged, gap, sweep, sweep_csv, train

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
SEED_ENV = "IAML_SEED"

logger = logging.getLogger("iaml")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, str):
        v = [p for p in v.split(",") if p.strip()]
    elif not isinstance(v, (list, tuple)):
        v = [v]
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise UsageError(f"expected a comma-separated list of numbers, got {v!r}") from None


def _ints(v) -> tuple[int, ...]:
    out = _floats(v)
    if any(x != int(x) for x in out):
        raise UsageError(f"expected integers, got {v!r}")
    return tuple(int(x) for x in out)


def _strs(v) -> tuple[str, ...]:
    if isinstance(v, str):
        return tuple(p.strip() for p in v.split(",") if p.strip())
    return tuple(str(x) for x in v)


def _scalar(kind):
    def conv(v):
        try:
            return kind(v)
        except (TypeError, ValueError):
            raise UsageError(f"expected {kind.__name__}, got {v!r}") from None
    return conv


def _int(v) -> int:
    f = _scalar(float)(v)
    if f != int(f):
        raise UsageError(f"expected an integer, got {v!r}")
    return int(f)


def _bool(v) -> bool:
    if isinstance(v, str):
        return v.lower() in ("1", "true", "yes")
    return bool(v)


def _path(v):
    return None if v is None else str(v)


_TRAIN_DEFAULTS = TrainConfig()
_AUG_DEFAULTS = AugmentationConfig()

# name -> (default, converter)
_AUG_KEYS = {
    "epsilon": (_AUG_DEFAULTS.epsilon, _scalar(float)),
    "tau": (_AUG_DEFAULTS.tau, _scalar(float)),
    "trials": (_AUG_DEFAULTS.n_trials, _int),
    "seed": (0, _int),
}
_TRAIN_KEYS = {
    **_AUG_KEYS,
    "rounds": (_TRAIN_DEFAULTS.rounds, _int),
    "lr": (_TRAIN_DEFAULTS.learning_rate, _scalar(float)),
    "batch_size": (_TRAIN_DEFAULTS.batch_size, _int),
    "hidden": (_TRAIN_DEFAULTS.hidden, _int),
    "embed": (_TRAIN_DEFAULTS.embed, _int),
    "n_train": (_TRAIN_DEFAULTS.n_train, _int),
    "n_test": (_TRAIN_DEFAULTS.n_test, _int),
    "elements": (_TRAIN_DEFAULTS.elements_per_screen, _int),
    "noise": (_TRAIN_DEFAULTS.noise, _scalar(float)),
    "thresholds": (DEFAULT_THRESHOLDS, _floats),
}
SCHEMA = {
    "augment": {**_AUG_KEYS, "input": (None, _path), "out": (None, _path),
                "k": (_AUG_DEFAULTS.k_replicas, _int), "strategy": ("iaml", str),
                "skip_bad": (False, _bool), "workers": (1, _int)},
    "eval": {"pred": (None, _path), "gt": (None, _path), "thresholds": (DEFAULT_THRESHOLDS, _floats),
             "mode": ("elements", str), "geometry_only": (False, _bool),
             "allow_missing": (False, _bool), "out": (None, _path), "per_record": (None, _path)},
    "dist": {"box": (None, _floats), "epsilon": (_AUG_DEFAULTS.epsilon, _scalar(float)),
             "tau_list": ((1.0, 3.0, 6.0), _floats), "trials": (_AUG_DEFAULTS.n_trials, _int),
             "seed": (0, _int), "out": (None, _path)},
    "train": {**_TRAIN_KEYS, "loss": (("mle",), _strs), "k": (_AUG_DEFAULTS.k_replicas, _int),
              "epochs": (None, _int), "fraction": (1.0, _scalar(float)), "out_dir": (None, _path)},
    "sweep": {**_TRAIN_KEYS, "methods": (("mle", "iaml"), _strs), "taus": ((1.0, 3.0, 6.0), _floats),
              "ks": ((_AUG_DEFAULTS.k_replicas,), _ints), "fractions": ((0.1, 1.0), _floats),
              "seeds": (5, _int), "out": (None, _path), "runs_out": (None, _path),
              "workers": (1, _int)},
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iaml", description="IoU payoff augmentation for box coordinates.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", default=S, help="JSON file of defaults; flags win")

    def aug_flags(sp):
        sp.add_argument("--epsilon", default=S, help="perturbation half-width")
        sp.add_argument("--tau", default=S, help="payoff temperature")
        sp.add_argument("--trials", default=S, help="perturbations per census")
        sp.add_argument("--seed", default=S, help=f"master seed (default ${SEED_ENV} or 0)")

    a = sub.add_parser("augment", help="write k replicas per record plus a manifest")
    common(a)
    aug_flags(a)
    a.add_argument("--in", dest="input", default=S, help="input JSONL")
    a.add_argument("--out", default=S, help="output JSONL")
    a.add_argument("--k", default=S, help="replicas per record, original included")
    a.add_argument("--strategy", default=S, choices=STRATEGIES)
    a.add_argument("--skip-bad", action="store_true", default=S)
    a.add_argument("--workers", default=S)

    e = sub.add_parser("eval", help="P/R/F per IoU threshold, or click accuracy")
    common(e)
    e.add_argument("--pred", default=S)
    e.add_argument("--gt", default=S)
    e.add_argument("--thresholds", default=S, help="comma list, default 0.1,0.3,0.5,0.7")
    e.add_argument("--mode", default=S, choices=("elements", "click"))
    e.add_argument("--geometry-only", action="store_true", default=S,
                   help="match boxes regardless of element type")
    e.add_argument("--allow-missing", action="store_true", default=S,
                   help="score misaligned record ids instead of failing")
    e.add_argument("--out", default=S, help="report JSON path")
    e.add_argument("--per-record", default=S, help="per-record CSV path")

    d = sub.add_parser("dist", help="binned payoff histogram per temperature")
    common(d)
    d.add_argument("--box", default=S, help="x0,y0,x1,y1")
    d.add_argument("--epsilon", default=S)
    d.add_argument("--tau-list", default=S, help="comma list, default 1,3,6")
    d.add_argument("--trials", default=S)
    d.add_argument("--seed", default=S)
    d.add_argument("--out", default=S, help="CSV path (tau,I_r,probability)")

    def train_flags(sp):
        aug_flags(sp)
        sp.add_argument("--rounds", default=S, help="passes over the replica set")
        sp.add_argument("--lr", default=S)
        sp.add_argument("--batch-size", default=S)
        sp.add_argument("--hidden", default=S)
        sp.add_argument("--embed", default=S)
        sp.add_argument("--n-train", default=S)
        sp.add_argument("--n-test", default=S)
        sp.add_argument("--elements", default=S, help="elements per screen")
        sp.add_argument("--noise", default=S, help="feature noise sd")
        sp.add_argument("--thresholds", default=S)

    t = sub.add_parser("train", help="train the toy model on synthetic screens")
    common(t)
    train_flags(t)
    t.add_argument("--loss", default=S, help=f"one of {', '.join(LOSS_KINDS)}; a comma list compares")
    t.add_argument("--k", default=S, help="replicas per screen")
    t.add_argument("--epochs", default=S, help="MLE epochs per round; same as --k")
    t.add_argument("--fraction", default=S, help="training data fraction")
    t.add_argument("--out-dir", default=S, help="write log, report and params here")

    w = sub.add_parser("sweep", help="grid of training runs over seeds")
    common(w)
    train_flags(w)
    w.add_argument("--methods", default=S)
    w.add_argument("--taus", default=S)
    w.add_argument("--ks", default=S)
    w.add_argument("--fractions", default=S)
    w.add_argument("--seeds", default=S, help="number of seeds")
    w.add_argument("--out", default=S, help="summary CSV path")
    w.add_argument("--runs-out", default=S, help="per-run JSONL path")
    w.add_argument("--workers", default=S)
    return p


def resolve(command: str, flags: dict, env=os.environ) -> dict:
    """Merge defaults, ``$IAML_SEED``, the config file and explicit flags, then convert."""
    schema = SCHEMA[command]
    raw = {k: default for k, (default, _) in schema.items()}
    if "seed" in schema and env.get(SEED_ENV):
        raw["seed"] = env[SEED_ENV]
    if "config" in flags:
        try:
            with open(flags["config"], encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {flags['config']}: malformed JSON ({exc.msg})") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(cfg) - set(schema))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        raw.update(cfg)
    raw.update({k: v for k, v in flags.items() if k in schema})
    return {k: (v if v is None else schema[k][1](v)) for k, v in raw.items()}


def _require(opts: dict, *names: str) -> None:
    for n in names:
        if opts.get(n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _check_thresholds(ts) -> None:
    if not ts or any(not 0.0 < t <= 1.0 for t in ts):
        raise UsageError(f"thresholds must lie in (0, 1], got {list(ts)}")


def _input_file(path: str) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such input file: {path}")


def _aug_config(opts: dict, **extra) -> AugmentationConfig:
    return AugmentationConfig(epsilon=opts["epsilon"], n_trials=opts["trials"], tau=opts["tau"],
                              master_seed=opts["seed"], **extra)


def _train_config(opts: dict, loss: str, k: int, fraction: float) -> TrainConfig:
    return TrainConfig(
        loss_kind=loss, aug=_aug_config(opts, k_replicas=k), rounds=opts["rounds"],
        learning_rate=opts["lr"], batch_size=opts["batch_size"], hidden=opts["hidden"],
        embed=opts["embed"], n_train=opts["n_train"], n_test=opts["n_test"],
        elements_per_screen=opts["elements"], noise=opts["noise"], fraction=fraction,
        seed=opts["seed"], thresholds=opts["thresholds"])


def _echo_config(command: str, opts: dict) -> None:
    print(json.dumps({"command": command, **opts}, sort_keys=True), file=sys.stderr)


def cmd_augment(opts: dict) -> int:
    _require(opts, "input", "out")
    if opts["workers"] < 1:
        raise UsageError("--workers must be at least 1")
    cfg = _aug_config(opts, k_replicas=opts["k"], strategy=opts["strategy"])
    _input_file(opts["input"])
    records = load_records(opts["input"])
    manifest = write_augmented(records, cfg, opts["out"], source_digest=digest_file(opts["input"]),
                               skip_bad=opts["skip_bad"], workers=opts["workers"])
    print(f"records\t{len(records)}")
    print(f"lines\t{sum(manifest.replica_counts)}")
    print(f"skipped\t{len(manifest.skipped)}")
    print(f"output_digest\t{manifest.output_digest}")
    print(f"manifest\t{manifest_path(opts['out'])}")
    return EXIT_OK


def cmd_eval(opts: dict) -> int:
    _require(opts, "pred", "gt")
    _check_thresholds(opts["thresholds"])
    if opts["mode"] not in ("elements", "click"):
        raise UsageError(f"unknown mode {opts['mode']!r}")
    _input_file(opts["pred"])
    _input_file(opts["gt"])
    report = evaluate(opts["pred"], opts["gt"], opts["thresholds"], mode=opts["mode"],
                      geometry_only=opts["geometry_only"])
    if not report.aligned and not opts["allow_missing"]:
        missing = ", ".join(report.flagged[:5]) or "-"
        extra = ", ".join(report.unexpected[:5]) or "-"
        raise UsageError(f"record_id misalignment: {len(report.flagged)} without predictions "
                         f"({missing}); {len(report.unexpected)} not in ground truth ({extra}); "
                         "pass --allow-missing to score anyway")
    if opts["out"]:
        atomic_write_text(opts["out"], json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    if opts["per_record"] and opts["mode"] == "elements":
        atomic_write_text(opts["per_record"], report.per_record_csv())
    sys.stdout.write(report.table())
    return EXIT_OK


def dist_rows(box: BBox, epsilon: float, taus, n_trials: int, seed: int):
    """``(tau, I_r, probability)`` rows from one shared perturbation census."""
    bins = build_bins(box, epsilon, n_trials, derive_stream(seed))
    rows = []
    for tau in taus:
        d = bin_payoff(bins, tau)
        rows.extend((tau, int(i), float(p)) for i, p in zip(d.support, d.probs))
    return rows


def cmd_dist(opts: dict) -> int:
    _require(opts, "box")
    if len(opts["box"]) != 4:
        raise UsageError("--box needs four numbers x0,y0,x1,y1")
    box = BBox(*opts["box"])
    taus = opts["tau_list"]
    if not taus or any(t <= 0 for t in taus):
        raise UsageError("--tau-list values must be positive")
    _aug_config({**opts, "tau": taus[0]})
    rows = dist_rows(box, opts["epsilon"], taus, opts["trials"], opts["seed"])
    if opts["out"]:
        text = "tau,I_r,probability\n" + "".join(f"{t:g},{i},{p:.17g}\n" for t, i, p in rows)
        atomic_write_text(opts["out"], text)
    print("tau\tground_bin\tground_mass\tmean_I_r\ttotal")
    for tau in taus:
        sel = [(i, p) for t, i, p in rows if t == tau]
        ground = min(i for i, _ in sel)
        mass = sum(p for i, p in sel if i == ground)
        mean = sum(i * p for i, p in sel)
        total = sum(p for _, p in sel)
        print(f"{tau:g}\t{ground}\t{mass:.6f}\t{mean:.6f}\t{total:.12f}")
    return EXIT_OK


def _train_k(opts: dict) -> int:
    k = opts["k"]
    if opts["epochs"] is not None:
        explicit_k = "k" in opts.get("_explicit", ())
        if explicit_k and k != opts["epochs"]:
            raise UsageError("--epochs and --k disagree; they set the same replica count")
        k = opts["epochs"]
    return k


def cmd_train(opts: dict) -> int:
    losses = opts["loss"]
    bad = [l for l in losses if l not in LOSS_KINDS]
    if not losses or bad:
        raise UsageError(f"--loss must be drawn from {', '.join(LOSS_KINDS)}")
    k = _train_k(opts)
    configs = [_train_config(opts, loss, k, opts["fraction"]) for loss in losses]
    out_dir = Path(opts["out_dir"]) if opts["out_dir"] else None
    if out_dir is not None and not out_dir.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    results = [train(cfg) for cfg in configs]
    if out_dir is not None:
        for cfg, res in zip(configs, results):
            dest = out_dir / cfg.loss_kind if len(configs) > 1 else out_dir
            dest.mkdir(exist_ok=True)
            atomic_write_text(dest / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
            atomic_write_text(dest / "log.jsonl", res.log_jsonl())
            atomic_write_text(dest / "report.json",
                              json.dumps(res.report.to_json(), indent=2, sort_keys=True) + "\n")
            atomic_write_text(dest / "params.json", res.params.to_json())
    print("metric\t" + "\t".join(losses))
    print("steps\t" + "\t".join(str(r.steps) for r in results))
    for t in opts["thresholds"]:
        print(f"F1@{t:g}\t" + "\t".join(f"{r.f1(t):.4f}" for r in results))
    print("click_accuracy\t" + "\t".join(f"{r.click_accuracy:.4f}" for r in results))
    return EXIT_OK


def cmd_sweep(opts: dict) -> int:
    bad = [m for m in opts["methods"] if m not in LOSS_KINDS]
    if not opts["methods"] or bad:
        raise UsageError(f"--methods must be drawn from {', '.join(LOSS_KINDS)}")
    if opts["seeds"] < 1 or opts["workers"] < 1:
        raise UsageError("--seeds and --workers must be at least 1")
    for frac in opts["fractions"]:
        if not 0.0 < frac <= 1.0:
            raise UsageError("--fractions must lie in (0, 1]")
    base = _train_config(opts, "mle", opts["ks"][0], 1.0)
    # validate every grid value before the first run starts
    for k in opts["ks"]:
        for tau in opts["taus"]:
            base.aug.replace(k_replicas=k, tau=tau)
    for p in (opts["out"], opts["runs_out"]):
        if p and not Path(p).resolve().parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {Path(p).parent}")

    def progress(key, res):
        logger.info("run %s: F1@0.5=%.4f steps=%d (%.1fs)", key, res.f1(0.5), res.steps, res.seconds)

    # seeds count upward from the resolved seed
    seeds = range(opts["seed"], opts["seed"] + opts["seeds"])
    rows, runs = sweep(base, methods=opts["methods"], taus=opts["taus"], ks=opts["ks"],
                       fractions=opts["fractions"], seeds=seeds, progress=progress,
                       workers=opts["workers"])
    if opts["out"]:
        atomic_write_text(opts["out"], sweep_csv(rows))
    if opts["runs_out"]:
        atomic_write_text(opts["runs_out"], "".join(json.dumps(r, sort_keys=True) + "\n" for r in runs))
    print("method\ttau\tk\tfraction\tthreshold\tf1_mean\tf1_sd\tn_seeds")
    for r in rows:
        print(f"{r['method']}\t{r['tau']:g}\t{r['k']}\t{r['fraction']:g}\t{r['threshold']:g}"
              f"\t{r['f1_mean']:.4f}\t{r['f1_sd']:.4f}\t{r['n_seeds']}")
    if "mle" in opts["methods"] and 0.5 in opts["thresholds"]:
        for m in opts["methods"]:
            if m == "mle":
                continue
            for tau in opts["taus"]:
                for k in opts["ks"]:
                    for frac in opts["fractions"]:
                        g = gap(rows, threshold=0.5, fraction=frac, tau=tau, k=k, method=m)
                        print(f"gap[{m}-mle]\t{tau:g}\t{k}\t{frac:g}\t0.5\t{g:+.4f}")
    print(f"runs\t{len(runs)}")
    return EXIT_OK


COMMANDS = {"augment": cmd_augment, "eval": cmd_eval, "dist": cmd_dist,
            "train": cmd_train, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        opts = resolve(ns.command, flags)
        _echo_config(ns.command, opts)
        opts["_explicit"] = tuple(flags)
        return COMMANDS[ns.command](opts)
    except (UsageError, ValueError, TrainingDiverged, RuntimeError) as exc:
        print(f"iaml: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"iaml: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
