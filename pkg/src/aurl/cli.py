"""Command-line entry point: ``aurl <command> [options]``.

Every command is a thin adapter over the library. Exit codes: 0 on success,
1 on a validation failure (bad config, bad arguments, failed verification),
2 on an I/O or file-format error.

Configuration comes from an optional ``--config`` file of ``section.key =
value`` lines (``#`` starts a comment), overridden by ``--set
section.key=value`` flags, overridden in turn by dedicated flags such as
``--seed``. Sections: ``train``, ``generator``, ``model``, ``filter``,
``bench``. A training log (whose first record is the effective config) is
also accepted as a config file, which replays that run exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dataio
from .classgen import GeneratorConfig, coverage_stats, synthesize
from .core import make_rng, normalize_rows
from .dataio import SynthBenchConfig
from .errors import AurlError, ConfigError, FormatError, ValidationError
from .metrics import closeness, dispersion
from .trainer import ModelConfig, TrainConfig, Trainer, load_model, log_line
from .zeroshot import EvaluationSet, FilterConfig, evaluate, filter_train_classes

SECTIONS = {
    "train": TrainConfig,
    "generator": GeneratorConfig,
    "model": ModelConfig,
    "filter": FilterConfig,
    "bench": SynthBenchConfig,
}
NESTED = ("generator", "model")  # TrainConfig fields that are sections of their own
CHECKPOINT_NAME = "checkpoint.ckpt"
LOG_NAME = "log.jsonl"


# -- configuration ---------------------------------------------------------------

def _scalar_fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if not (cls is TrainConfig and f.name in NESTED)}


def _coerce(f: dataclasses.Field, text: str, where: str) -> Any:
    kind = str(f.type)
    raw = text.strip()
    if "None" in kind and raw.lower() in ("none", "null"):
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None
    return raw


def _assign(values: dict[str, dict], key: str, text: str, where: str) -> None:
    section, _, name = key.strip().partition(".")
    if section not in SECTIONS or not name:
        raise ConfigError(f"{where}: unknown key {key.strip()!r} (expected section.key, sections: "
                          f"{', '.join(SECTIONS)})")
    fields = _scalar_fields(SECTIONS[section])
    if name not in fields:
        raise ConfigError(f"{where}: unknown key {key.strip()!r}")
    values.setdefault(section, {})[name] = _coerce(fields[name], text, where)


def _from_record(record: dict, where: str) -> dict[str, dict]:
    """Sections of an ``effective_config`` record, checked against the known keys."""
    values: dict[str, dict] = {}
    for section, entries in record.items():
        if section not in SECTIONS or not isinstance(entries, dict):
            raise ConfigError(f"{where}: unknown section {section!r}")
        fields = _scalar_fields(SECTIONS[section])
        for name, value in entries.items():
            if name not in fields:
                raise ConfigError(f"{where}: unknown key {section}.{name}")
            values.setdefault(section, {})[name] = value
    return values


def read_config_file(path) -> dict[str, dict]:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        first = json.loads(text.lstrip().splitlines()[0])
        if "effective_config" not in first:
            raise ConfigError(f"{path}:1: JSON config must be an effective_config record")
        return _from_record(first["effective_config"], f"{path}:1")
    values: dict[str, dict] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{i}: expected 'section.key = value'")
        _assign(values, key, value, f"{path}:{i}")
    return values


def gather_config(args) -> dict[str, dict]:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        _assign(values, key, value, "--set")
    return values


def build_train_config(values: dict[str, dict]) -> TrainConfig:
    try:
        return TrainConfig(generator=GeneratorConfig(**values.get("generator", {})),
                           model=ModelConfig(**values.get("model", {})), **values.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def effective_record(cfg: TrainConfig, extra: dict | None = None) -> dict:
    d = cfg.to_dict()
    sections = {"train": {k: v for k, v in d.items() if k not in NESTED},
                "generator": d["generator"], "model": d["model"]}
    if extra:
        sections.update(extra)
    return {"effective_config": sections}


# -- helpers ----------------------------------------------------------------------

def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=False))


def _train_inputs(args):
    if args.data:
        bench = dataio.read_benchmark(args.data)
        return bench.train, bench.train_vocab, EvaluationSet(bench.test, bench.test_vocab)
    if not (args.features and args.vocab):
        raise ConfigError("train needs --data DIR or both --features and --vocab")
    ev = None
    if args.eval_features or args.eval_vocab:
        if not (args.eval_features and args.eval_vocab):
            raise ConfigError("--eval-features and --eval-vocab go together")
        ev = EvaluationSet(dataio.read_features(args.eval_features), dataio.read_vocab(args.eval_vocab))
    return dataio.read_features(args.features), dataio.read_vocab(args.vocab), ev


# -- commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    values = gather_config(args)
    bench_values = dict(values.get("bench", {}))
    if args.seed is not None:
        bench_values["seed"] = args.seed
    try:
        cfg = SynthBenchConfig(**bench_values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    bench = dataio.synth_benchmark(cfg)
    dataio.write_benchmark(args.out, bench)
    res = filter_train_classes(bench.train_vocab, bench.test_vocab, FilterConfig())
    _emit({"out": str(args.out), "bench": dataclasses.asdict(cfg), "train_rows": len(bench.train),
           "test_rows": len(bench.test), "filter_excluded": len(res.excluded)})
    return 0


def cmd_train(args) -> int:
    values = gather_config(args)
    train_values = values.setdefault("train", {})
    if args.loss_mode is not None:
        train_values["loss_mode"] = args.loss_mode
    if args.seed is not None:
        train_values["seed"] = args.seed
    if args.iters is not None:
        train_values["total_iters"] = args.iters
    cfg = build_train_config(values)
    features, vocab, ev = _train_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / LOG_NAME, "w") as log:
        def sink(rec):
            line = log_line(rec)
            log.write(line + "\n")
            print(line)

        sink(effective_record(cfg))
        trainer = Trainer(cfg, features, vocab, ev)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # the D < d advisory would repeat every step
            trainer.run(sink=sink)
    trainer.save_checkpoint(out / CHECKPOINT_NAME)
    return 0


def cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    features = dataio.read_features(args.features)
    vocab = dataio.read_vocab(args.vocab)
    rep = evaluate(model, EvaluationSet(features, vocab), args.clips).to_dict()
    if args.tau is not None:
        if not args.train_vocab:
            raise ConfigError("--tau needs --train-vocab to check class disjointness")
        res = filter_train_classes(dataio.read_vocab(args.train_vocab), vocab, FilterConfig(args.tau))
        rep["filter"] = {"tau": args.tau, "retained": len(res.retained),
                         "excluded": [dataclasses.asdict(e) for e in res.excluded]}
    if args.splits:
        rep["splits"] = _split_protocol(model, features, vocab, args)
    _emit(rep)
    return 0


def _split_protocol(model, features, vocab, args) -> dict:
    """Mean and spread of top-1 over seeded random subsets of the test classes."""
    if not 1 <= args.split_size <= len(vocab):
        raise ConfigError(f"--split-size must lie in [1, {len(vocab)}]")
    rng = make_rng(args.seed)
    top1 = []
    for _ in range(args.splits):
        ids = np.sort(rng.choice(vocab.ids, size=args.split_size, replace=False))
        keep = np.isin(features.class_ids, ids)
        sub = dataio.FeatureSet(features.class_ids[keep], features.group_ids[keep], features.features[keep])
        top1.append(evaluate(model, EvaluationSet(sub, vocab.subset(ids)), args.clips).top1)
    return {"n": args.splits, "size": args.split_size, "top1_mean": float(np.mean(top1)),
            "top1_std": float(np.std(top1)), "top1": top1}


def cmd_diagnose(args) -> int:
    model, _ = load_model(args.checkpoint)
    features = dataio.read_features(args.features)
    vocab = dataio.read_vocab(args.vocab)
    V = model.embed_features(features.features)
    S = model.embed_vocab(vocab.embeddings)
    present = np.isin(vocab.ids, features.class_ids)
    out = {"closeness": closeness(V, features.class_ids, S[present], vocab.ids[present]),
           "dispersion": dispersion(V, features.class_ids) if present.sum() >= 2 else None,
           "n_samples": len(features), "n_classes": int(present.sum())}
    _emit(out)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_verify

    rep = run_verify(args.samples, args.seed, args.grad_instances)
    _emit(rep.to_dict())
    return 0 if rep.passed else 1


def cmd_gen_classes(args) -> int:
    model, cfg = load_model(args.checkpoint)
    if model.W is None or model.fs is None:
        raise ValidationError(f"checkpoint trained with loss_mode={cfg.loss_mode!r} has no visual centers")
    vocab = dataio.read_vocab(args.vocab)
    if len(vocab) != model.W.shape[0]:
        raise ValidationError(f"vocabulary has {len(vocab)} classes, checkpoint has {model.W.shape[0]} centers")
    gen = GeneratorConfig(ku=args.ku, d=cfg.generator.d, alpha=args.alpha)
    rng = make_rng(args.seed)
    S = model.embed_vocab(vocab.embeddings)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bank = synthesize(model.W, S, gen, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = np.arange(gen.ku)
    for name, mat in (("theta", bank.theta), ("z", bank.z), ("m", bank.m)):
        dataio.write_features(out / f"{name}.fvec", dataio.FeatureSet(rows, rows, mat))
    probes, _ = normalize_rows(rng.standard_normal((args.probes, model.W.shape[1])))
    _emit({"out": str(out), "ku": gen.ku, "alpha": gen.alpha, "d": bank.m.shape[1],
           "coverage_random_probes": coverage_stats(bank.theta, probes),
           "coverage_visual_centers": coverage_stats(bank.theta, model.W)})
    return 0


def cmd_filter(args) -> int:
    res = filter_train_classes(dataio.read_vocab(args.train_vocab), dataio.read_vocab(args.test_vocab),
                               FilterConfig(args.tau))
    for cid in res.retained:
        print(cid)
    for e in res.excluded:
        print(f"excluded {e.train_id}: distance {e.distance:.6g} to test class {e.test_id}", file=sys.stderr)
    return 0


def cmd_export_plot(args) -> int:
    model, _ = load_model(args.checkpoint)
    features = dataio.read_features(args.features)
    vocab = dataio.read_vocab(args.vocab)
    V = model.embed_features(features.features)
    S = model.embed_vocab(vocab.embeddings)
    n = dataio.export_projection(args.out, V, features.class_ids, S, vocab.ids)
    _emit({"out": str(args.out), "rows": n})
    return 0


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation failures, exit 1
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aurl", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file, or a training log to replay")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")

    sp = sub.add_parser("synth", help="write a synthetic seen/unseen benchmark")
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one loss mode; writes a checkpoint and a JSON-lines log")
    with_config(sp)
    sp.add_argument("--data", help="benchmark directory written by 'synth'")
    sp.add_argument("--features")
    sp.add_argument("--vocab")
    sp.add_argument("--eval-features")
    sp.add_argument("--eval-vocab")
    sp.add_argument("--loss-mode")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="zero-shot accuracy on a test feature set")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--clips", type=int, default=1)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--train-vocab")
    sp.add_argument("--splits", type=int, default=0, help="also report top-1 over N random class subsets")
    sp.add_argument("--split-size", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("diagnose", help="closeness and dispersion of a feature set")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--vocab", required=True)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("verify", help="check loss identities, bounds and gradients")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grad-instances", type=int, default=100)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("gen-classes", help="dump a synthetic class bank and its coverage")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", required=True, help="the training vocabulary")
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--ku", type=int, default=662)
    sp.add_argument("--probes", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_classes)

    sp = sub.add_parser("filter", help="training classes far enough from every test class")
    sp.add_argument("--train-vocab", required=True)
    sp.add_argument("--test-vocab", required=True)
    sp.add_argument("--tau", type=float, default=0.05)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("export-plot", help="3-D coordinates of samples and class semantics")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (AurlError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
