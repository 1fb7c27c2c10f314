"""Command-line entry point.

Subcommands cover the whole pipeline: `synth-gen` (benchmark datasets),
`import` (CSV + feature blobs), `train`, `eval`, `ablate` (component and
window-length grid), `seq-stats` (repeated-sequence tables), and
`grad-check` (finite-difference verification of the full model).

Every run writes its resolved configuration, the seed, and the hashes of
its input data into the output directory, so a run is reproducible from
that directory alone. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from seqdg import tensor as T
from seqdg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from seqdg.config import ConfigError, file_sha256, load_run_config
from seqdg.data import (
    DataError,
    FeatureStore,
    import_csv_dataset,
    read_annotation_csv,
)
from seqdg.evaluate import accuracy, sliding_window_predict
from seqdg.model import ModelConfig, SeqDGModel
from seqdg.seqstats import count_all_categories, format_table, table_to_dict
from seqdg.synth import generate_to
from seqdg.tensor import NonFiniteError, grad_check
from seqdg.train import DivergenceError, TrainConfig, fit

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _out_dir(args) -> Path:
    root = os.environ.get("SEQDG_OUT_ROOT", "runs")
    out = Path(args.out) if args.out else Path(root) / args.command / time_tag()
    out.mkdir(parents=True, exist_ok=True)
    return out


def time_tag() -> str:
    return time.strftime("%Y%m%d-%H%M%S")


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def _write_provenance(out: Path, command: str, config: dict, seed,
                      data_hashes: dict | None = None):
    _write_json(out / "config_resolved.json", {
        "command": command,
        "seed": seed,
        "config": config,
        "data_hashes": data_hashes or {},
    })


def _data_hashes(data_dir: Path) -> dict:
    hashes = {}
    for name in ("manifest.json", "features.f32", "text_features.f32"):
        path = data_dir / name
        if path.exists():
            hashes[name] = file_sha256(path)
    return hashes


def _load_store(data_dir) -> FeatureStore:
    return FeatureStore.load(Path(data_dir))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args) -> int:
    run = load_run_config(args.config, {"seed": args.seed})
    out = _out_dir(args)
    manifest = generate_to(run.synth, out)
    _write_provenance(out, "synth-gen", run.to_dict(), run.synth.seed,
                      _data_hashes(out))
    store = FeatureStore.load(manifest)
    print(f"wrote {len(store.records)} actions across "
          f"{len(store.split.source)} source + {len(store.split.target)} target "
          f"domains to {out}")
    return EXIT_OK


def cmd_import(args) -> int:
    out = _out_dir(args)
    targets = tuple(d for d in (args.target_domains or "").split(",") if d)
    store = import_csv_dataset(args.csv, args.features, d_v=args.d_v,
                               clips_per_action=args.clips, d_t=args.d_t,
                               text_features_path=args.text_features,
                               target_domains=targets)
    store.save(out)
    _write_provenance(out, "import", {
        "csv": str(args.csv), "features": str(args.features),
        "d_v": args.d_v, "d_t": args.d_t, "clips_per_action": args.clips,
        "target_domains": list(targets),
    }, seed=None, data_hashes=_data_hashes(out))
    print(f"imported {len(store.records)} actions "
          f"({len(store.vocab)} vocab tokens) to {out}")
    return EXIT_OK


def _train_config_for(store: FeatureStore, args):
    overrides = {"seed": args.seed, "W": args.W, "lambda_rv": args.lambda_rv,
                 "lambda_rt": args.lambda_rt, "p_mix": args.p_mix,
                 "epochs": args.epochs}
    patch = {"D_V": store.d_v, "D_T": store.d_t}
    return load_run_config(args.config, overrides, model_patch=patch)


def _check_labels(store: FeatureStore, model_config: ModelConfig):
    max_verb = max(r.verb for r in store.records)
    max_noun = max(r.noun for r in store.records)
    if max_verb >= model_config.n_verbs or max_noun >= model_config.n_nouns:
        raise DataError(
            f"dataset labels exceed the configured label space: verbs up to "
            f"{max_verb} (n_verbs={model_config.n_verbs}), nouns up to "
            f"{max_noun} (n_nouns={model_config.n_nouns})")


def cmd_train(args) -> int:
    store = _load_store(args.data)
    run = _train_config_for(store, args)
    config = run.train
    if (config.text_loss == "token_cross_entropy"
            and config.model.vocab_size is None):
        config.model.vocab_size = len(store.vocab)
    config.check()
    _check_labels(store, config.model)
    out = _out_dir(args)
    _write_provenance(out, "train", run.to_dict(), config.seed,
                      _data_hashes(Path(args.data)))
    model = SeqDGModel.init(config.model, seed=config.seed)
    result = fit(store, model, config, metrics_path=out / "metrics.jsonl")
    save_checkpoint(out / "checkpoint.ckpt", model.params,
                    rng_state=result.rng_state,
                    extra={"train": {k: v for k, v in config.to_dict().items()
                                     if k != "model"}})
    final = result.metrics[-1] if result.metrics else None
    _write_json(out / "summary.json", {
        "epochs": config.epochs,
        "final": final.to_dict() if final else None,
        "seqmix": {"draws": result.seqmix_stats.draws,
                   "replaced": result.seqmix_stats.replaced,
                   "no_candidate": result.seqmix_stats.no_candidate},
    })
    if final:
        print(f"trained {config.epochs} epochs: source action top-1 "
              f"{final.source_action_acc:.1f}%, checkpoint at "
              f"{out / 'checkpoint.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    store = _load_store(args.data)
    params, header = load_checkpoint(args.checkpoint)
    model = SeqDGModel(params.config, params)
    domains = store.split.target if args.split == "target" else store.split.source
    if not domains:
        raise DataError(f"dataset has no {args.split} domains")
    preds = sliding_window_predict(store, model, domains=domains, k=args.k)
    records = store.records_for(domains)
    labels = [(r.verb, r.noun) for r in records]
    results = {"split": args.split, "domains": list(domains),
               "n_actions": len(records), "metrics": {}}
    for k in (1, args.k):
        verb, noun, action = accuracy(preds, labels, k=k)
        results["metrics"][f"top{k}"] = {"verb": round(verb, 1),
                                         "noun": round(noun, 1),
                                         "action": round(action, 1)}
    out = _out_dir(args)
    _write_json(out / "results.json", results)
    _write_provenance(out, "eval", {"checkpoint": str(args.checkpoint),
                                    "split": args.split, "k": args.k},
                      seed=None, data_hashes=_data_hashes(Path(args.data)))
    if args.dump_predictions:
        with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
            for p, (verb, noun) in zip(preds, labels):
                fh.write(json.dumps({
                    "action_id": p.action_id, "verb": verb, "noun": noun,
                    "topk_verbs": p.topk_verbs.tolist(),
                    "topk_nouns": p.topk_nouns.tolist()}) + "\n")
    top1 = results["metrics"]["top1"]
    print(f"{args.split} top-1: verb {top1['verb']:.1f} noun {top1['noun']:.1f} "
          f"action {top1['action']:.1f} ({len(records)} actions)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    store = _load_store(args.data)
    run = _train_config_for(store, args)
    out = _out_dir(args)
    _write_provenance(out, "ablate", run.to_dict(), run.train.seed,
                      _data_hashes(Path(args.data)))
    grid = run.ablate
    rows = []
    for w in grid["W"]:
        for p_mix in grid["p_mix"]:
            for lam_v in grid["lambda_rv"]:
                for lam_t in grid["lambda_rt"]:
                    accs = []
                    for seed in grid["seeds"]:
                        cell = TrainConfig.from_dict({
                            **run.train.to_dict(),
                            "model": {**run.model.to_dict(), "W": w},
                            "p_mix": p_mix, "lambda_rv": lam_v,
                            "lambda_rt": lam_t, "seed": seed})
                        if (cell.text_loss == "token_cross_entropy"
                                and cell.model.vocab_size is None):
                            cell.model.vocab_size = len(store.vocab)
                        _check_labels(store, cell.model)
                        model = SeqDGModel.init(cell.model, seed=seed)
                        fit(store, model, cell)
                        preds = sliding_window_predict(store, model)
                        labels = [(r.verb, r.noun)
                                  for r in store.records_for(store.split.target)]
                        accs.append(accuracy(preds, labels, k=1)[2])
                    rows.append({"W": w, "p_mix": p_mix, "lambda_rv": lam_v,
                                 "lambda_rt": lam_t,
                                 "target_action_top1": round(float(np.mean(accs)), 2),
                                 "per_seed": [round(a, 2) for a in accs]})
                    print(f"W={w} p_mix={p_mix} lrv={lam_v} lrt={lam_t}: "
                          f"{rows[-1]['target_action_top1']:.2f}")
    _write_json(out / "ablation.json", {"grid": grid, "rows": rows})
    return EXIT_OK


def cmd_seq_stats(args) -> int:
    rows = read_annotation_csv(args.csv)
    tables = count_all_categories(rows, args.max_len)
    out = _out_dir(args)
    text = format_table(tables)
    (out / "seq_stats.txt").write_text(text + "\n", encoding="utf-8")
    _write_json(out / "seq_stats.json", table_to_dict(tables))
    _write_provenance(out, "seq-stats", {"csv": str(args.csv),
                                         "max_len": args.max_len},
                      seed=None, data_hashes={"csv": file_sha256(args.csv)})
    print(text)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    config = ModelConfig(W=3, D=8, D_V=6, D_T=8, n_enc_layers=1, n_dec_layers=1,
                         n_heads=2, n_verbs=5, n_nouns=5, d_ff=16, vocab_size=10)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed or 0)
    model = SeqDGModel.init(config, seed=args.seed or 0)
    visual = rng.standard_normal((2, 3, 6))
    text = rng.standard_normal((2, 3, 8))
    verbs = rng.integers(0, 5, size=2)
    nouns = rng.integers(0, 5, size=2)
    tokens = tuple((int(rng.integers(10)), int(rng.integers(10))) for _ in range(2))
    with T.no_grad():
        frozen_out = model.forward_train(visual, text, recon_v=True, recon_t=True)
        frozen = (frozen_out.target_v.data.copy(), frozen_out.target_t.data.copy())
    from seqdg.train import composite_loss

    reports = {}
    elapsed = {}
    for kind in ("mse", "token_cross_entropy"):
        cfg = TrainConfig(model=config, lambda_rv=1.0, lambda_rt=1.0,
                          text_loss=kind, epochs=0)

        def loss():
            outp = model.forward_train(visual, text, recon_v=True, recon_t=True,
                                       token_text=kind == "token_cross_entropy",
                                       frozen_targets=frozen)
            total, _ = composite_loss(outp, verbs, nouns, cfg, tokens)
            return total

        start = time.monotonic()
        reports[kind] = grad_check(loss, model.params.named(), h=args.h, tol=args.tol)
        elapsed[kind] = time.monotonic() - start
        print(f"[{kind}] {reports[kind].summary()}  ({elapsed[kind]:.1f}s)")
    _write_json(out / "grad_check.json", {
        kind: {"passed": bool(r.passed), "max_rel_err": r.max_rel_err,
               "worst_param": r.worst_param, "tol": r.tol, "h": r.h,
               "seconds": round(elapsed[kind], 2)}
        for kind, r in reports.items()})
    _write_provenance(out, "grad-check", {"tol": args.tol, "h": args.h},
                      seed=args.seed or 0)
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqdg",
        description="sequence-context action recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", help="output directory (default: "
                       "$SEQDG_OUT_ROOT/<command>/<timestamp>)")
        p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", help="JSON config file")

    p = sub.add_parser("synth-gen", help="generate a synthetic multi-domain dataset")
    common(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("import", help="build a dataset from CSV + feature blobs")
    common(p, config=False)
    p.add_argument("--csv", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--d-v", type=int, required=True, dest="d_v")
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--d-t", type=int, default=768, dest="d_t")
    p.add_argument("--text-features", default=None)
    p.add_argument("--target-domains", default="",
                   help="comma-separated domain ids for the target split")
    p.set_defaults(func=cmd_import)

    def train_like(p):
        common(p)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--W", type=int, default=None)
        p.add_argument("--lambda-rv", type=float, default=None, dest="lambda_rv")
        p.add_argument("--lambda-rt", type=float, default=None, dest="lambda_rt")
        p.add_argument("--p-mix", type=float, default=None, dest="p_mix")
        p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("train", help="train on the source split")
    train_like(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sliding-window evaluation of a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("source", "target"), default="target")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--dump-predictions", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="grid over window length, mixing, and "
                                      "reconstruction weights")
    train_like(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("seq-stats", help="cross-domain repeated-sequence counts")
    common(p, config=False)
    p.add_argument("--csv", required=True)
    p.add_argument("--max-len", type=int, default=5, dest="max_len")
    p.set_defaults(func=cmd_seq_stats)

    p = sub.add_parser("grad-check", help="finite-difference check of the full "
                                          "model gradient")
    common(p, config=False)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid configs assembled programmatically surface as ValueError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
