"""Command-line entry point: ``rvqsta <command> [flags]``.

Every command exits 0 on success. Library errors are printed as
``rvqsta <command>: error: <message>`` with exit status 1; bad flags exit 2.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core.config import (
    ModelConfig,
    check_config,
    desk_config,
    dump_config,
    load_config,
    full_config,
    toy_config,
    with_overrides,
)
from .core.io import (
    load_codebooks,
    load_features,
    load_token_streams,
    save_codebooks,
    save_features,
    save_token_streams,
    save_tokens,
)
from .core.types import CodebookStack, RvqStaError, TokenSequence
from .corpus import CorpusManifest, load_corpus, load_manifest, make_synthetic_corpus, write_corpus
from .metrics import UtilizationReport, codebook_utilization, comparison_json, utilization_compare
from .spd import sample_mask_plan
from .tokenizer import KMeansError, kmeans_assign, kmeans_fit

PRESETS = {"full": full_config, "desk": desk_config, "toy": toy_config}


def _emit(obj, args) -> None:
    if getattr(args, "json", False) or not isinstance(obj, dict):
        print(json.dumps(obj, sort_keys=True, indent=2) if isinstance(obj, dict) else obj)
    else:
        for k, v in obj.items():
            print(f"{k}: {v}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _resolve_config(args, default="desk") -> ModelConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = PRESETS[getattr(args, "preset", None) or default]()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "layers", None) is not None:
        overrides["model.n_q"] = args.layers
    if getattr(args, "k", None) is not None:
        overrides["model.k"] = args.k
    if getattr(args, "stage1_steps", None) is not None:
        overrides["training.stage1_steps"] = args.stage1_steps
    if getattr(args, "total_steps", None) is not None:
        overrides["optimizer.total_steps"] = args.total_steps
    for name in ("sta", "bt", "tc", "mask", "spd"):
        value = getattr(args, f"toggle_{name}", None)
        if value is not None:
            overrides[f"toggles.{name}"] = value
    if overrides:
        cfg = with_overrides(cfg, overrides)
    return check_config(cfg)


# ---------------------------------------------------------------- commands

def cmd_config(args):
    cfg = _resolve_config(args, default=args.preset or "full")
    text = dump_config(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")


def cmd_synth(args):
    feats, _ = make_synthetic_corpus(args.utterances, args.frames, args.d_in, args.clusters,
                                     seed=args.seed, spread=args.spread, noise=args.noise)
    path = write_corpus(args.out, feats)
    _emit({"manifest": str(path), "utterances": len(feats), "frames": args.frames, "d_in": args.d_in}, args)


def _all_frames(manifest: CorpusManifest) -> np.ndarray:
    corpus = load_corpus(manifest, require_tokens=False)
    return np.concatenate([u.features for u in corpus])


def cmd_kmeans_fit(args):
    manifest = load_manifest(args.corpus)
    frames = _all_frames(manifest)
    if frames.shape[0] == 0:
        raise KMeansError("empty corpus")
    model = kmeans_fit(frames, args.k, max_iters=args.max_iters, tol=args.tol, seed=args.seed,
                       n_init=args.n_init)
    save_codebooks(CodebookStack((model.centroids,)), args.out)
    _emit({"model": args.out, "k": model.k, "iterations": model.iterations_run,
           "inertia": model.inertia, "frames": int(frames.shape[0])}, args)


def cmd_tokenize(args):
    manifest = load_manifest(args.corpus)
    stack = load_codebooks(args.model)
    if stack.num_layers != 1:
        raise KMeansError(f"{args.model}: tokenizer model must have exactly one layer")
    centroids = stack.layers[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, u in enumerate(load_corpus(manifest, require_tokens=False)):
        feat_path = manifest.resolve(manifest.entries[i][0]).resolve()
        tok_name = f"{Path(feat_path).stem}.stat"
        save_tokens(kmeans_assign(u.features, centroids), out / tok_name)
        entries.append((os.path.relpath(feat_path, out.resolve()), tok_name))
    new = CorpusManifest(entries, manifest.d_in, centroids.K, out)
    new.save(out / "manifest.json")
    _emit({"manifest": str(out / "manifest.json"), "utterances": len(entries), "vocab": centroids.K}, args)


def cmd_train(args):
    from .training import train
    from .training.evaluate import evaluate

    cfg = _resolve_config(args)
    corpus = load_corpus(load_manifest(args.corpus))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(cfg))
    state, reports = train(cfg, corpus, out)
    ev = evaluate(state.params, cfg, corpus)
    summary = ev.summary()
    summary.update({"steps": state.step, "final_total_loss": reports[-1].total_loss,
                    "checkpoint": str(out / f"checkpoint_{state.step:07d}.stap")})
    (out / "eval.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    (out / "utilization.json").write_text(ev.utilization.to_json(indent=2) + "\n")
    _emit(summary, args)


def cmd_encode(args):
    from .training.evaluate import default_token_source, encode_features
    from .training.loop import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    feats = load_features(args.features, expected_dim=state.cfg.model.d_in)
    tokens = None
    if args.tokens:
        tokens = load_token_streams(args.tokens)[0].tokens
    source = args.token_source or ("ground_truth" if tokens is not None else default_token_source(state.cfg))
    codes = encode_features(state.params, state.cfg, feats.frames, tokens, source)
    save_token_streams([TokenSequence(row, state.cfg.model.k) for row in codes], args.out)
    _emit({"codes": args.out, "layers": int(codes.shape[0]), "frames": int(codes.shape[1]),
           "token_source": source}, args)


def cmd_decode(args):
    from .training.evaluate import decode_codes
    from .training.loop import load_checkpoint

    state = load_checkpoint(args.checkpoint)
    streams = load_token_streams(args.codes)
    if len(streams) != state.cfg.model.n_q:
        raise RvqStaError(f"{args.codes}: {len(streams)} code streams, model has {state.cfg.model.n_q} layers")
    codes = np.stack([s.tokens for s in streams])
    xhat = decode_codes(state.params, state.cfg, codes)
    save_features(xhat, args.out)
    _emit({"features": args.out, "frames": int(xhat.shape[0]), "d_in": int(xhat.shape[1])}, args)


def cmd_utilization(args):
    if args.codes:
        per_file = [load_token_streams(p) for p in args.codes]
        n = {len(s) for s in per_file}
        if len(n) != 1:
            raise RvqStaError("code files disagree on the number of layers")
        K = args.k if args.k is not None else max(s.vocab for f in per_file for s in f)
        layers = [[f[i].tokens for f in per_file] for i in range(n.pop())]
        report = codebook_utilization(layers, K)
    else:
        if not (args.checkpoint and args.corpus):
            raise RvqStaError("give --codes, or both --checkpoint and --corpus")
        from .training.evaluate import evaluate
        from .training.loop import load_checkpoint

        state = load_checkpoint(args.checkpoint)
        corpus = load_corpus(load_manifest(args.corpus), require_tokens=False)
        report = evaluate(state.params, state.cfg, corpus, args.token_source).utilization
        if args.k is not None and args.k != report.K:
            raise RvqStaError(f"--k {args.k} does not match the model's codebook size {report.K}")
    text = report.to_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_compare(args):
    reports = {}
    for item in args.reports:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        reports[name] = UtilizationReport.from_dict(json.loads(Path(path).read_text()))
    text = comparison_json(utilization_compare(reports))
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def mask_statistics(T: int, D: int, cfg: ModelConfig, seed: int, n_draws: int) -> dict:
    from .training.loop import rng_stream

    rng = rng_stream(seed, "masking")
    t_on = f_on = 0
    t_frames, f_feats, t_spans, f_spans = [], [], [], []
    for _ in range(n_draws):
        plan = sample_mask_plan(T, D, cfg.mask, rng)
        if plan.axis_active[0]:
            t_on += 1
            t_frames.append(int(plan.masked_frames().sum()))
            t_spans.extend(length for _, length in plan.temporal_spans)
        if plan.axis_active[1]:
            f_on += 1
            f_feats.append(int(plan.masked_features().sum()))
            f_spans.extend(length for _, length in plan.feature_spans)

    def mean(xs):
        return float(np.mean(xs)) if xs else None

    return {
        "draws": n_draws, "T": T, "D": D, "seed": seed,
        "temporal": {"activation_rate": t_on / n_draws, "mean_masked_given_active": mean(t_frames),
                     "mean_span_len": mean(t_spans), "prob": cfg.mask.temporal.prob,
                     "num_spans": cfg.mask.temporal.num_spans, "span_len": cfg.mask.temporal.span_len},
        "feature": {"activation_rate": f_on / n_draws, "mean_masked_given_active": mean(f_feats),
                    "mean_span_len": mean(f_spans), "prob": cfg.mask.feature.prob,
                    "num_spans": cfg.mask.feature.num_spans, "span_len": cfg.mask.feature.span_len},
    }


def cmd_mask_demo(args):
    cfg = _resolve_config(args, default="full")
    stats = mask_statistics(args.frames, args.d_in, cfg, cfg.seed, args.draws)
    print(json.dumps(stats, sort_keys=True, indent=2))


def cmd_gradcheck(args):
    from .training.gradcheck import check_config_stages

    cfg = _resolve_config(args, default="toy")
    results = check_config_stages(cfg, seed=cfg.seed, eps=args.eps)
    ok = all(r.passed(args.tol) for r in results.values())
    out = {name: {"max_rel_error": r.max_rel_error, "checked": r.checked, "skipped": r.skipped}
           for name, r in results.items()}
    out["tolerance"] = args.tol
    out["passed"] = ok
    _emit(out, args)
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def _add_config_flags(p, toggles=True):
    p.add_argument("--config", help="TOML config file (defaults to a built-in preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in config when --config is absent")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--layers", type=int, help="number of RVQ layers N_q")
    p.add_argument("--k", type=int, help="codebook size K per layer")
    p.add_argument("--stage1-steps", type=int, help="steps trained before the distillation stage")
    p.add_argument("--total-steps", type=int, help="total optimization steps")
    if toggles:
        for name, what in (("sta", "semantic token assignment"), ("bt", "bottleneck"),
                           ("tc", "trainable first-layer codebook"), ("mask", "SPD input masking"),
                           ("spd", "token distillation branch")):
            p.add_argument(f"--toggle-{name}", type=_on_off, metavar="on|off", help=what)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rvqsta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="print a config preset as TOML")
    _add_config_flags(p)
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="write a synthetic clustered-feature corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--utterances", type=int, default=200)
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--d-in", type=int, default=8)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--spread", type=float, default=3.0, help="std of the cluster means")
    p.add_argument("--noise", type=float, default=0.5, help="per-frame noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kmeans-fit", help="fit the K-means tokenizer on all corpus frames")
    p.add_argument("--corpus", required=True, help="corpus manifest")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--n-init", type=int, default=10, help="seeded restarts; the lowest inertia wins")
    p.add_argument("--out", required=True, help="output codebook file (single layer)")
    p.add_argument("--json", action="store_true", help="print JSON")
    p.set_defaults(func=cmd_kmeans_fit)

    p = sub.add_parser("tokenize", help="assign tokens to every utterance")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="tokenizer codebook file")
    p.add_argument("--out", required=True, help="output directory for token files and manifest")
    p.add_argument("--json", action="store_true", help="print JSON")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="two-stage training")
    _add_config_flags(p)
    p.add_argument("--corpus", required=True, help="tokenized corpus manifest")
    p.add_argument("--out", required=True, help="output directory (checkpoints, log)")
    p.add_argument("--json", action="store_true", help="print JSON")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("encode", cmd_encode, "features -> code streams"),
                                 ("decode", cmd_decode, "code streams -> features")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        if name == "encode":
            p.add_argument("--features", required=True)
            p.add_argument("--tokens", help="semantic token file (use ground-truth tokens for layer 1)")
            p.add_argument("--token-source", choices=("ground_truth", "distilled"))
        else:
            p.add_argument("--codes", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--json", action="store_true", help="print JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("utilization", help="per-layer codebook utilization report (JSON)")
    p.add_argument("--codes", nargs="+", help="code-stream files")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--token-source", choices=("ground_truth", "distilled"))
    p.add_argument("--k", type=int, help="codebook size")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    p.set_defaults(func=cmd_utilization)

    p = sub.add_parser("compare", help="side-by-side utilization table from reports")
    p.add_argument("reports", nargs="+", help="NAME=report.json (or just report.json)")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mask-demo", help="span-mask sampling statistics (JSON)")
    _add_config_flags(p, toggles=False)
    p.add_argument("--frames", type=int, default=150)
    p.add_argument("--d-in", type=int, default=128)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--json", action="store_true", help="accepted for symmetry; output is always JSON")
    p.set_defaults(func=cmd_mask_demo)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_config_flags(p)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--json", action="store_true", help="print JSON")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except (RvqStaError, OSError, json.JSONDecodeError) as exc:
        print(f"rvqsta {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
