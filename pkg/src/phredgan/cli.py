"""Command-line front end: train, eval, generate, alpha-search, synth, serve.

Exit codes: 0 success, 1 runtime failure, 2 usage error (argparse's own
convention). Every long-running command writes a run manifest into --out
before it starts working, so a run can be identified and replayed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import Config, VARIANTS
from .corpus import (AttributeVocabulary, generate_synthetic_persona_corpus, ingest,
                     tokenize)

log = logging.getLogger("phredgan")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _setup_logging():
    raw = os.environ.get("PHRED_LOG_LEVEL", "info").lower()
    if raw not in LOG_LEVELS:
        raise UsageError(
            f"PHRED_LOG_LEVEL={raw!r} is invalid; use one of {', '.join(sorted(LOG_LEVELS))}")
    logging.basicConfig(level=LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")


def _file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _write_run_manifest(out_dir: Path, command: str, config: Config | None,
                        seed: int | None, inputs: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config.to_dict() if config is not None else None,
        "seed": seed,
        "inputs": {str(k): _file_fingerprint(v) for k, v in inputs.items() if Path(v).is_file()},
        "out": str(out_dir),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                               encoding="utf-8")
    return manifest


def _load_config(args) -> Config:
    config = Config.from_file(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = config.replace(**overrides)
    return config


def _ingest_split(data_dir: Path, name: str, config: Config, vocab=None, attr_vocab=None,
                  required=True, strict_attributes=False):
    path = data_dir / name
    if not path.is_file():
        if required:
            raise FileNotFoundError(f"missing {path}")
        return None, vocab, attr_vocab
    convs, vocab, attr_vocab, report = ingest(
        path, vocab_size=config.vocab_size, attr_vocab=attr_vocab, vocab=vocab,
        strict_attributes=strict_attributes)
    log.info("%s: %d conversations, oov %.4f, %d rejected", name, report.conversations,
             report.oov_rate, len(report.rejected_conversations))
    return convs, vocab, attr_vocab


def _load_attr_vocab(data_dir: Path) -> AttributeVocabulary | None:
    path = data_dir / "attributes.txt"
    return AttributeVocabulary.load(path) if path.is_file() else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    from .training import train

    config = _load_config(args)
    data_dir, out_dir = Path(args.data), Path(args.out)
    attr_vocab = _load_attr_vocab(data_dir)
    convs, vocab, attr_vocab = _ingest_split(data_dir, "train.jsonl", config,
                                             attr_vocab=attr_vocab)
    if not convs:
        raise RuntimeError(f"no usable conversations in {data_dir / 'train.jsonl'}")
    _write_run_manifest(out_dir, "train", config, config.seed,
                        {"train": data_dir / "train.jsonl"})
    report = train(config, convs, vocab, attr_vocab, out_dir=out_dir,
                   log_path=out_dir / "train_log.jsonl")
    summary = {
        "steps": len(report.steps),
        "final_mle": report.final_mle,
        "aborted": report.aborted,
        "abort_reason": report.abort_reason,
        "checkpoint": report.checkpoint_path,
        "wall_clock_sec": report.wall_clock,
    }
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    if report.aborted:
        log.error("training aborted: %s", report.abort_reason)
        return 1
    return 0


def _iter_eval_contexts(conversations, max_contexts: int | None):
    """(context_id, context turns, target attr, reference tokens) per response turn."""
    n = 0
    for conv in conversations:
        for i in range(1, len(conv.turns)):
            if max_contexts is not None and n >= max_contexts:
                return
            context = [(t.attribute_id, t.tokens) for t in conv.turns[:i]]
            ref = conv.turns[i]
            yield f"{conv.id}#{i}", context, ref.attribute_id, ref.tokens
            n += 1


def cmd_generate(args) -> int:
    from .checkpoint import load_checkpoint
    from .inference import generate

    snap = load_checkpoint(args.checkpoint)
    config = snap.config
    data_dir, out_dir = Path(args.data), Path(args.out)
    attr_vocab = snap.attr_vocab
    convs, _, _ = _ingest_split(data_dir, args.split, config, vocab=snap.vocab,
                                attr_vocab=attr_vocab, strict_attributes=True)
    _write_run_manifest(out_dir, "generate", config, args.seed,
                        {"data": data_dir / args.split})
    out_path = out_dir / "generations.jsonl"
    n = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for ctx_id, context, attr_id, ref in _iter_eval_contexts(convs, args.max_contexts):
            cands = generate(snap, context, attr_id, n_candidates=args.num_candidates,
                             seed=args.seed + n, alpha=args.alpha)
            fh.write(json.dumps({
                "context_id": ctx_id,
                "respond_as": attr_vocab.labels[attr_id],
                "hypothesis": cands[0].text,
                "reference": snap.vocab.decode(ref),
                "candidates": [c.to_json() for c in cands],
            }) + "\n")
            n += 1
    log.info("wrote %d generations to %s", n, out_path)
    print(str(out_path))
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_pairs, perplexity

    pairs_path = Path(args.pairs)
    if not pairs_path.is_file():
        raise FileNotFoundError(f"missing pairs file {pairs_path}")
    hyps, refs = [], []
    with open(pairs_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            hyps.append(tokenize(obj["hypothesis"]))
            refs.append(tokenize(obj["reference"]))
    if not hyps:
        raise RuntimeError(f"{pairs_path} holds no samples")
    ppl = None
    if args.checkpoint and args.data:
        from .checkpoint import load_checkpoint

        snap = load_checkpoint(args.checkpoint)
        convs, _, _ = _ingest_split(Path(args.data), args.split, snap.config,
                                    vocab=snap.vocab, attr_vocab=snap.attr_vocab,
                                    strict_attributes=True)
        ppl = perplexity(snap, convs, no_noise=args.no_noise)
    report = evaluate_pairs(hyps, refs, ppl=ppl)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(json.dumps(report.to_json(), indent=2) + "\n",
                                       encoding="utf-8")
    print(json.dumps(report.to_json()))
    return 0


def cmd_alpha_search(args) -> int:
    from .checkpoint import load_checkpoint
    from .inference import alpha_search

    snap = load_checkpoint(args.checkpoint)
    data_dir, out_dir = Path(args.data), Path(args.out)
    convs, _, _ = _ingest_split(data_dir, args.split, snap.config, vocab=snap.vocab,
                                attr_vocab=snap.attr_vocab, strict_attributes=True)
    _write_run_manifest(out_dir, "alpha-search", snap.config, args.seed,
                        {"data": data_dir / args.split})
    grid = list(range(args.grid_min, args.grid_max + 1))
    best, table = alpha_search(snap, convs, grid=grid, seed=args.seed)
    payload = {"best_alpha": best, "table": [[a, s] for a, s in table]}
    (out_dir / "alpha.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(payload))
    return 0


def cmd_synth(args) -> int:
    manifest = generate_synthetic_persona_corpus(
        args.out, n_convs=args.n_convs, n_attrs=args.n_attrs,
        signature_rate=args.signature_rate, seed=args.seed)
    log.info("synthetic corpus with %d conversations at %s", args.n_convs, args.out)
    print(json.dumps({"out": str(args.out), "attributes": sorted(manifest["signatures"])}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    ui_dir = args.ui_dir if args.ui_dir and Path(args.ui_dir).is_dir() else None
    app = build_app(snapshot_dir=args.snapshot_dir, seed_mode=args.seed_mode,
                    persist_dir=args.persist, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phredgan",
                                description="Persona-conditioned adversarial dialogue models.")
    p.add_argument("--version", action="version", version=f"phredgan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model variant on a corpus directory")
    tr.add_argument("--config", help="flat JSON config file")
    tr.add_argument("--data", required=True, help="directory with train.jsonl [+ attributes.txt]")
    tr.add_argument("--out", required=True)
    tr.add_argument("--variant", choices=VARIANTS)
    tr.add_argument("--seed", type=int)
    tr.set_defaults(fn=cmd_train)

    ge = sub.add_parser("generate", help="decode ranked responses over a data split")
    ge.add_argument("--checkpoint", required=True)
    ge.add_argument("--data", required=True)
    ge.add_argument("--split", default="test.jsonl")
    ge.add_argument("--out", required=True)
    ge.add_argument("--num-candidates", "--L", dest="num_candidates", type=int, default=1)
    ge.add_argument("--alpha", type=float, default=None,
                    help="noise std at decode time (default: training std)")
    ge.add_argument("--seed", type=int, default=0)
    ge.add_argument("--max-contexts", type=int, default=None)
    ge.set_defaults(fn=cmd_generate)

    ev = sub.add_parser("eval", help="score hypothesis/reference pairs")
    ev.add_argument("--pairs", required=True,
                    help='JSONL with {"context_id", "hypothesis", "reference"}')
    ev.add_argument("--out", required=True)
    ev.add_argument("--checkpoint", help="also compute teacher-forced perplexity")
    ev.add_argument("--data", help="data dir for perplexity")
    ev.add_argument("--split", default="test.jsonl")
    ev.add_argument("--no-noise", action="store_true",
                    help="zero the decoder noise during perplexity")
    ev.set_defaults(fn=cmd_eval)

    al = sub.add_parser("alpha-search", help="linear search of the decode noise std")
    al.add_argument("--checkpoint", required=True)
    al.add_argument("--data", required=True)
    al.add_argument("--split", default="valid.jsonl")
    al.add_argument("--out", required=True)
    al.add_argument("--grid-min", type=int, default=1)
    al.add_argument("--grid-max", type=int, default=30)
    al.add_argument("--seed", type=int, default=0)
    al.set_defaults(fn=cmd_alpha_search)

    sy = sub.add_parser("synth", help="write a synthetic persona corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n-convs", type=int, default=2000)
    sy.add_argument("--n-attrs", type=int, default=2)
    sy.add_argument("--signature-rate", type=float, default=0.8)
    sy.add_argument("--seed", type=int, default=1234)
    sy.set_defaults(fn=cmd_synth)

    se = sub.add_parser("serve", help="HTTP chat service over trained snapshots")
    se.add_argument("--snapshot-dir", required=True,
                    help="directory whose subdirectories are checkpoints")
    se.add_argument("--port", type=int, default=8000)
    se.add_argument("--host", default="127.0.0.1")
    se.add_argument("--persist", default=None, help="directory for transcript JSONL persistence")
    se.add_argument("--seed-mode", choices=("fixed", "entropy"), default="fixed")
    se.add_argument("--ui-dir", default="frontend/dist",
                    help="static UI bundle mounted at /ui when the directory exists")
    se.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        # bad config keys / values are usage errors, not crashes
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
