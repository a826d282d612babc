"""Command-line front end.

Subcommands: ``init``, ``simulate``, ``sweep``, ``bench``, ``score`` and
``bench-kernels``.  Exit codes: 0 success, 1 runtime error, 2 usage or
configuration error.  ``AUGMEM_LOG`` sets the log level.

Sweep CSV columns (fixed): cell, variant, k, segment, memory, chunk,
recompute_chunk, n_streams, n_tokens, BLEU, AL_NCA_ms, AL_CA_ms.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import backend
from .decoder import greedy_decode
from .encoder import encode_full
from .errors import AugmemError, ConfigError
from .io_ingest import Vocab, load_features, synth_stream
from .metrics import al_report, corpus_bleu
from .model_core import EOS, ModelConfig, SegmentSpec, init_weights, load_checkpoint, save_checkpoint
from .policy import make_policy
from .session import run_streaming

log = logging.getLogger("augmem")

SWEEP_COLUMNS = [
    "cell", "variant", "k", "segment", "memory", "chunk", "recompute_chunk",
    "n_streams", "n_tokens", "BLEU", "AL_NCA_ms", "AL_CA_ms",
]
TIMING_FIELDS = ("clock_ms", "compute_ms")
SYNTH_KINDS = ("constant", "sine", "seeded-noise", "noise")


class UsageError(Exception):
    pass


# -- argument helpers -------------------------------------------------------------


def parse_memory(text):
    if text is None:
        return None
    if str(text).lower() in ("inf", "none", "unbounded", "∞"):
        return None
    try:
        n = int(text)
    except ValueError:
        raise UsageError(f"--memory must be an integer or 'inf', got {text!r}") from None
    if n < 0:
        raise UsageError(f"--memory must be >= 0, got {n}")
    return n


def parse_int_list(text, flag):
    items = [t for t in str(text).split(",") if t.strip()]
    try:
        return [int(t) for t in items]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None


def parse_synth(text):
    """``KIND:FRAMES[:SEED]``, e.g. ``noise:2000:7``."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"--synth expects KIND:FRAMES[:SEED], got {text!r}")
    try:
        n = int(parts[1])
        seed = int(parts[2]) if len(parts) == 3 else 0
    except ValueError:
        raise UsageError(f"--synth expects integer frames/seed, got {text!r}") from None
    if parts[0] not in SYNTH_KINDS:
        raise UsageError(f"--synth kind must be one of {', '.join(SYNTH_KINDS)}, got {parts[0]!r}")
    if n < 1:
        raise UsageError("--synth needs at least one frame")
    return parts[0], n, seed


def parse_positive(text, flag):
    try:
        n = int(text)
    except ValueError:
        raise UsageError(f"{flag} expects a positive integer, got {text!r}") from None
    if n < 1:
        raise UsageError(f"{flag} expects a positive integer, got {n}")
    return n


def policy_from_args(name, k):
    try:
        return make_policy(name, k)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_config_file(ref) -> tuple[dict, dict]:
    """Returns (model dict, sweep dict) from a preset name or a JSON path."""
    if ref is None:
        ref = "desk"
    path = Path(ref)
    if path.suffix != ".json" and not path.exists():
        try:
            text = resources.files("augmem").joinpath("presets", f"{ref}.json").read_text()
        except FileNotFoundError:
            raise ConfigError(f"no preset or config file named {ref!r}") from None
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {ref} is not valid JSON: {exc}") from None
    if "model" in data:
        return data["model"], data.get("sweep", {})
    return data, {}


def apply_sets(model: dict, sets):
    for item in sets or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            model[key] = json.loads(value)
        except json.JSONDecodeError:
            model[key] = value
    return model


def resolve_model(args):
    """Weights and config from ``--weights`` (checkpoint) or ``--config`` + ``--seed``."""
    overrides = {}
    if getattr(args, "segment", None):
        overrides["segment"] = SegmentSpec.parse(args.segment)
    if getattr(args, "memory", None) is not None:
        overrides["max_memory"] = parse_memory(args.memory)
    if getattr(args, "chunk", None) is not None:
        overrides["predecision_chunk"] = args.chunk
    if getattr(args, "k", None) is not None and isinstance(args.k, int):
        overrides["waitk"] = args.k
    if args.weights:
        weights, config = load_checkpoint(args.weights)
        if getattr(args, "set", None):
            raise UsageError("--set changes the architecture; use it with --config, not --weights")
        config = config.replace(**overrides) if overrides else config
        return weights, config.validate()
    model, _ = load_config_file(args.config)
    model = apply_sets(dict(model), getattr(args, "set", None))
    model.update(overrides)
    config = ModelConfig.from_dict(model)
    return init_weights(config, args.seed), config


def load_inputs(args, config):
    streams = []
    for path in args.input or []:
        streams.append(load_features(path))
    for spec in args.synth or []:
        kind, n, seed = parse_synth(spec)
        streams.append(synth_stream(kind, n, config.d_feat, seed, config.frame_shift_ms))
    if not streams:
        raise UsageError("no input: give --input FILE and/or --synth KIND:FRAMES[:SEED]")
    for s in streams:
        s.check_dim(config.d_feat)
    return streams


def offline_reference(stream, weights, config):
    """Greedy translation of the whole utterance with the bidirectional encoder."""
    enc = encode_full(stream.frames, weights, config)
    return [t for t in greedy_decode(enc, weights, config) if t != EOS]


def _strip_eos(tokens):
    return [t for t in tokens if t != EOS]


def strip_timing(run_log: dict) -> dict:
    out = json.loads(json.dumps(run_log))
    for rec in out.get("delays", []):
        for f in TIMING_FIELDS:
            rec.pop(f, None)
    inst = out.get("instrumentation", {})
    for key in list(inst):
        if key.endswith("_ms"):
            inst.pop(key)
    if "report" in out:
        out["report"].pop("AL_CA_ms", None)
    return out


# -- commands ---------------------------------------------------------------------


def cmd_init(args):
    model, _ = load_config_file(args.config)
    config = ModelConfig.from_dict(apply_sets(dict(model), args.set))
    weights = init_weights(config, args.seed)
    save_checkpoint(weights, config, args.out)
    n_params = sum(int(np.prod(a.shape)) for a in weights.values())
    print(f"wrote {args.out}: {len(weights)} tensors, {n_params} parameters, checksum {weights.checksum()}")
    return 0


def _simulate_one(stream, weights, config, args, timer):
    policy = policy_from_args(args.policy, args.k)
    result = run_streaming(stream, weights, config, policy, variant=args.variant,
                           recompute_chunk=args.recompute_chunk, timer=timer)
    ref = None if args.no_reference else offline_reference(stream, weights, config)
    if args.ref_len == "paced":
        ref_len = result.paced_ref_len
    elif args.ref_len:
        ref_len = parse_positive(args.ref_len, "--ref-len")
    else:
        ref_len = len(ref) + 1 if ref is not None else None
    bleu = corpus_bleu([_strip_eos(result.tokens)], [ref]) if ref is not None else None
    return result, result.report(ref_len=ref_len, bleu=bleu), ref


def cmd_simulate(args):
    weights, config = resolve_model(args)
    streams = load_inputs(args, config)
    vocab = Vocab.load(args.vocab) if args.vocab else Vocab.synthetic(config.vocab_size)
    timer = None if args.no_timing else time.perf_counter
    logs, hyps, refs = [], [], []
    for stream in streams:
        result, report, ref = _simulate_one(stream, weights, config, args, timer)
        run_log = result.to_log(config, vocab, report)
        run_log["reference"] = ref
        logs.append(run_log)
        hyps.append(_strip_eos(result.tokens))
        refs.append(ref)
        print(f"{stream.source_id}: {len(result.tokens)} tokens  AL_NCA={report.al_nca_ms:.1f} ms  "
              f"AL_CA={report.al_ca_ms:.1f} ms" + (f"  BLEU={report.bleu:.4f}" if report.bleu is not None else ""))
    aggregate = {
        "n_streams": len(logs),
        "AL_NCA_ms": float(np.mean([l["report"]["AL_NCA_ms"] for l in logs])),
        "AL_CA_ms": float(np.mean([l["report"]["AL_CA_ms"] for l in logs])),
        "BLEU": None if args.no_reference else corpus_bleu(hyps, refs),
    }
    doc = {"runs": logs, "aggregate": aggregate}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True))
        log.info("run log written to %s", args.out)
    return 0


def _run_cell(payload):
    cell, params, weights_path, config_dict, seed, streams, no_reference, timer_on = payload
    if weights_path:
        weights, base = load_checkpoint(weights_path)
    else:
        base = ModelConfig.from_dict(config_dict)
        weights = init_weights(base, seed)
    config = base.replace(segment=SegmentSpec.parse(params["segment"]), max_memory=params["memory"],
                          waitk=params["k"], predecision_chunk=params["chunk"]).validate()
    hyps, refs, nca, ca, n_tok = [], [], [], [], 0
    for stream in streams:
        result = run_streaming(stream, weights, config, make_policy("waitk", params["k"]),
                               variant=params["variant"], recompute_chunk=params["recompute_chunk"],
                               timer=time.perf_counter if timer_on else None)
        ref = None if no_reference else offline_reference(stream, weights, base)
        rep = result.report(ref_len=len(ref) + 1 if ref is not None else None)
        nca.append(rep.al_nca_ms)
        ca.append(rep.al_ca_ms)
        n_tok += rep.n_tokens
        hyps.append(_strip_eos(result.tokens))
        refs.append(ref)
    row = {"cell": cell, **params, "memory": "inf" if params["memory"] is None else params["memory"],
           "n_streams": len(streams), "n_tokens": n_tok,
           "BLEU": "" if no_reference else f"{corpus_bleu(hyps, refs):.6f}",
           "AL_NCA_ms": f"{np.mean(nca):.3f}", "AL_CA_ms": f"{np.mean(ca):.3f}"}
    return cell, row


def sweep_grid(k_values, segments, memories, variants):
    return [
        {"k": k, "segment": seg, "memory": mem, "variant": var}
        for k, seg, mem, var in itertools.product(k_values, segments, memories, variants)
    ]


def cmd_sweep(args):
    model, preset = load_config_file(args.config)
    k_values = parse_int_list(args.k, "--k") if args.k is not None else preset.get("k", [])
    segments = args.segment or preset.get("segment", [])
    memories = ([parse_memory(m) for m in args.memory.split(",") if m.strip()]
                if args.memory is not None else preset.get("memory", []))
    variants = args.variant or preset.get("variant", ["augmem"])
    for seg in segments:
        SegmentSpec.parse(seg)
    for k in k_values:
        policy_from_args("waitk", k)
    grid = sweep_grid(k_values, segments, memories, variants)
    if not grid:
        raise UsageError("sweep grid is empty; give at least one value for --k, --segment, --memory and --variant")
    if args.weights:
        _, base = load_checkpoint(args.weights)
        config_dict = None
    else:
        base = ModelConfig.from_dict(apply_sets(dict(model), args.set))
        config_dict = base.to_dict()
    streams = load_inputs(args, base)
    payloads = []
    for i, params in enumerate(grid):
        params = dict(params, chunk=args.chunk or base.predecision_chunk, recompute_chunk=args.recompute_chunk)
        payloads.append((i, params, args.weights, config_dict, args.seed, streams, args.no_reference, not args.no_timing))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = dict(pool.map(_run_cell, payloads))
    else:
        rows = dict(map(_run_cell, payloads))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for i in range(len(payloads)):
            writer.writerow({c: rows[i][c] for c in SWEEP_COLUMNS})
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _slope(values):
    y = np.asarray(values, dtype=np.float64)
    if len(y) < 2:
        return 0.0
    return float(np.polyfit(np.arange(len(y)), y, 1)[0])


def cmd_bench(args):
    weights, config = resolve_model(args)
    stream = synth_stream("seeded-noise", args.frames, config.d_feat, args.seed, config.frame_shift_ms)
    t0 = time.perf_counter()
    result = run_streaming(stream, weights, config, make_policy("waitk", config.waitk),
                           variant=args.variant, recompute_chunk=args.recompute_chunk)
    wall = time.perf_counter() - t0
    inst = result.instrumentation
    seg_ms = inst["segment_ms"]
    tok_ms = [r.compute_ms for r in result.streaming_records()]
    bound = None
    if args.variant == "augmem":
        n = config.max_memory
        bound = None if n is None else n + config.segment.span
    report = {
        "variant": args.variant,
        "backend": backend.name(),
        "frames": args.frames,
        "wall_s": wall,
        "segments": len(seg_ms),
        "segment_ms_mean": float(np.mean(seg_ms)) if seg_ms else 0.0,
        "segment_ms_slope": _slope(seg_ms),
        "segment_slope_rel": _slope(seg_ms) / float(np.mean(seg_ms)) if seg_ms else 0.0,
        "streaming_tokens": len(tok_ms),
        "per_token_ms_mean": float(np.mean(tok_ms)) if tok_ms else 0.0,
        "per_token_ms_slope": _slope(tok_ms),
        "per_token_slope_rel": _slope(tok_ms) / float(np.mean(tok_ms)) if tok_ms else 0.0,
        "max_key_len": inst["max_key_len"],
        "key_len_bound": bound,
        "max_retained_rows": inst["max_retained_rows"],
        "rows_computed": inst["rows_computed"],
    }
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_score(args):
    try:
        doc = json.loads(Path(args.log).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read run log {args.log}: {exc}") from None
    rows = []
    for run in doc.get("runs", [doc]):
        meta = run["run"]
        ref = run.get("reference")
        ref_len = args.ref_len or (len(ref) + 1 if ref else None)
        bleu = corpus_bleu([_strip_eos(run["tokens"])], [ref]) if ref is not None else None
        rep = al_report(run["delays"], meta["source_frames"], meta["frame_shift_ms"], ref_len, bleu)
        rows.append({"source_id": meta["source_id"], **rep.as_dict()})
    if args.format == "csv":
        fields = ["source_id", "AL_NCA_ms", "AL_CA_ms", "BLEU", "n_tokens", "source_ms"]
        out = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            writer = csv.DictWriter(out, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
        finally:
            if out is not sys.stdout:
                out.close()
    else:
        text = json.dumps(rows, indent=1)
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text)
    return 0


def cmd_bench_kernels(args):
    from .bench import compare_backends

    report = compare_backends(args.d_model, args.rows, args.repeat)
    print(json.dumps(report, indent=1))
    return 0


# -- parser -----------------------------------------------------------------------


def _model_flags(p, with_set=True):
    p.add_argument("--config", help="preset name (desk, contrast, base) or JSON file")
    p.add_argument("--weights", help="checkpoint file; its config wins over --config")
    p.add_argument("--seed", type=int, default=0)
    if with_set:
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a model config field")


def _input_flags(p):
    p.add_argument("--input", action="append", help="feature file (repeatable)")
    p.add_argument("--synth", action="append", help="synthetic stream KIND:FRAMES[:SEED] (repeatable)")
    p.add_argument("--no-reference", action="store_true", help="skip the offline reference (no BLEU)")
    p.add_argument("--no-timing", action="store_true", help="charge zero compute time (deterministic clock)")


def build_parser():
    parser = argparse.ArgumentParser(prog="augmem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a seeded checkpoint")
    p.add_argument("--config", help="preset name or JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("simulate", help="stream inputs through the simultaneous system")
    _model_flags(p)
    _input_flags(p)
    p.add_argument("--policy", default="waitk", help="waitk or wait-inf")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--segment", help="L,C,R in encoder positions")
    p.add_argument("--memory", help="max memory banks N (integer or inf)")
    p.add_argument("--chunk", type=int, help="pre-decision chunk W in encoder states")
    p.add_argument("--variant", default="augmem", choices=["augmem", "unidirectional", "full"])
    p.add_argument("--recompute-chunk", type=int, default=8)
    p.add_argument("--ref-len", help="reference length |Y*| for AL: an integer, or 'paced' for one token per chunk")
    p.add_argument("--vocab", help="vocabulary file (one token per line)")
    p.add_argument("--out", help="run log JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid over k, segment, memory and variant; CSV out")
    _model_flags(p)
    _input_flags(p)
    p.add_argument("--k", help="comma-separated k values")
    p.add_argument("--segment", action="append", help="L,C,R (repeatable)")
    p.add_argument("--memory", help="comma-separated N values (inf allowed)")
    p.add_argument("--variant", action="append", choices=["augmem", "unidirectional", "full"])
    p.add_argument("--chunk", type=int)
    p.add_argument("--recompute-chunk", type=int, default=8)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="long synthetic stream resource report")
    _model_flags(p)
    p.add_argument("--frames", type=int, default=10000)
    p.add_argument("--variant", default="augmem", choices=["augmem", "unidirectional", "full"])
    p.add_argument("--recompute-chunk", type=int, default=1)
    p.add_argument("--segment")
    p.add_argument("--memory")
    p.add_argument("--chunk", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("score", help="AL/BLEU report from a run log")
    p.add_argument("log")
    p.add_argument("--ref-len", type=int)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench-kernels", help="compiled vs pure-Python kernel timings")
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench_kernels)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AUGMEM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"augmem: error: {exc}", file=sys.stderr)
        return 2
    except (AugmemError, OSError, ValueError) as exc:
        print(f"augmem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
