"""Command-line entry point: ``slidingasr <command> ...`` (or ``python -m slidingasr``).

Exit codes: 0 ok, 2 bad arguments, 3 bad audio, 4 bad weights.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import bench, costmodel, frontend
from .adapter import AdapterWindowExceeded
from .config import PRESET_NAMES, ConfigError, load_config, preset_config
from .config import count_params
from .reference import pipeline_full
from .session import SessionConfig, StreamingSession
from .weights import WeightFileError, init_weights, load_weights

EXIT_OK, EXIT_ARGS, EXIT_AUDIO, EXIT_WEIGHTS = 0, 2, 3, 4
THREADS_ENV = "MSV2_THREADS"

log = logging.getLogger("slidingasr")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive(kind):
    def parse(text: str):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


# -- shared helpers ------------------------------------------------------------

def _add_weight_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weights", type=Path, help="MSV2 weight file")
    g.add_argument("--random-seed", type=int, help="random weights from this seed (default 0)")
    p.add_argument("--size", default="tiny", choices=PRESET_NAMES,
                   help="preset for --random-seed weights (default: tiny)")


def _weights(args):
    if args.weights is not None:
        try:
            return load_weights(args.weights)
        except FileNotFoundError:
            raise CliError(f"{args.weights}: no such weight file", EXIT_WEIGHTS)
        except (WeightFileError, ConfigError) as exc:
            raise CliError(str(exc), EXIT_WEIGHTS)
    seed = 0 if args.random_seed is None else args.random_seed
    return init_weights(preset_config(args.size), seed)


def _read_audio(path: Path, raw: bool):
    try:
        if raw:
            return frontend.read_raw_f32(path)
        return frontend.read_wav(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file", EXIT_AUDIO)
    except frontend.AudioError as exc:
        raise CliError(str(exc), EXIT_AUDIO)


def _emit_text(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        log.info("wrote %s", out)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _chunks(samples, chunk_ms: float):
    step = max(1, int(round(chunk_ms * frontend.SAMPLE_RATE / 1000.0)))
    for i in range(0, samples.size, step):
        yield samples[i:i + step]


# -- commands -----------------------------------------------------------------

def cmd_transcribe(args) -> int:
    weights = _weights(args)
    samples = _read_audio(args.audio, args.raw)
    try:
        if args.mode == "full":
            res = pipeline_full(samples, weights, max_tokens=args.max_tokens)
            out = {"mode": "full", "text": res.text, "tokens": res.tokens, "timing": res.as_dict()}
        else:
            sess = StreamingSession(weights, SessionConfig(
                decode_cadence_ms=args.cadence_ms, max_tokens=args.max_tokens, auto_segment=False))
            for chunk in _chunks(samples, args.chunk_ms):
                sess.feed_audio(chunk)
            if sess.pending_frames:
                sess.end_of_speech()
            out = {"mode": "streaming", "text": sess.transcript,
                   "tokens": [t for r in sess.results for t in r.tokens],
                   "reports": [r.to_dict() for r in sess.reports]}
    except AdapterWindowExceeded as exc:
        raise CliError(f"audio too long for full mode: {exc}", EXIT_AUDIO)
    except frontend.AudioError as exc:
        raise CliError(str(exc), EXIT_AUDIO)
    print(json.dumps(out))
    return EXIT_OK


def cmd_stream(args) -> int:
    weights = _weights(args)
    chunk = max(1, int(round(args.chunk_ms * frontend.SAMPLE_RATE / 1000.0)))
    with contextlib.ExitStack() as stack:
        if str(args.audio) == "-":
            src, name = sys.stdin.buffer, "<stdin>"
        else:
            try:
                src = stack.enter_context(open(args.audio, "rb"))
            except FileNotFoundError:
                raise CliError(f"{args.audio}: no such file", EXIT_AUDIO)
            name = str(args.audio)
        reader = (frontend.iter_raw_f32_chunks(src, chunk) if args.raw
                  else frontend.iter_wav_chunks(src, chunk, name))
        sess = StreamingSession(weights, SessionConfig(
            decode_cadence_ms=args.cadence_ms, max_tokens=args.max_tokens))
        try:
            for samples in reader:
                for ev in sess.feed_audio(samples):
                    print(ev.to_json(), flush=True)
        except frontend.AudioError as exc:
            raise CliError(str(exc), EXIT_AUDIO)
    if sess.pending_speech:
        print(sess.end_of_speech().event.to_json(), flush=True)
    if args.report is not None:
        _emit_text(json.dumps([r.to_dict() for r in sess.reports], indent=2) + "\n", args.report)
    return EXIT_OK


def cmd_bench_ttft(args) -> int:
    weights = _weights(args)
    try:
        rows = bench.bench_ttft(weights, args.durations, seed=args.seed,
                                repetitions=args.repetitions, chunk_ms=args.chunk_ms,
                                full_repetitions=args.full_repetitions)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS)
    if args.format == "json":
        text = json.dumps([dict(zip(bench.TTFT_HEADER, r.as_tuple())) for r in rows], indent=2) + "\n"
    else:
        text = _csv(bench.TTFT_HEADER, [r.as_tuple() for r in rows])
    _emit_text(text, args.out)
    if args.plot is not None:
        from .plotting import plot_ttft
        plot_ttft(rows, args.plot)
    return EXIT_OK


def cmd_bench_latency(args) -> int:
    weights = _weights(args)
    if args.audio is not None:
        samples = _read_audio(args.audio, args.raw)
    else:
        samples = bench.speech_like(args.synthetic, seed=args.seed,
                                    silence_before_s=args.silence_before,
                                    silence_after_s=args.silence_after)
    try:
        summary = bench.bench_latency(samples, weights, chunk_ms=args.chunk_ms,
                                      config=SessionConfig(max_tokens=args.max_tokens))
    except bench.NoSpeechError as exc:
        raise CliError(str(exc), EXIT_AUDIO)
    if args.format == "csv":
        keys = ["latency_ms", "compute_load_pct", "segments", "audio_ms", "processing_ms"]
        text = _csv(keys, [[summary[k] for k in keys]])
    else:
        text = json.dumps(summary, indent=2) + "\n"
    _emit_text(text, args.out)
    return EXIT_OK


def cmd_param_count(args) -> int:
    try:
        if args.model in PRESET_NAMES:
            cfg = preset_config(args.model)
        elif Path(args.model).is_file():
            cfg = load_config(args.model)
        else:
            raise CliError(f"unknown size {args.model!r}; choose from {', '.join(PRESET_NAMES)} "
                           "or pass a config JSON path", EXIT_ARGS)
    except (ConfigError, json.JSONDecodeError) as exc:
        raise CliError(f"{args.model}: {exc}", EXIT_ARGS)
    counts = count_params(cfg).as_dict()
    if args.format == "csv":
        text = _csv(list(counts), [list(counts.values())])
    else:
        text = json.dumps({"model": cfg.name or args.model, "params": counts,
                           "params_millions": {k: v / 1e6 for k, v in counts.items()}}, indent=2) + "\n"
    _emit_text(text, args.out)
    return EXIT_OK


def cmd_cost_model(args) -> int:
    try:
        params = costmodel.CostModelParams(P=args.P, d=args.d, L=args.L, w=args.w,
                                           threshold_ms=args.threshold_ms)
        grid = costmodel.audio_grid(args.n_start, args.n_stop, args.n_step)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_ARGS)
    header, rows = costmodel.fig1_rows(params, grid, args.tops, args.sliding_tops)
    crossings = {f"{t:g} TOPS": costmodel.threshold_crossing(params.at(t)) for t in args.tops}
    if args.format == "json":
        text = json.dumps({
            "params": params.__dict__,
            "threshold_crossing_s": crossings,
            "ttft_sliding_ms": costmodel.ttft_sliding_ms(params.at(args.sliding_tops)),
            "rows": [dict(zip(header, r)) for r in rows],
        }, indent=2) + "\n"
    else:
        text = costmodel.emit_fig1_csv(params, grid, args.tops, args.sliding_tops)
    _emit_text(text, args.out)
    if args.plot is not None:
        from .plotting import plot_cost_model
        plot_cost_model(header, rows, args.plot, crossings)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slidingasr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transcribe", help="transcribe a WAV file")
    p.add_argument("audio", type=Path)
    _add_weight_args(p)
    p.add_argument("--mode", choices=("streaming", "full"), default="streaming")
    p.add_argument("--chunk-ms", type=_positive(float), default=100.0)
    p.add_argument("--cadence-ms", type=_positive(float), default=None,
                   help="provisional decode cadence (default: none, final decode only)")
    p.add_argument("--max-tokens", type=_positive(int), default=16)
    p.add_argument("--raw", action="store_true", help="input is headerless float32 LE")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("stream", help="caption events (JSONL) from a file or '-' for stdin")
    p.add_argument("audio", type=Path)
    _add_weight_args(p)
    p.add_argument("--chunk-ms", type=_positive(float), default=100.0)
    p.add_argument("--cadence-ms", type=_positive(float), default=320.0)
    p.add_argument("--max-tokens", type=_positive(int), default=16)
    p.add_argument("--raw", action="store_true", help="input is headerless float32 LE")
    p.add_argument("--report", type=Path, help="write per-segment latency reports (JSON) here")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("bench-ttft", help="TTFT vs audio length, streaming and full")
    _add_weight_args(p)
    p.add_argument("--durations", type=_float_list, default=[float(d) for d in range(1, 11)],
                   help="comma-separated seconds (default 1..10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=_positive(int), default=3,
                   help="timed runs per duration; the minimum is reported")
    p.add_argument("--full-repetitions", type=_positive(int),
                   help="timed runs of the full pipeline (default: --repetitions)")
    p.add_argument("--chunk-ms", type=_positive(float), default=100.0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", type=Path, help="write a PNG figure here")
    p.set_defaults(func=cmd_bench_ttft)

    p = sub.add_parser("bench-latency", help="response latency and compute load")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--audio", type=Path)
    src.add_argument("--synthetic", type=_positive(float), metavar="SECONDS",
                     help="synthetic speech-like audio of this length")
    _add_weight_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--silence-before", type=float, default=0.0)
    p.add_argument("--silence-after", type=float, default=1.0)
    p.add_argument("--chunk-ms", type=_positive(float), default=100.0)
    p.add_argument("--max-tokens", type=_positive(int), default=16)
    p.add_argument("--raw", action="store_true")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench_latency)

    p = sub.add_parser("param-count", help="parameter breakdown of a preset or config JSON")
    p.add_argument("model", help=f"one of {', '.join(PRESET_NAMES)} or a config JSON path")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("cost-model", help="analytic TTFT curves as CSV")
    d = costmodel.CostModelParams()
    p.add_argument("--P", type=_positive(float), default=d.P, help="encoder parameters")
    p.add_argument("--d", type=_positive(int), default=d.d, help="model width")
    p.add_argument("--L", type=_positive(int), default=d.L, help="layers")
    p.add_argument("--w", type=_positive(int), default=d.w, help="window frames")
    p.add_argument("--tops", type=_float_list, default=[0.1, 0.5, 1.0],
                   help="comma-separated throughputs for full attention")
    p.add_argument("--sliding-tops", type=_positive(float), default=0.1)
    p.add_argument("--threshold-ms", type=float, default=d.threshold_ms)
    p.add_argument("--n-start", type=float, default=0.5)
    p.add_argument("--n-stop", type=float, default=30.0)
    p.add_argument("--n-step", type=float, default=0.5)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", type=Path, help="write a PNG figure here")
    p.set_defaults(func=cmd_cost_model)
    return ap


def _thread_limit() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", EXIT_ARGS)
    return n


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_limit()
        with contextlib.ExitStack() as stack:
            if threads is not None:
                from threadpoolctl import threadpool_limits
                stack.enter_context(threadpool_limits(limits=threads))
            return args.func(args)
    except CliError as exc:
        print(f"slidingasr {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
