"""``sylrhythm`` command line: analyze, timedomain, synth, report."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, synth
from .config import RunConfig
from .errors import ConfigError, SylRhythmError

log = logging.getLogger("sylrhythm")

SYNTH_KINDS = ("am_noise", "kernel_corpus", "context_corpus", "rate_corpus")


def _common(p, manifest=True):
    if manifest:
        p.add_argument("--manifest", help="JSON-lines sentence manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--jobs", type=int, help="worker processes (0 = logical cores)")


def build_parser():
    parser = argparse.ArgumentParser(prog="sylrhythm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("analyze", help="rates, modulation spectra, peaks, duration curve"))
    _common(sub.add_parser("timedomain", help="TRF and sequence-model predictive power"))

    p = sub.add_parser("synth", help="write a synthetic corpus with ground truth")
    p.add_argument("kind", choices=SYNTH_KINDS)
    _common(p, manifest=False)
    p.add_argument("--freq", type=float, default=4.0, help="am_noise modulation frequency (Hz)")
    p.add_argument("--duration", type=float, default=10.0, help="am_noise duration (s)")
    p.add_argument("--n-sentences", type=int, default=100)
    p.add_argument("--n-speakers", type=int, default=1)
    p.add_argument("--seconds-per-speaker", type=float, default=64.0, help="rate_corpus only")
    p.add_argument("--corpus-id", default=None)

    p = sub.add_parser("report", help="validate an output directory and print a summary")
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args):
    """RunConfig from ``--config`` with command-line flags taking precedence."""
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for name in ("manifest", "out", "seed", "jobs"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if cfg.jobs < 0:
        raise ConfigError("--jobs must be >= 0")
    return cfg.validate()


def _cmd_analyze(args):
    from .analysis import run_analyze
    cfg = resolve_config(args)
    if not cfg.manifest:
        raise ConfigError("analyze needs --manifest (or 'manifest' in the config file)")
    summary = run_analyze(cfg)
    print(f"analyzed {summary['n_sentences']} sentences -> {cfg.out}")


def _cmd_timedomain(args):
    from .analysis import run_timedomain
    cfg = resolve_config(args)
    if not cfg.manifest:
        raise ConfigError("timedomain needs --manifest (or 'manifest' in the config file)")

    def progress(epoch, mse, r):
        log.info("epoch %d  train mse %.5f  val r %.4f", epoch, mse, r)

    summary = run_timedomain(cfg, progress=progress)
    for row in summary["predictive_power"]:
        print(f"{row['model']:4s} trained on {row['trained_on']} -> {row['eval_corpus']}: "
              f"r = {row['r']:.3f}  p = {row['p_value']}")


def _cmd_synth(args):
    if args.out is None:
        raise ConfigError("synth needs --out")
    seed = args.seed if args.seed is not None else 0
    if args.kind == "am_noise":
        if args.freq <= 0 or args.duration <= 0:
            raise ConfigError("--freq and --duration must be positive")
        path = synth.write_am_noise(args.out, args.freq, args.duration, seed=seed,
                                    corpus_id=args.corpus_id or "am_noise")
    else:
        if args.n_sentences < 1 or args.n_speakers < 1:
            raise ConfigError("--n-sentences and --n-speakers must be >= 1")
        if args.kind == "kernel_corpus":
            sents, truth = synth.kernel_corpus(args.n_sentences, args.n_speakers, seed=seed)
        elif args.kind == "context_corpus":
            sents, truth = synth.context_corpus(args.n_sentences, args.n_speakers, seed=seed)
        else:
            sents, truth = synth.rate_corpus(args.n_speakers, args.seconds_per_speaker, seed=seed)
        path = synth.write_corpus(args.out, sents, truth, corpus_id=args.corpus_id or args.kind,
                                  seed=seed)
    print(f"wrote {path}")


def _cmd_report(args):
    from .reports import validate_outputs
    out = Path(args.out)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    checked, problems = validate_outputs(out)
    for name in ("analyze_report.json", "timedomain_report.json"):
        if (out / name).exists():
            doc = json.loads((out / name).read_text())
            if doc["command"] == "analyze":
                for c, info in doc["corpora"].items():
                    mm = info["mean_measures"]
                    print(f"[analyze] {c}: {info['n_speakers']} speakers, {info['n_sentences']} sentences, "
                          f"articulation rate {mm['articulation_rate']}, broadband M1 peak {mm['broadband_m1']}")
            else:
                for c, info in doc["corpora"].items():
                    if "trf" in info:
                        print(f"[timedomain] {c}: TRF CV r {info['trf']['cv']['mean_r']}, "
                              f"trough {info['trf']['trough_latency_ms']} ms")
                    if "seq" in info:
                        print(f"[timedomain] {c}: sequence model test r {info['seq']['test_r']}")
    print(f"validated {len(checked)} artifacts, {len(problems)} problem(s)")
    for p in problems:
        print(f"  {p}")
    if not checked:
        raise ConfigError(f"no recognised artifacts in {out}")
    if problems:
        return 3
    return 0


COMMANDS = {"analyze": _cmd_analyze, "timedomain": _cmd_timedomain,
            "synth": _cmd_synth, "report": _cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except SylRhythmError as exc:
        print(f"sylrhythm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
