"""Command-line entry point: ``uformer {simulate,train,enhance,params,gradcheck,eval}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .checkpoint import CheckpointError
from .config import ABLATIONS, UformerConfig
from .datasim import SimConfig, read_manifest, sample_batch
from .wavio import WavFormatError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

REFERENCE_COUNTS = {
    None: 9.46, "disable_fa": 9.02, "disable_dc": 9.31, "disable_edattention": 5.33,
    "complex_only": 7.26, "magnitude_only": 3.85, "swap_lstm": 9.47,
}


class UsageError(Exception):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args, base: UformerConfig | None = None) -> UformerConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed = {args.seed}")
    try:
        if getattr(args, "config", None):
            return config_mod.load(args.config, overrides)
        flat = config_mod.to_flat(base or UformerConfig())
        flat.update(config_mod.parse_text("\n".join(overrides)))
        return config_mod.from_flat(flat)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc.args[0] if exc.args else exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    out = Path(args.out)
    cfg = SimConfig(snr_range=(args.snr_min, args.snr_max), rt60_range=(args.rt60_min, args.rt60_max),
                    chunk_seconds=args.seconds, speech=args.speech, noise=args.noise)
    speech_src = noise_src = None
    if args.manifest:
        speech_src, noise_src = read_manifest(args.manifest)
    items = sample_batch(args.count, args.seed, cfg, speech_src, noise_src)
    records = []
    for i, item in enumerate(items):
        noisy, target = f"{i:05d}_noisy.wav", f"{i:05d}_target.wav"
        write_wav(out / noisy, item.noisy, cfg.sample_rate)
        write_wav(out / target, item.target, cfg.sample_rate)
        meta = {"id": i, "noisy": noisy, "target": target, **item.meta}
        (out / f"{i:05d}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        records.append(json.dumps(meta, sort_keys=True))
    (out / "pairs.jsonl").write_text("\n".join(records) + "\n")
    print(f"wrote {len(items)} pairs to {out}")
    return EXIT_OK


def _read_pairs(manifest: Path):
    from .train import Pair

    pairs, metas = [], []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        noisy = read_wav(manifest.parent / rec["noisy"])[0]
        target = read_wav(manifest.parent / rec["target"])[0]
        pairs.append(Pair(noisy.astype(np.float32), target.astype(np.float32)))
        metas.append(rec)
    if not pairs:
        raise ValueError(f"{manifest}: no pairs")
    return pairs, metas


def _manifest_path(data: str) -> Path:
    p = Path(data)
    return p / "pairs.jsonl" if p.is_dir() else p


def cmd_train(args) -> int:
    from .train import load_checkpoint, save_checkpoint, seeded_model, split_dev, train_loop

    torch.set_num_threads(1)
    out = Path(args.out)
    if args.resume:
        model, opt, state = load_checkpoint(args.resume)
        cfg = model.cfg
    else:
        cfg = _config(args, UformerConfig.tiny() if args.tiny else None)
        model, opt, state = seeded_model(cfg), None, None
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    pairs, _ = _read_pairs(_manifest_path(args.data))
    train_items, dev_items = split_dev(pairs, cfg.train.dev_fraction, cfg.train.seed)
    report, opt, state = train_loop(model, train_items, dev_items, cfg, opt, state, log=print)
    save_checkpoint(out / "model.ckpt", model, opt, state)
    report.write(out)
    print(f"checkpoint written to {out / 'model.ckpt'} after {report.total_steps} steps")
    return EXIT_OK


def cmd_enhance(args) -> int:
    from .reconstruct import enhance
    from .train import load_checkpoint

    torch.set_num_threads(1)
    model = load_checkpoint(args.model)[0]
    if args.causal and not model.cfg.causal:
        raise UsageError("--causal requested but the checkpoint was trained non-causal")
    model.eval()
    wave, rate = read_wav(args.inp)
    if rate != model.cfg.sample_rate:
        raise ValueError(f"input sample rate {rate} differs from model rate {model.cfg.sample_rate}")
    y = enhance(torch.tensor(wave, dtype=torch.float32), model).numpy()
    write_wav(args.out, y, rate, pcm16=args.pcm16)
    return EXIT_OK


def cmd_params(args) -> int:
    from .unet import Uformer, count_parameters

    cfg = _config(args)
    flags = (None, *ABLATIONS) if args.all else [args.ablation]
    rows = []
    for flag in flags:
        try:
            c = cfg.with_ablation(flag)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from exc
        n = count_parameters(Uformer(c))
        rows.append((flag or "full", n, REFERENCE_COUNTS.get(flag)))
    for name, n, ref in rows:
        extra = f"  (table: {ref:.2f} M, {100 * (n / 1e6 - ref) / ref:+.1f}%)" if ref else ""
        print(f"{name:22s} {n:>10d}  {n / 1e6:.3f} M{extra}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradient_check

    cfg = None
    if args.config or args.set:
        cfg = _config(args, UformerConfig.tiny())
    results = gradient_check(cfg, args.tolerance, max_per_group=args.max_per_group, corrupt=args.corrupt)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.checked}/{r.numel}) rel_err {r.rel_error:.3e}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} parameter groups within {args.tolerance:g}")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_eval(args) -> int:
    from .loss import si_snr

    manifest = _manifest_path(args.pairs)
    rows = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "enhanced" not in rec:
            raise ValueError(f"{manifest}: record {rec.get('id')} has no 'enhanced' entry")
        sig = {k: torch.tensor(read_wav(manifest.parent / rec[k])[0], dtype=torch.float64)
               for k in ("noisy", "enhanced", "target")}
        n = min(len(v) for v in sig.values())
        ref = sig["target"][:n]
        rows.append([float(si_snr(sig["noisy"][:n], ref)[0]), float(si_snr(sig["enhanced"][:n], ref)[0])])
    if not rows:
        raise ValueError(f"{manifest}: no triples")
    arr = np.array(rows)
    table = {"noisy": arr[:, 0], "enhanced": arr[:, 1], "improvement": arr[:, 1] - arr[:, 0]}
    print(f"{'SI-SNR (dB)':14s} {'mean':>8s} {'p10':>8s} {'p50':>8s} {'p90':>8s}")
    for k, v in table.items():
        p10, p50, p90 = np.percentile(v, [10, 50, 90])
        print(f"{k:14s} {v.mean():8.3f} {p10:8.3f} {p50:8.3f} {p90:8.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> ArgParser:
    p = ArgParser(prog="uformer", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=ArgParser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    s = sub.add_parser("simulate", help="write noisy/target WAV pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--snr-min", type=float, default=-5.0)
    s.add_argument("--snr-max", type=float, default=15.0)
    s.add_argument("--rt60-min", type=float, default=0.2)
    s.add_argument("--rt60-max", type=float, default=1.2)
    s.add_argument("--seconds", type=float, default=4.0)
    s.add_argument("--speech", default="sinusoid_bank")
    s.add_argument("--noise", default="white")
    s.add_argument("--manifest", help="JSON-lines corpus manifest {path, kind, sample_rate}")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("train", help="train and write a checkpoint")
    common(s)
    s.add_argument("--data", required=True, help="simulate output dir or pairs manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--tiny", action="store_true", help="start from the tiny model config")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("enhance", help="enhance one WAV file")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--causal", action="store_true", help="require a causal checkpoint")
    s.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")
    s.set_defaults(fn=cmd_enhance)

    s = sub.add_parser("params", help="print parameter counts")
    common(s)
    s.add_argument("--ablation", choices=ABLATIONS)
    s.add_argument("--all", action="store_true", help="full model and every ablation")
    s.set_defaults(fn=cmd_params)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    common(s)
    s.add_argument("--tolerance", type=float, default=1e-3)
    s.add_argument("--max-per-group", type=int)
    s.add_argument("--corrupt", help=argparse.SUPPRESS)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("eval", help="SI-SNR table for noisy/enhanced/target triples")
    s.add_argument("--pairs", required=True, help="JSON-lines with noisy, enhanced, target paths")
    s.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError("missing command")
        return args.fn(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, CheckpointError, WavFormatError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
