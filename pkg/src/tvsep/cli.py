"""Command-line front end: ``simulate``, ``separate``, ``evaluate``, ``experiment``.

Randomness derives from the single top-level seed: it is split with
``numpy.random.SeedSequence(seed).spawn(4)`` into streams for the source
signals, the filters, the sensor noise and the NMF initialization, in that
order.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config
from .experiments import semi_blind_factors, split_seed
from .io import WavFormatError, read_wav, write_scores, write_wav
from .metrics import bss_metrics
from .mixsim import (
    TrajectorySpec,
    add_noise,
    interpolate_filters,
    random_fir,
    render_moving_mixture,
    synthetic_source,
)
from .nmf import NmfModel, kl_nmf_fit
from .stft import analyze
from .vem import NonFiniteError, make_init, run_vem, write_trace


def _trajectories(cfg, rng):
    sc = cfg.scenario
    if sc.trajectories is not None:
        return [TrajectorySpec(np.asarray(t["keyframes"], dtype=float)) for t in sc.trajectories]
    out = []
    for _ in range(cfg.sources):
        start = random_fir(rng, sc.channels, sc.taps)
        end = random_fir(rng, sc.channels, sc.taps)
        if sc.positions == 1:
            out.append(TrajectorySpec(start[None]))
        else:
            out.append(TrajectorySpec(interpolate_filters(start, end, sc.positions)))
    return out


def cmd_simulate(cfg):
    """Render a moving-source scene and write WAVs plus a manifest."""
    sc = cfg.scenario
    s_src, s_filt, s_noise, _ = split_seed(cfg.seed)
    T = int(round(sc.duration * sc.sample_rate))
    rng_src = np.random.default_rng(s_src)
    sources = np.stack([synthetic_source(rng_src, T, sc.sample_rate) for _ in range(cfg.sources)])
    trajectories = _trajectories(cfg, np.random.default_rng(s_filt))
    for tr in trajectories:
        if tr.n_channels != sc.channels:
            raise ConfigError("trajectory channel count differs from scenario.channels")
    mixture, images = render_moving_mixture(sources, trajectories)
    if sc.snr_db is not None:
        mixture = add_noise(mixture, sc.snr_db, seed=s_noise)

    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    write_wav(os.path.join(out, "mixture.wav"), mixture, sc.sample_rate)
    files = {"mixture": "mixture.wav", "images": [], "sources": []}
    for j in range(cfg.sources):
        write_wav(os.path.join(out, f"image_{j}.wav"), images[j], sc.sample_rate)
        write_wav(os.path.join(out, f"source_{j}.wav"), sources[j], sc.sample_rate)
        files["images"].append(f"image_{j}.wav")
        files["sources"].append(f"source_{j}.wav")
    manifest = {
        "seed": cfg.seed,
        "sample_rate": sc.sample_rate,
        "samples": T,
        "channels": sc.channels,
        "snr_db": sc.snr_db,
        "trajectories": [{"keyframes": tr.keyframes.tolist()} for tr in trajectories],
        "files": files,
    }
    path = cfg.manifest or os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def _load_manifest(path):
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    files = manifest["files"]
    resolve = lambda name: os.path.join(base, name)  # noqa: E731
    return manifest, resolve(files["mixture"]), [resolve(f) for f in files["images"]], [
        resolve(f) for f in files["sources"]
    ]


def _nmf_factors(cfg, x, mixture, source_paths):
    K = cfg.vem.components_per_source
    if cfg.init.nmf_source == "mixture":
        # blind fallback: one factorization of the mixture split among sources
        power = np.mean(np.abs(x.data) ** 2, axis=0)
        W, H = kl_nmf_fit(power, K * cfg.sources, cfg.init.nmf_iterations, split_seed(cfg.seed)[3])
        return [(W[:, j::cfg.sources], H[j::cfg.sources]) for j in range(cfg.sources)]
    if not source_paths:
        raise ConfigError("semi-blind NMF initialization needs the source signals (manifest)")
    sources = [read_wav(p)[0] for p in source_paths]
    sources = [s[0] if s.shape[0] == 1 else s for s in sources]
    return semi_blind_factors(
        sources, cfg.init.corruption_db, K, cfg.stft.window, split_seed(cfg.seed)[3],
        iterations=cfg.init.nmf_iterations,
    )


def cmd_separate(cfg):
    """Separate the mixture; writes ``estimate_j.wav`` and ``trace.txt``."""
    source_paths = []
    mixture_path = cfg.mixture
    manifest = cfg.manifest or os.path.join(cfg.output_dir, "manifest.json")
    if os.path.exists(manifest):
        _, m_path, _, source_paths = _load_manifest(manifest)
        mixture_path = mixture_path or m_path
    mixture_path = mixture_path or os.path.join(cfg.output_dir, "mixture.wav")
    if not os.path.exists(mixture_path):
        raise ConfigError(f"mixture file not found: {mixture_path}")
    mixture, rate = read_wav(mixture_path)
    x = analyze(mixture, cfg.stft.window, sample_rate=rate)
    factors = _nmf_factors(cfg, x, mixture, source_paths)
    if len(factors) != cfg.sources:
        raise ConfigError("number of NMF factor sets differs from model.sources")
    model = NmfModel.stack(factors)
    a_init = "ones" if cfg.init.mixing == "ones" else np.load(cfg.init.mixing)
    init = make_init(x, model, a_init, cfg.vem)
    result = run_vem(x, init, cfg.vem)
    os.makedirs(cfg.output_dir, exist_ok=True)
    outputs = []
    for j, img in enumerate(result.images):
        path = os.path.join(cfg.output_dir, f"estimate_{j}.wav")
        write_wav(path, img, rate)
        outputs.append(path)
    write_trace(os.path.join(cfg.output_dir, "trace.txt"), result.trace)
    return outputs


def evaluate_files(estimates, references, mixture=None, proj_taps=32):
    """Score estimate WAVs against reference WAVs, with input scores and gains."""
    est = [read_wav(p)[0] for p in estimates]
    ref = [read_wav(p)[0] for p in references]
    if len(est) != len(ref):
        raise ValueError("need as many estimates as references")
    shapes = {a.shape for a in est + ref}
    if len(shapes) != 1:
        raise ValueError(f"length or channel mismatch between files: {sorted(shapes)}")
    est, ref = np.stack(est), np.stack(ref)
    out = bss_metrics(est, ref, proj_taps)
    records = out.records([os.path.basename(p) for p in references])
    if mixture is not None:
        mix = read_wav(mixture)[0]
        if mix.shape != ref.shape[1:]:
            raise ValueError("mixture shape differs from the references")
        inp = bss_metrics(np.broadcast_to(mix, ref.shape), ref, proj_taps)
        for rec, a, b, c in zip(records, inp.sdr, inp.sir, inp.sar):
            rec.update(input_sdr=float(a), input_sir=float(b), input_sar=float(c))
            rec.update(
                gain_sdr=rec["sdr"] - rec["input_sdr"],
                gain_sir=rec["sir"] - rec["input_sir"],
                gain_sar=rec["sar"] - rec["input_sar"],
            )
    return records


def cmd_evaluate(cfg, estimates=None, references=None, mixture=None):
    manifest = cfg.manifest or os.path.join(cfg.output_dir, "manifest.json")
    if references is None:
        if not os.path.exists(manifest):
            raise ConfigError("evaluate needs --references or a manifest")
        _, m_path, references, _ = _load_manifest(manifest)
        mixture = mixture or m_path
    if estimates is None:
        estimates = [os.path.join(cfg.output_dir, f"estimate_{j}.wav") for j in range(len(references))]
    records = evaluate_files(estimates, references, mixture, cfg.proj_taps)
    os.makedirs(cfg.output_dir, exist_ok=True)
    write_scores(os.path.join(cfg.output_dir, "scores.jsonl"), records)
    return records


def format_table(records):
    keys = ["sdr", "sir", "sar"]
    if "input_sdr" in records[0]:
        keys += ["input_sdr", "input_sir", "gain_sdr", "gain_sir"]
    lines = ["name " + " ".join(f"{k:>10}" for k in keys)]
    for rec in records:
        lines.append(rec["name"] + " " + " ".join(f"{rec[k]:10.2f}" for k in keys))
    means = {k: np.mean([r[k] for r in records]) for k in keys}
    lines.append("mean " + " ".join(f"{means[k]:10.2f}" for k in keys))
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(prog="tvsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "separate", "evaluate", "experiment"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--output-dir")
        if name == "separate":
            p.add_argument("--mixture", help="mixture WAV (default: from the manifest)")
        if name == "evaluate":
            p.add_argument("--estimates", nargs="+")
            p.add_argument("--references", nargs="+")
            p.add_argument("--mixture")
        if name in ("separate", "evaluate"):
            p.add_argument("--manifest")
    return parser


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.vem = replace(cfg.vem, seed=args.seed)
    if args.iterations is not None:
        cfg.vem = replace(cfg.vem, iterations=args.iterations)
    if args.output_dir is not None:
        cfg.output_dir = args.output_dir
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "mixture", None) and args.command == "separate":
        cfg.mixture = args.mixture
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            print(cmd_simulate(cfg))
        elif args.command == "separate":
            for path in cmd_separate(cfg):
                print(path)
        elif args.command == "evaluate":
            records = cmd_evaluate(cfg, args.estimates, args.references, args.mixture)
            print(format_table(records))
        else:
            cmd_simulate(cfg)
            cmd_separate(cfg)
            print(format_table(cmd_evaluate(cfg)))
    except (ConfigError, WavFormatError, NonFiniteError, ValueError, OSError) as exc:
        print(f"tvsep {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
