"""The ``flowdub`` command: datagen, train, sample, align, metrics.

Every subcommand takes ``--seed``, ``--out``, ``--config`` (a JSON file of
flag defaults), and ``--no-plots``. Outputs are byte-reproducible for a
fixed seed and configuration. Exit codes: 0 success, 2 usage or
configuration error, 3 numeric failure; errors are reported as one JSON
object on stderr. The ``FLOWDUB_THREADS`` variable caps parallelism; the
reference implementation executes single-threaded, which satisfies any
cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import align, conditioning, datagen, flow, guidance, metrics, report
from .errors import ConfigError, NonFiniteError, ShapeError
from .rng import Rng, subseed
from .tensorio import load_tensor, save_tensor


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"kind": kind, "error": message}) + "\n")


class _Parser(argparse.ArgumentParser):
    """argparse with JSON error reporting and exit code 2."""

    def error(self, message):
        _emit_error("usage", message)
        raise SystemExit(2)


def _float_repr(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(rows)
    path.write_text("\n".join(lines) + "\n")


def _print_summary(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _parse_hidden(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad hidden layer list {text!r}: {exc}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError(f"hidden layer sizes must be positive, got {text!r}")
    return sizes


def _parse_alpha_sweep(text: str) -> list[float]:
    try:
        alphas = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad alpha sweep {text!r}: {exc}") from exc
    if not alphas or any(a < 0 for a in alphas):
        raise ConfigError(f"alpha values must be >= 0, got {text!r}")
    return alphas


def _thread_cap() -> int:
    raw = os.environ.get("FLOWDUB_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"FLOWDUB_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError(f"FLOWDUB_THREADS must be >= 1, got {cap}")
    return cap


# ------------------------------------------------------------ conditioning


@dataclass
class ConditionStreams:
    mu_satl: np.ndarray
    mu_prime: np.ndarray
    tab: np.ndarray
    sim: np.ndarray


def build_condition_streams(
    inst: datagen.DubInstance, cond_seed: int, depth: int, heads: int
) -> ConditionStreams:
    """Frozen conditioning pipeline for one instance.

    The cross-modal stack is drawn deterministically from cond_seed; the
    fusion and style head start at their neutral initializations. The
    frame-phoneme table comes from alignment search over the instance's
    lip/prototype similarity.
    """
    d = inst.z_p.shape[1]
    stack = conditioning.init_cross_modal_stack(
        d, depth, heads, Rng(subseed(cond_seed, "stack"))
    )
    sim = align.similarity(inst.z_m, inst.z_p)
    tab, _ = align.mas(sim)
    c_lip = align.lip_attention(inst.z_m, inst.z_p, sim)
    llm_p = conditioning.phoneme_semantic(inst.z_p, inst.s_llm, stack)
    fusion = conditioning.init_fusion(d)
    mu = conditioning.fuse_condition(c_lip, llm_p, inst.z_p, tab, inst.n, fusion)
    head = guidance.init_style_head(d, inst.style.shape[0])
    mu_satl = guidance.satl_transform(mu, guidance.apply_style_head(head, inst.style))
    mu_prime = guidance.build_unconditional(c_lip, inst.z_p, tab, inst.n, fusion)
    return ConditionStreams(mu_satl=mu_satl, mu_prime=mu_prime, tab=tab, sim=sim)


# ----------------------------------------------------------------- datagen


def cmd_datagen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.preset is None or args.preset not in datagen.PRESETS:
        raise ConfigError(
            f"unknown preset {args.preset!r}; pick one of "
            f"{', '.join(sorted(datagen.PRESETS))}"
        )
    preset = datagen.PRESETS[args.preset]
    written = []
    if preset["kind"] == "mixture":
        spec = datagen.mixture2d_spec()
        samples = datagen.sample_mixture(spec, args.count, args.seed)
        save_tensor(out / "samples.fdt", samples)
        doc = {
            "spec": spec.to_dict(),
            "seed": args.seed,
            "count": args.count,
            "samples_file": "samples.fdt",
        }
        (out / "mixture.json").write_text(json.dumps(doc, indent=2) + "\n")
        written = ["mixture.json", "samples.fdt"]
    else:
        inst = datagen.make_dub_instance(
            l_t=preset["l_t"], d=preset["d"], n=preset["n"],
            noise=preset["noise"], seed=args.seed,
        )
        datagen.save_instance(out, inst)
        written = sorted(p.name for p in out.iterdir())
    _print_summary({"command": "datagen", "written": written})
    return 0


# ------------------------------------------------------------------- train


def _mixture_setup(data_path: Path):
    try:
        doc = json.loads(data_path.read_text())
        spec = datagen.MixtureSpec.from_dict(doc["spec"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read mixture file {data_path}: {exc}") from exc
    weights = [c.weight for c in spec.components]

    def sampler(rng, count):
        out = np.empty((count, spec.dim))
        for row in range(count):
            comp = spec.components[rng.choice(weights)]
            out[row] = comp.mean + np.sqrt(comp.cov_diag) * rng.normals(spec.dim)
        return out

    def provider(rng, targets):
        return np.zeros((targets.shape[0], 0)), None

    return spec.dim, 0, sampler, provider


def _instance_setup(inst: datagen.DubInstance, streams: ConditionStreams):
    mel = inst.target_mel
    picked = {}

    def sampler(rng, count):
        idx = rng.integers(0, mel.shape[0], count)
        picked["idx"] = idx  # provider reads the same rows
        return mel[idx]

    def provider(rng, targets):
        idx = picked["idx"]
        return streams.mu_satl[idx], streams.mu_prime[idx]

    return mel.shape[1], streams.mu_satl.shape[1], sampler, provider


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if bool(args.data) == bool(args.instance):
        raise ConfigError("pass exactly one of --data or --instance")
    hidden = _parse_hidden(args.hidden)
    try:
        flow_cfg = flow.OtCfmConfig(
            sigma_min=args.sigma_min, n_euler_steps=args.n_steps
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sidecar: dict = {
        "sigma_min": flow_cfg.sigma_min,
        "seed": args.seed,
        "n_euler_steps": flow_cfg.n_euler_steps,
    }
    if args.data:
        data_path = Path(args.data)
        if not data_path.exists():
            raise ConfigError(f"input file not found: {data_path}")
        x_dim, cond_dim, sampler, provider = _mixture_setup(data_path)
        sidecar["source"] = "mixture"
    else:
        inst = datagen.load_instance(args.instance)
        cond_seed = subseed(args.seed, "conditioning")
        streams = build_condition_streams(inst, cond_seed, args.depth, args.heads)
        x_dim, cond_dim, sampler, provider = _instance_setup(inst, streams)
        sidecar["source"] = "instance"
        sidecar["conditioning"] = {
            "seed": cond_seed,
            "depth": args.depth,
            "heads": args.heads,
        }
    net = flow.init_vector_field(
        x_dim, cond_dim, hidden, Rng(subseed(args.seed, "init"))
    )
    cfg = flow.TrainConfig(
        sigma_min=flow_cfg.sigma_min,
        batch_size=args.batch,
        lr=args.lr,
        cond_drop=args.cond_drop,
    )
    trained, trace = flow.train_flow(
        net, sampler, provider, cfg, steps=args.steps, seed=args.seed
    )
    _write_csv(
        out / "loss.csv",
        "step,loss",
        (f"{i},{_float_repr(v)}" for i, v in enumerate(trace)),
    )
    flow.save_net(out, "model", trained, sidecar)
    written = ["loss.csv", "model.fdt", "model.json"]
    if not args.no_plots:
        report.save_loss_curve(out / "loss_curve.png", trace)
        written.append("loss_curve.png")
    _print_summary(
        {
            "command": "train",
            "written": sorted(written),
            "final_loss": trace[-1],
            "initial_loss": trace[0],
        }
    )
    return 0


# ------------------------------------------------------------------ sample


def _sample_once(net, bundle, x0, n_steps):
    final, _ = guidance.guided_euler_sample(net, bundle, x0, n_steps)
    return final


def cmd_sample(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.model:
        raise ConfigError("pass --model with the model sidecar JSON")
    net, sidecar = flow.load_net(args.model)
    n_steps = args.n_steps if args.n_steps else int(sidecar.get("n_euler_steps", 10))
    alphas = _parse_alpha_sweep(args.alpha_sweep) if args.alpha_sweep else None
    source = sidecar.get("source", "mixture")
    written = []
    if source == "instance":
        if not args.instance:
            raise ConfigError("sampling this model needs --instance")
        inst = datagen.load_instance(args.instance)
        cond_info = sidecar.get("conditioning", {})
        streams = build_condition_streams(
            inst,
            int(cond_info.get("seed", 0)),
            int(cond_info.get("depth", 2)),
            int(cond_info.get("heads", 1)),
        )
        mu_satl, mu_prime = streams.mu_satl, streams.mu_prime
        rows = mu_satl.shape[0]
    else:
        mu_satl = np.zeros((args.count, 0))
        mu_prime = np.zeros((args.count, 0))
        rows = args.count
    x0 = Rng(subseed(args.seed, "x0")).normal_matrix(rows, net.x_dim)

    def run(alpha):
        bundle = guidance.ConditionBundle(mu_satl, mu_prime, alpha)
        return _sample_once(net, bundle, x0, n_steps)

    if alphas is None:
        sample = run(args.alpha)
        save_tensor(out / "sample.fdt", sample)
        written.append("sample.fdt")
        if args.pgm:
            report.write_pgm(out / "sample.pgm", sample)
            written.append("sample.pgm")
        if not args.no_plots:
            if source == "instance":
                report.save_spectrogram(out / "sample.png", sample, "generated mel")
            else:
                report.save_scatter(out / "sample.png", sample)
            written.append("sample.png")
    else:
        base = run(alphas[0])
        deviations = []
        for alpha in alphas:
            tag = f"{alpha:g}"
            sample = run(alpha)
            save_tensor(out / f"sample_alpha_{tag}.fdt", sample)
            written.append(f"sample_alpha_{tag}.fdt")
            deviations.append(float(np.linalg.norm(sample - base)))
            if args.pgm:
                report.write_pgm(out / f"sample_alpha_{tag}.pgm", sample)
                written.append(f"sample_alpha_{tag}.pgm")
        _write_csv(
            out / "alpha_sweep.csv",
            "alpha,deviation",
            (
                f"{_float_repr(a)},{_float_repr(d)}"
                for a, d in zip(alphas, deviations)
            ),
        )
        written.append("alpha_sweep.csv")
        if not args.no_plots:
            report.save_alpha_sweep(out / "alpha_sweep.png", alphas, deviations)
            written.append("alpha_sweep.png")
    _print_summary({"command": "sample", "written": sorted(written)})
    return 0


# ------------------------------------------------------------------- align


def cmd_align(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.instance:
        inst = datagen.load_instance(args.instance)
        z_m, z_p = inst.z_m, inst.z_p
        durations = inst.durations
    elif args.zm and args.zp and args.durations:
        z_m = load_tensor(args.zm)
        z_p = load_tensor(args.zp)
        try:
            durations = [int(part) for part in args.durations.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad durations {args.durations!r}: {exc}") from exc
    else:
        raise ConfigError(
            "pass --instance, or all of --zm, --zp, and --durations"
        )
    if args.tau <= 0:
        raise ConfigError(f"temperature must be positive, got {args.tau}")
    sim = align.similarity(z_m, z_p)
    tab, path = align.mas(sim)
    positives = align.positives_from_durations(durations)
    l_mp = align.infonce_mp(sim, positives, args.tau)
    l_pm = align.infonce_pm(sim, positives, args.tau)
    losses = {
        "l_mp": l_mp,
        "l_pm": l_pm,
        "l_dua": align.dual_loss(l_mp, l_pm),
        "tau": args.tau,
    }
    _write_csv(
        out / "tab.csv",
        "phoneme,frames",
        (f"{j},{int(c)}" for j, c in enumerate(tab)),
    )
    _write_csv(
        out / "path.csv",
        "frame,phoneme",
        (f"{i},{int(j)}" for i, j in enumerate(path)),
    )
    (out / "losses.json").write_text(
        json.dumps(losses, indent=2, sort_keys=True) + "\n"
    )
    written = ["losses.json", "path.csv", "tab.csv"]
    if not args.no_plots:
        report.save_alignment(out / "alignment.png", sim, path)
        written.append("alignment.png")
    _print_summary(
        {"command": "align", "written": sorted(written), **losses}
    )
    return 0


# ----------------------------------------------------------------- metrics


def cmd_metrics(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    first = load_tensor(args.generated)
    second = load_tensor(args.reference)
    if args.from_mel:
        first = metrics.mfcc(first, args.k)
        second = metrics.mfcc(second, args.k)
    result = metrics.dtw(first, second)
    value = result.gamma / result.r
    ratio = metrics.eta(first.shape[0], second.shape[0])
    _write_csv(
        out / "dtw_path.csv",
        "i,j",
        (f"{i},{j}" for i, j in result.path),
    )
    doc = {
        "mcd_dtw": value,
        "mcd_dtw_sl": ratio * value,
        "eta": ratio,
        "gamma": result.gamma,
        "r": result.r,
        "path_file": "dtw_path.csv",
    }
    (out / "metrics.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    written = ["dtw_path.csv", "metrics.json"]
    if not args.no_plots:
        report.save_dtw_path(
            out / "dtw_path.png", result.path, first.shape[0], second.shape[0]
        )
        written.append("dtw_path.png")
    _print_summary({"command": "metrics", "written": sorted(written), **doc})
    return 0


# ------------------------------------------------------------------ parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="run seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--config", default=None,
                        help="JSON file of default flag values")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip PNG figure rendering")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="flowdub", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    table = {}

    p = subs.add_parser("datagen", parents=[], help="generate synthetic data")
    p.add_argument("--preset", default=None,
                   help="mixture2d, dub-small, or dub-paper-dims")
    p.add_argument("--count", type=int, default=512,
                   help="mixture draw count")
    _add_common(p)
    p.set_defaults(func=cmd_datagen)
    table["datagen"] = p

    p = subs.add_parser("train", help="train the flow field")
    p.add_argument("--data", default=None, help="mixture JSON input")
    p.add_argument("--instance", default=None, help="dub instance JSON input")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--sigma-min", type=float, default=1e-4)
    p.add_argument("--hidden", default="64,64",
                   help="comma-separated hidden layer sizes")
    p.add_argument("--cond-drop", type=float, default=0.1,
                   help="per-sample chance of the unconditional stream")
    p.add_argument("--depth", type=int, default=2,
                   help="cross-modal stack depth (instance mode)")
    p.add_argument("--heads", type=int, default=1,
                   help="cross-modal attention heads (instance mode)")
    p.add_argument("--n-steps", type=int, default=10,
                   help="default Euler steps recorded for sampling")
    _add_common(p)
    p.set_defaults(func=cmd_train)
    table["train"] = p

    p = subs.add_parser("sample", help="sample from a trained model")
    p.add_argument("--model", default=None, help="model sidecar JSON")
    p.add_argument("--instance", default=None,
                   help="dub instance JSON (instance-conditioned models)")
    p.add_argument("--count", type=int, default=1024,
                   help="sample count (mixture models)")
    p.add_argument("--n-steps", type=int, default=0,
                   help="Euler steps; 0 uses the model default")
    p.add_argument("--alpha", type=float, default=0.0, help="guidance scale")
    p.add_argument("--alpha-sweep", default=None,
                   help="comma-separated guidance scales, e.g. 0,0.2,0.4,0.6,0.8")
    p.add_argument("--pgm", action="store_true",
                   help="also dump min-max normalized P5 PGM images")
    _add_common(p)
    p.set_defaults(func=cmd_sample)
    table["sample"] = p

    p = subs.add_parser("align", help="align lip frames with phonemes")
    p.add_argument("--instance", default=None, help="dub instance JSON")
    p.add_argument("--zm", default=None, help="lip feature FDT1 tensor")
    p.add_argument("--zp", default=None, help="phoneme feature FDT1 tensor")
    p.add_argument("--durations", default=None,
                   help="comma-separated ground-truth durations")
    p.add_argument("--tau", type=float, default=0.1,
                   help="contrastive temperature")
    _add_common(p)
    p.set_defaults(func=cmd_align)
    table["align"] = p

    p = subs.add_parser("metrics", help="distance metrics between two tensors")
    p.add_argument("generated", help="generated mel or cepstra (FDT1)")
    p.add_argument("reference", help="reference mel or cepstra (FDT1)")
    p.add_argument("--from-mel", action="store_true",
                   help="inputs are mel spectrograms; extract cepstra first")
    p.add_argument("--k", type=int, default=12,
                   help="cepstral coefficients kept")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)
    table["metrics"] = p

    return parser, table


def _apply_config_defaults(argv, table) -> None:
    """Load --config JSON and install its keys as subcommand defaults."""
    if not argv or argv[0] not in table:
        return
    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path is None:
        return
    try:
        values = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"config {config_path} must hold a JSON object")
    sub = table[argv[0]]
    valid = {action.dest for action in sub._actions}
    unknown = set(values) - valid
    if unknown:
        raise ConfigError(
            f"config keys not recognized for {argv[0]}: {sorted(unknown)}"
        )
    sub.set_defaults(**values)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, table = build_parser()
    try:
        _thread_cap()
        _apply_config_defaults(argv, table)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except (ConfigError, ShapeError, ValueError) as exc:
        _emit_error("config", str(exc))
        return 2
    except NonFiniteError as exc:
        _emit_error("numeric", str(exc))
        return 3


def entry() -> None:
    raise SystemExit(main())
