"""Command-line interface: ``ogpp gen|train|sample|eval|analyze|replay``.

Every command writes ``<out>.manifest.json`` next to its main output. The manifest
stores the resolved arguments, so ``ogpp replay <manifest>`` re-runs the command;
with ``--threads 1`` the outputs are bit-identical.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import numpy as np

from . import __version__
from ._validation import ConfigError, ContractError
from .canon import CURVES, CanonSpec
from .paths import PathSpec

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- spec parsing


def parse_path(text, lam=1.0, n0_mode="zero"):
    """``linear``, ``toroidal``, ``hermite-{ntv,atv,atv-opt}``, ``cubic-{ntv,atv,atv-opt}``."""
    t = text.lower().replace("_", "-")
    if t in ("linear",):
        return PathSpec("linear", lam=lam)
    if t in ("toroidal", "toroidal-linear"):
        return PathSpec("toroidal_linear", lam=lam)
    for prefix, family in (("hermite-", "hermite_quadratic"), ("quadratic-", "hermite_quadratic"), ("cubic-", "hermite_cubic")):
        if t.startswith(prefix):
            mode = {"ntv": "ntv", "atv": "atv", "atv-opt": "atv_optimal", "atv-optimal": "atv_optimal"}.get(t[len(prefix) :])
            if mode is None:
                break
            return PathSpec(family, mode, lam, n0_mode)
    raise UsageError(f"unrecognized path spec {text!r}")


def parse_canon(text, default_dims):
    """``none``, ``hilbert``, ``hilbert6d``, ``morton``, ``moore``, ``polygon``; ``+pose`` adds pose normalization."""
    t = text.lower()
    pose = t.endswith("+pose")
    if pose:
        t = t[: -len("+pose")]
    if t in ("none", "auto"):
        return None if t == "auto" else CanonSpec("none", dims=default_dims)
    if t in ("polygon", "polygon_ccw", "polygon-ccw", "ccw"):
        return CanonSpec("polygon_ccw", dims=2, pose_normalize=pose)
    dims = default_dims
    for curve in ("hilbert", "morton", "moore"):
        if t.startswith(curve):
            rest = t[len(curve) :]
            if rest:
                if not rest.endswith("d") or not rest[:-1].isdigit():
                    raise UsageError(f"unrecognized canon spec {text!r}")
                dims = int(rest[:-1])
            return CanonSpec(curve, dims=dims, pose_normalize=pose)
    raise UsageError(f"unrecognized canon spec {text!r}; curves: {CURVES}")


def _side(text):
    t = text.lower().replace("-", "_")
    aliases = {"x1": "x1_only", "x0": "x0_only", "x1_only": "x1_only", "x0_only": "x0_only", "both": "both", "none": "none"}
    if t not in aliases:
        raise UsageError(f"unknown canon side {text!r}")
    return aliases[t]


# --------------------------------------------------------------------------- manifest


def _manifest_path(out):
    return f"{out}.manifest.json"


def write_manifest(out, argv, args, inputs, outputs, started, extra=None):
    from .io import write_json

    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "ogpp",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "config": cfg,
        "seed": cfg.get("seed"),
        "threads": cfg.get("threads"),
        "inputs": list(inputs),
        "outputs": list(outputs),
        "wall_clock_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    write_json(_manifest_path(out), manifest)
    return manifest


# --------------------------------------------------------------------------- commands


def cmd_gen(args):
    from . import energy
    from .io import write_particles

    task = args.task
    kw = {"seed": args.seed, "n_samples": args.samples}
    if task == "bluenoise":
        kw.update(n_points=args.n or 256, sigma_factor=args.sigma_factor)
        if args.iters:
            kw["iters"] = args.iters
        ps = energy.gen_blue_noise(n_jobs=args.jobs, **kw)
    elif task == "dla":
        kw.update(n_particles=args.n or 512, grid_size=args.grid_size)
        ps = energy.gen_dla(n_jobs=args.jobs, **kw)
    elif task == "thomson":
        radii = tuple(args.radii) if args.radii else (1.0, 1.5, 2.0)[: args.shells] if args.shells <= 3 else tuple(1.0 + 0.5 * i for i in range(args.shells))
        per = args.per_shell
        if args.n and not per:
            per = args.n // args.shells
        kw.update(n_shells=args.shells, per_shell=per or 32, radii=radii)
        if args.iters:
            kw["iters"] = args.iters
        if args.tol:
            kw["tol"] = args.tol
        ps = energy.gen_thomson(n_jobs=args.jobs, **kw)
    elif task == "minsurf":
        kw.update(boundary_points=args.n or 256, n_anchors=args.anchors, area_fraction=args.area_fraction)
        ps = energy.gen_min_surface(n_jobs=args.jobs, **kw)
    elif task == "circle":
        kw.update(n_points=args.n or 64)
        ps = energy.gen_circle(**kw)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown task {task}")
    write_particles(ps, args.out)
    return [], [args.out], {"shape": list(ps.shape), "n_attrs": ps.n_attrs}


def _train_config(args, ds):
    from .flow import CouplingSpec, TrainConfig

    path = parse_path(args.path, args.lam, args.n0_mode)
    if path.geometric:
        sort_dims = 2 * ds.dim
    elif args.attrs_as == "coords":
        sort_dims = ds.dim + ds.n_attrs
    else:
        sort_dims = ds.dim
    canon = parse_canon(args.canon, sort_dims)
    side = _side(args.canon_side)
    if canon is not None and canon.curve == "none":
        side, canon = "none", None
    return TrainConfig(
        path=path,
        canon=canon,
        canon_side=side,
        coupling=CouplingSpec(args.coupling.replace("-", "_")),
        prior=args.prior,
        prior_scale=args.prior_scale,
        batch_size=args.batch_size,
        steps=args.steps,
        lr=args.lr,
        grad_clip=args.grad_clip,
        warmup=args.warmup,
        lr_schedule=args.lr_schedule,
        seed=args.seed,
        beta1=args.beta1,
        beta2=args.beta2,
        eps=args.eps,
        shuffle_particles=args.shuffle_particles,
        attrs_as=args.attrs_as,
        cond_from=args.cond_from,
        d_emb=args.d_emb,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        use_index_embedding=args.use_index_embedding,
        param_dtype=args.param_dtype,
        log_every=args.log_every,
    )


def cmd_train(args):
    from .flow import TrainingDiverged, resolve_roles, train
    from .io import read_particles, write_checkpoint, write_csv

    parse_path(args.path, args.lam, args.n0_mode)
    ds = read_particles(args.data)
    cfg = _train_config(args, ds)
    roles = resolve_roles(ds, cfg)
    meta = {
        "train_config": _jsonable(cfg.to_dict()),
        "task": ds.task,
        "n_pos": ds.dim,
        "attr_role": roles.attr_role,
        "cond_role": roles.cond_role,
        "geometric": cfg.path.geometric,
    }
    loss_csv = f"{args.out}.loss.csv"
    try:
        net, losses = train(ds, cfg, log=sys.stderr)
    except TrainingDiverged as exc:
        if exc.net is not None:
            write_checkpoint(exc.net, args.out, {**meta, "diverged_at": exc.step})
        raise
    write_checkpoint(net, args.out, meta)
    write_csv(loss_csv, ["step", "loss"], [[i, float(v)] for i, v in enumerate(losses)])
    return [args.data], [args.out, loss_csv], None


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def cmd_sample(args):
    from .flow import anchor_tokens, sample
    from .io import read_checkpoint, read_particles, write_particles

    net, meta = read_checkpoint(args.ckpt)
    tc = meta.get("train_config", {})
    cond = None
    inputs = [args.ckpt]
    if net.config.n_cond:
        if not args.cond:
            raise UsageError("this checkpoint is conditional; pass --cond <particle file with anchor flags>")
        ref = read_particles(args.cond)
        inputs.append(args.cond)
        tokens = anchor_tokens(ref.data.astype(np.float64), ref.attrs[..., 0])
        idx = np.arange(args.samples) % tokens.shape[0]
        cond = tokens[idx]
    ps = sample(
        net,
        args.samples,
        args.steps,
        tc.get("prior", "uniform_box"),
        tc.get("prior_scale", 1.0),
        args.seed,
        cond,
        emit_normals=bool(meta.get("geometric")),
        task=meta.get("task", "custom"),
        n_pos=meta.get("n_pos"),
    )
    write_particles(ps, args.out)
    return inputs, [args.out], {"n_flagged_normals": ps.meta.get("n_flagged_normals", 0)}


def cmd_eval(args):
    from .io import read_particles, write_json
    from .metrics import evaluate

    gen = read_particles(args.gen)
    ref = read_particles(args.ref) if args.ref else None
    if args.task != "custom" and gen.task != args.task:
        raise ConfigError(f"generated set is tagged {gen.task!r}, not {args.task!r}")
    kw = {}
    if args.task == "minsurf":
        kw["target_fraction"] = args.area_fraction
    report = evaluate(args.task, gen, ref, **kw)
    write_json(args.out, report.to_dict())
    return [args.gen] + ([args.ref] if args.ref else []), [args.out], None


def cmd_analyze(args):
    from .analysis import REGIMES, CovConfig, MidtimeConfig, cond_cov_study, midtime_study
    from .io import read_particles, write_csv

    ds = read_particles(args.data)
    canon = parse_canon(args.canon, ds.dim) if args.canon != "auto" else None
    outputs = []
    if args.kind == "midtime":
        regimes = REGIMES if args.regimes == "all" else tuple(_side(r) for r in args.regimes.split(","))
        cfg = MidtimeConfig(
            n_pairs=args.pairs, n_anchors=args.anchors, k=args.k, n_bins=args.bins, t=args.t, seed=args.seed, canon=canon
        )
        studies = midtime_study(ds, regimes, cfg)
        for name, st in studies.items():
            path = f"{args.out}.{name}.csv" if len(studies) > 1 else args.out
            keys, rows = st.rows()
            write_csv(path, keys, rows)
            outputs.append(path)
    else:
        t_grid = tuple(float(v) for v in args.t_grid.split(","))
        cfg = CovConfig(t_grid=t_grid, n_anchors=args.anchors, n_candidates=args.candidates, seed=args.seed)
        curve = cond_cov_study(ds, canon, cfg)
        keys, rows = curve.rows()
        write_csv(args.out, keys, rows)
        outputs.append(args.out)
    return [args.data], outputs, None


def cmd_replay(args):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    argv = list(manifest["argv"])
    if args.out:
        argv = _replace_out(argv, args.out)
    return main(argv, _replaying=True)


def _replace_out(argv, new_out):
    argv = list(argv)
    if "--out" in argv:
        argv[argv.index("--out") + 1] = new_out
    else:
        argv += ["--out", new_out]
    return argv


# --------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    env_threads = os.environ.get("OGPP_THREADS")
    p = _Parser(prog="ogpp", description="Particle flow matching with canonical orderings and geometric paths.")
    p.add_argument("--version", action="version", version=f"ogpp {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--threads", type=int, default=int(env_threads) if env_threads else None)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("task", choices=("bluenoise", "dla", "thomson", "minsurf", "circle"))
    g.add_argument("--n", type=int, default=None, help="particles per sample")
    g.add_argument("--samples", type=int, default=1)
    g.add_argument("--jobs", type=int, default=None)
    g.add_argument("--sigma-factor", type=float, default=0.35)
    g.add_argument("--iters", type=int, default=None)
    g.add_argument("--tol", type=float, default=None)
    g.add_argument("--grid-size", type=int, default=256)
    g.add_argument("--shells", type=int, default=3)
    g.add_argument("--per-shell", type=int, default=None)
    g.add_argument("--radii", type=float, nargs="+", default=None)
    g.add_argument("--anchors", type=int, default=3)
    g.add_argument("--area-fraction", type=float, default=0.7)
    common(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a velocity network")
    t.add_argument("--data", required=True)
    t.add_argument("--path", default="linear")
    t.add_argument("--lam", type=float, default=1.0)
    t.add_argument("--n0-mode", default="zero", choices=("zero", "chord"))
    t.add_argument("--canon", default="auto")
    t.add_argument("--canon-side", default="x1_only")
    t.add_argument("--coupling", default="independent", choices=("independent", "minibatch_ot", "minibatch-ot"))
    t.add_argument("--prior", default="uniform_box")
    t.add_argument("--prior-scale", type=float, default=1.0)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--grad-clip", type=float, default=1.0)
    t.add_argument("--warmup", type=int, default=100)
    t.add_argument("--lr-schedule", default="cosine", choices=("cosine", "constant"))
    t.add_argument("--attrs-as", default="auto")
    t.add_argument("--cond-from", default="auto")
    t.add_argument("--d-emb", type=int, default=128)
    t.add_argument("--n-layers", type=int, default=4)
    t.add_argument("--n-heads", type=int, default=4)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--param-dtype", default="float32", choices=("float32", "float64"))
    t.add_argument("--use-index-embedding", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--shuffle-particles", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--log-every", type=int, default=100)
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--samples", type=int, default=16)
    s.add_argument("--cond", default=None, help="particle file supplying anchor conditions")
    common(s)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="evaluate generated samples")
    e.add_argument("task", choices=("bluenoise", "dla", "thomson", "minsurf", "circle", "custom"))
    e.add_argument("--gen", required=True)
    e.add_argument("--ref", default=None)
    e.add_argument("--area-fraction", type=float, default=0.7)
    common(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="mid-time study or conditional covariance")
    a.add_argument("kind", choices=("midtime", "cov"))
    a.add_argument("--data", required=True)
    a.add_argument("--canon", default="auto")
    a.add_argument("--regimes", default="all")
    a.add_argument("--pairs", type=int, default=200_000)
    a.add_argument("--anchors", type=int, default=2000)
    a.add_argument("--k", type=int, default=32)
    a.add_argument("--bins", type=int, default=10)
    a.add_argument("--t", type=float, default=0.5)
    a.add_argument("--t-grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    a.add_argument("--candidates", type=int, default=2000)
    common(a)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("replay", help="re-run a command from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=None, help="write outputs here instead of the recorded path")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None, _replaying=False):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ogpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "replay":
        try:
            return args.func(args)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"ogpp: cannot replay: {exc}", file=sys.stderr)
            return EXIT_USAGE
    started = time.time()
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            inputs, outputs, extra = args.func(args)
        write_manifest(args.out, argv, args, inputs, outputs, started, {"result": extra} if extra else None)
    except (UsageError, ConfigError) as exc:
        print(f"ogpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"ogpp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_entry():  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
