"""Command-line entry point: ``drforge {gen-data,train,eval,sweep-dr,render}``.

Exit codes: 0 ok, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config, parse_plan, parse_resolution
from .errors import ConfigError, DatasetError, DrforgeError, EmptyTextureLibrary

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("DRFORGE_THREADS"):
        try:
            n = int(os.environ["DRFORGE_THREADS"])
        except ValueError:
            raise ConfigError("DRFORGE_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


def _config(args) -> RunConfig:
    rc = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "resolution", None):
        rc.resolution = parse_resolution(args.resolution)
    return rc


def _library(rc: RunConfig):
    if rc.dr.texture_mode != "assets":
        return None
    if rc.texture_dir is None:
        from .domainrand import bundled_library

        return bundled_library()
    from .domainrand import TextureLibrary

    return TextureLibrary.from_directory(rc.texture_dir)


def _dir_size(root: Path) -> int:
    return sum(p.stat().st_size for p in root.rglob("*") if p.is_file())


# ----------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    from .dataset import generate_demos, generate_proxy
    from .world import task_spec

    rc = _config(args)
    seed = args.seed if args.seed is not None else rc.seed
    if seed is None:
        raise ConfigError("gen-data needs --seed (or [run] seed)")
    task = args.task or rc.task
    if task is None:
        raise ConfigError("gen-data needs --task")
    library = _library(rc)
    out = Path(args.out)
    workers = _threads(args)
    if task == "proxy":
        m = generate_proxy(args.n, rc.dr, seed, out, resolution=rc.resolution, library=library, workers=workers)
        unit = "images"
    else:
        m = generate_demos(task_spec(task), args.n, rc.dr, seed, out, resolution=rc.resolution, library=library, workers=workers)
        unit = "episodes"
    steps = sum(c for _, _, c in m.files)
    n = len(m.files) if unit == "episodes" else steps
    print(f"{unit} = {n}")
    print(f"steps = {steps}")
    print(f"bytes = {_dir_size(out)}")
    print(f"manifest = {out / 'manifest.txt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .nn import OptimizerConfig
    from .policy import preset_steps, train_policy, train_proxy

    rc = _config(args)
    mode = args.mode
    if mode == "policy":
        task = args.task or rc.task
        if task is None:
            raise ConfigError("train --mode policy needs --task")
        preset = task
    else:
        preset = "proxy"
    steps = args.steps if args.steps is not None else rc.opt_fields.get("total_steps", preset_steps(preset, rc.scale))
    opt = OptimizerConfig(**{**rc.opt_fields, "total_steps": steps})
    seed = args.seed if args.seed is not None else (rc.seed or 0)
    common = dict(
        seed=seed,
        out=args.out,
        aug=rc.dr.img_aug,
        log_interval=rc.log_interval,
        ckpt_interval=rc.checkpoint_interval,
        resume=args.resume,
        verbose=not args.quiet,
    )
    from .dataset import EpisodeDataset, ProxyDataset

    if mode == "policy":
        ds = EpisodeDataset(args.data)
        rc.resolution = ds.resolution
        if ds.manifest.task_id != task:
            raise ConfigError(f"dataset holds {ds.manifest.task_id} demos, not {task}")
        res = train_policy(ds, rc.policy_config(), opt, rc.loss, **common)
    else:
        ds = ProxyDataset(args.data)
        rc.resolution = ds.resolution
        res = train_proxy(ds, rc.proxy_config(), opt, **common)
    print(f"checkpoint = {res.checkpoint}")
    print(f"steps = {steps}")
    if res.metrics:
        print(f"final_loss = {res.metrics[-1][2]:.6f}")
    return EXIT_OK


def _domain(name, seed):
    from .evalsearch import PseudoRealDomain, SimDomain

    if name == "default":
        return SimDomain()
    return PseudoRealDomain.make(seed)


def cmd_eval(args) -> int:
    from . import evalsearch as es
    from .policy import load_model

    try:
        model, meta = load_model(args.checkpoint)
    except (DatasetError, ConfigError, KeyError, ValueError) as e:
        print(f"error: cannot load checkpoint {args.checkpoint}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {"checkpoint": args.checkpoint, "kind": meta["kind"], "domain": args.domain}
    if meta["kind"] == "proxy":
        if args.domain == "variation-suite":
            raise ConfigError("variation-suite applies to policy checkpoints")
        err = es.eval_proxy(model, _domain(args.domain, args.domain_seed), n_images=args.images)
        print("domain\timages\terror_cm")
        print(f"{args.domain}\t{args.images}\t{err:.4f}")
        summary.update(images=args.images, error_cm=f"{err:.6f}")
        table = None
    else:
        task = args.task
        if task is None:
            raise ConfigError("eval of a policy checkpoint needs --task")
        summary["task"] = task
        if args.domain == "variation-suite":
            results = es.variation_suite(model, task, args.episodes, es.PseudoRealDomain.make(args.domain_seed), seed=args.seed)
        else:
            r = es.eval_policy(model, task, _domain(args.domain, args.domain_seed), args.episodes, seed=args.seed)
            results = [(args.domain, r)]
        table = es.success_table(results)
        print(table, end="")
        for name, r in results:
            key = name.replace("-", "_")
            summary[f"{key}.successes"] = r.successes
            summary[f"{key}.episodes"] = r.n
            summary[f"{key}.rate"] = f"{r.rate:.6f}"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(es.key_values(summary), encoding="utf-8")
        if table is not None:
            (out / "table.tsv").write_text(table, encoding="utf-8")
    return EXIT_OK


def cmd_sweep_dr(args) -> int:
    from .evalsearch import greedy_dr_search

    p = Path(args.plan)
    if not p.is_file():
        raise ConfigError(f"plan file {args.plan} not found")
    plan = parse_plan(p.read_text(encoding="utf-8"), str(p))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    work = out / "work"
    try:
        best, report = greedy_dr_search(plan, args.budget, workdir=work)
    except ConfigError:
        raise
    except DrforgeError as e:
        print(f"error: training failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    (out / "best_config.txt").write_text(dr_config_text(best), encoding="utf-8")
    (out / "curves.tsv").write_text(report.curves_text(), encoding="utf-8")
    (out / "ablation.tsv").write_text(report.ablation_text(), encoding="utf-8")
    print(report.ablation_text(), end="")
    print(f"trainings = {report.trainings}")
    return EXIT_OK


def dr_config_text(cfg) -> str:
    """A ``[dr]`` (and ``[img_aug]``) section that round-trips through the config parser."""
    d = cfg.to_dict()
    aug = d.pop("img_aug")
    lines = ["[dr]"]
    for k, v in d.items():
        if isinstance(v, (tuple, list)):
            v = ", ".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    lines.append(f"img_aug = {'true' if aug is not None else 'false'}")
    if aug is not None:
        lines += ["", "[img_aug]"]
        for k, v in aug.items():
            if isinstance(v, (tuple, list)):
                v = ", ".join(repr(float(x)) for x in v)
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    from PIL import Image

    from .domainrand import randomize_scene
    from .scene import RngStream
    from .tabletop import render_views, scene_for_state
    from .world import proxy_state, reset, task_spec

    rc = _config(args)
    seed = args.seed if args.seed is not None else rc.seed
    if seed is None:
        raise ConfigError("render needs --seed (or [run] seed)")
    task = args.task or rc.task or "proxy"
    stream = RngStream(seed, 0)
    if task == "proxy":
        state = proxy_state(stream.child("world").generator())
    else:
        state = reset(task_spec(task), stream.child("world").generator())
    scene = randomize_scene(scene_for_state(state, rc.resolution), rc.dr, stream.child("scene"), _library(rc))
    front, left = render_views(state, scene, state.gripper.tool == "broom")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in (("front", front), ("left", left)):
        Image.fromarray(img).save(out / f"{name}.png")
        print(out / f"{name}.png")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drforge", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: DRFORGE_THREADS or all cores)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="record expert demonstrations or proxy images")
    g.add_argument("--task", help="task id, or 'proxy' for localization images")
    g.add_argument("--n", type=int, required=True, help="episodes (or images for proxy)")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--resolution")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a proxy or policy model")
    t.add_argument("--mode", choices=("proxy", "policy"), required=True)
    t.add_argument("--task")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--steps", type=int, help="override the preset step count")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task")
    e.add_argument("--domain", choices=("default", "pseudo-real", "variation-suite"), default="default")
    e.add_argument("--episodes", type=int, default=250)
    e.add_argument("--images", type=int, default=250, help="test images for proxy checkpoints")
    e.add_argument("--seed", type=int, default=0, help="first rollout seed")
    e.add_argument("--domain-seed", type=int, default=0)
    e.add_argument("--out", help="directory for summary.txt and table.tsv")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-dr", help="greedy search over DR factors on the proxy task")
    s.add_argument("--plan", required=True)
    s.add_argument("--budget", type=int, help="training steps per candidate (default: from the plan)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_dr)

    r = sub.add_parser("render", help="write front and left previews of one randomized scene")
    r.add_argument("--task")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--resolution")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyTextureLibrary as e:
        print(f"error: EmptyTextureLibrary: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"error: ConfigError: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DrforgeError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
