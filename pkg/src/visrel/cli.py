"""Command-line pipeline: dataset generation, training, evaluation,
planning and attention visualization.

    visrel gen   --out DIR [--set key=value ...]
    visrel train --out DIR --set data=DIR [key=value ...]
    visrel eval  --out DIR --set ckpt=F data=DIR [key=value ...]
    visrel plan  --out DIR --set data=DIR [ckpt=F | oracle_state=true]
    visrel viz   --out DIR --set ckpt=F data=DIR [frame=K layers=0,3]

Every run resolves its configuration from built-in defaults, an optional
--config key=value file, and --set overrides (highest precedence), then
writes the fully resolved config, the seed and input hashes to
<out>/run_manifest.txt, so any run is reproducible from its manifest alone.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 planner failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_PLANNER = 5


class ConfigError(ValueError):
    pass


def _coerce(default, raw: str):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def resolve_config(defaults: dict, config_file: str | None, overrides: list[str]) -> dict:
    from .train.config import read_config_file

    cfg = dict(defaults)
    entries: list[tuple[str, str]] = []
    if config_file:
        entries.extend(read_config_file(config_file).items())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        entries.append((k.strip(), v.strip()))
    for k, v in entries:
        if k not in cfg:
            raise ConfigError(f"unknown config key {k!r} (known: {', '.join(sorted(cfg))})")
        try:
            cfg[k] = _coerce(cfg[k], v) if isinstance(v, str) else v
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {k}: {e}") from None
    return cfg


def write_run_manifest(out_dir: Path, subcommand: str, cfg: dict, inputs: dict) -> None:
    """Record the resolved config, seed and input hashes for the run.

    Named run_manifest.txt so it can never collide with a dataset's own
    manifest.txt when the output directory is the dataset directory.
    """
    from .train.config import write_config_file

    entries = {"subcommand": subcommand}
    entries.update({f"config.{k}": v for k, v in cfg.items()})
    entries.update({f"input_hash.{k}": v for k, v in inputs.items()})
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_file(out_dir / "run_manifest.txt", entries)


def _manifest_hash(dataset_dir: str) -> str:
    from .nn.checkpoint import file_hash

    path = Path(dataset_dir) / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"{dataset_dir} has no manifest.txt (not a dataset?)")
    return file_hash(path)


# -- gen ----------------------------------------------------------------------

GEN_DEFAULTS = {
    "episodes": 10,
    "min_frames": 0,
    "blocks": 4,
    "palette": "train",
    "task": "tower",
    "render": True,
    "patch_size": 16,
    "image_size": 128,
    "stack_prob": 0.0,
    "view_relations": False,
}


def cmd_gen(out: Path, cfg: dict, seed: int) -> int:
    from .scene.dataset import generate_dataset
    from .scene.schema import predicate_count

    manifest = generate_dataset(
        out, n_episodes=cfg["episodes"], seed=seed, n_blocks=cfg["blocks"],
        palette_name=cfg["palette"], task=cfg["task"], render=cfg["render"],
        patch_size=cfg["patch_size"], image_size=cfg["image_size"],
        stack_prob=cfg["stack_prob"], view_relations=cfg["view_relations"],
        min_frames=cfg["min_frames"] or None,
    )
    write_run_manifest(out, "gen", {**cfg, "seed": seed}, {"dataset": _manifest_hash(out)})
    n = cfg["blocks"]
    print(f"dataset: {manifest['n_episodes']} episodes, {manifest['n_frames']} frames")
    print(f"predicates per frame: {manifest['predicates_per_frame']} "
          f"(= {predicate_count(7, 2, n)} for {n} objects)" if not cfg["view_relations"]
          else f"predicates per frame: {manifest['predicates_per_frame']}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "data": "",
    "val_data": "",
    "lr": 3e-4,
    "momentum": 0.9,
    "epochs": 30,
    "batch": 64,
    "multi_view": False,
    "gripper": False,
    "baseline": "none",  # none | class-token
    "depth": 4,
    "width": 128,
    "heads": 4,
    "mlp_ratio": 4,
    "checkpoint_every": 10,
    "max_frames": 0,
    "resume": "",
}


def cmd_train(out: Path, cfg: dict, seed: int) -> int:
    from .model.bundle import PredicateModel
    from .model.encoder import ModelConfig
    from .nn.checkpoint import file_hash
    from .rng import rng_for
    from .scene.dataset import manifest_palette
    from .train.config import TrainConfig
    from .train.data import load_frame_arrays
    from .train.loop import resume_predicates, train_predicates

    if not cfg["data"]:
        raise ConfigError("train requires data=<dataset dir>")
    views = None if cfg["multi_view"] else 1
    data = load_frame_arrays(cfg["data"], views=views)
    val = load_frame_arrays(cfg["val_data"], views=1) if cfg["val_data"] else None

    inputs = {"data": _manifest_hash(cfg["data"])}
    if cfg["val_data"]:
        inputs["val_data"] = _manifest_hash(cfg["val_data"])

    if cfg["resume"]:
        inputs["resume"] = file_hash(cfg["resume"])
        write_run_manifest(out, "train", {**cfg, "seed": seed}, inputs)
        result = resume_predicates(cfg["resume"], data, out, val)
    else:
        if cfg["baseline"] not in ("none", "class-token"):
            raise ConfigError(f"unknown baseline {cfg['baseline']!r}")
        mcfg = ModelConfig(
            image_size=int(data.manifest.get("image_size", 128)),
            patch_size=int(data.manifest.get("patch_size", 16)),
            width=cfg["width"], depth=cfg["depth"], heads=cfg["heads"],
            mlp_ratio=cfg["mlp_ratio"],
            class_tokens=data.schema.n_objects if cfg["baseline"] == "class-token" else 0,
            gripper_concat=cfg["gripper"],
            view_relations=data.schema.view_relations,
        )
        model = PredicateModel(mcfg, rng_for(seed, "model-init"))
        tcfg = TrainConfig(
            lr=cfg["lr"], momentum=cfg["momentum"], epochs=cfg["epochs"],
            batch_size=cfg["batch"], seed=seed, multi_view=cfg["multi_view"],
            gripper=cfg["gripper"], checkpoint_every=cfg["checkpoint_every"],
            max_frames=cfg["max_frames"],
        )
        write_run_manifest(out, "train", {**cfg, "seed": seed}, inputs)
        palette = [[name, *rgb] for name, rgb in manifest_palette(data.manifest)]
        result = train_predicates(model, data, tcfg, out, val,
                                  extra_meta={"train_palette": palette})
    print(f"checkpoint: {result.checkpoint}")
    print(f"final train bce: {result.final_train_loss:.4f}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

EVAL_DEFAULTS = {
    "ckpt": "",
    "data": "",            # comma-separated dataset dirs
    "views": 1,
    "queries": 4,          # objects of interest for distractor protocols
    "oracle": False,       # ground-truth labels as logits (sanity path)
    "executability": True,
    "skip_leak_check": False,
}


def cmd_eval(out: Path, cfg: dict, seed: int) -> int:
    from .metrics import build_report, write_reports_csv
    from .model.bundle import load_predicate_model
    from .nn.checkpoint import file_hash
    from .planner import default_operator_table
    from .protocols import (ZeroShotConfig, check_color_leak, colors_from_manifest,
                            executability_eval, zero_shot_protocols)
    from .scene.dataset import read_dataset, read_manifest
    from .train.data import load_frame_arrays
    from .train.loop import predict_logits

    if not cfg["data"]:
        raise ConfigError("eval requires data=<dataset dir>[,<dataset dir>...]")
    dirs = [d for d in cfg["data"].split(",") if d]
    inputs = {f"data.{i}": _manifest_hash(d) for i, d in enumerate(dirs)}

    reports = []
    exec_lines = []
    if cfg["oracle"]:
        for d in dirs:
            data = load_frame_arrays(d, views=1)
            logits = np.where(data.labels > 0.5, 1.0, -1.0)
            reports.append(build_report("oracle", Path(d).name, logits, data.labels, data.schema))
    else:
        if not cfg["ckpt"]:
            raise ConfigError("eval requires ckpt=<checkpoint> (or oracle=true)")
        model, meta = load_predicate_model(cfg["ckpt"])
        inputs["ckpt"] = file_hash(cfg["ckpt"])
        train_palette_meta = meta.get("train_palette")
        datasets = {}
        for d in dirs:
            manifest = read_manifest(d)
            if train_palette_meta and not cfg["skip_leak_check"]:
                train_colors = [(entry[0], tuple(entry[1:4])) for entry in train_palette_meta]
                check_color_leak(train_colors, colors_from_manifest(manifest))
            datasets[Path(d).name] = load_frame_arrays(
                d, views=None if cfg["views"] > 1 else 1)
        zcfg = ZeroShotConfig(views=cfg["views"], distractor_queries=cfg["queries"],
                              method=Path(cfg["ckpt"]).stem)
        reports.extend(zero_shot_protocols(model, datasets, zcfg))
        if cfg["executability"]:
            table = default_operator_table()
            for d in dirs:
                episodes, _ = read_dataset(d)
                data = load_frame_arrays(d, views=1)
                logits = predict_logits(model, data, n_views=cfg["views"])
                rep = executability_eval(logits, episodes, table)
                exec_lines.append(f"{Path(d).name}: {rep.summary()} "
                                  f"(annotation consistency {rep.annotation_consistency:.4f})")

    write_run_manifest(out, "eval", {**cfg, "seed": seed}, inputs)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(out / "reports.csv", reports)
    for rep in reports:
        print(rep.summary())
    for line in exec_lines:
        print(line)
    if exec_lines:
        (out / "executability.txt").write_text("\n".join(exec_lines) + "\n")
    return EXIT_OK


# -- plan ----------------------------------------------------------------------

PLAN_DEFAULTS = {
    "ckpt": "",
    "data": "",
    "views": 1,
    "oracle_state": False,
    "goal": "",       # optional goal file overriding per-episode goals
    "episodes": 0,    # 0 = all
    "operators": "",  # optional operator table file
}


def cmd_plan(out: Path, cfg: dict, seed: int) -> int:
    from .model.bundle import load_predicate_model
    from .nn.checkpoint import file_hash
    from .planner import Literal, OperatorTable, default_operator_table
    from .protocols import open_loop_eval
    from .scene.dataset import read_dataset
    from .train.data import load_frame_arrays
    from .train.loop import predict_logits

    if not cfg["data"]:
        raise ConfigError("plan requires data=<episode dataset dir>")
    episodes, _ = read_dataset(cfg["data"], load_images=not cfg["oracle_state"])
    if cfg["episodes"]:
        episodes = episodes[:cfg["episodes"]]
    inputs = {"data": _manifest_hash(cfg["data"])}

    table = default_operator_table()
    if cfg["operators"]:
        table = OperatorTable.from_text(Path(cfg["operators"]).read_text())

    if cfg["goal"]:
        goal_lits = [ln.strip() for ln in Path(cfg["goal"]).read_text().split() if ln.strip()]
        for g in goal_lits:
            try:
                Literal.parse(g)
            except ValueError:
                raise ConfigError(f"malformed goal literal: {g!r}") from None
        for ep in episodes:
            for g in goal_lits:
                if not ep.schema.has_literal(g):
                    raise ConfigError(f"goal literal {g!r} not in the dataset schema")
            ep.goal = list(goal_lits)

    initial_logits = None
    if not cfg["oracle_state"]:
        if not cfg["ckpt"]:
            raise ConfigError("plan requires ckpt=<checkpoint> (or oracle_state=true)")
        from .nn import no_grad

        model, _ = load_predicate_model(cfg["ckpt"])
        inputs["ckpt"] = file_hash(cfg["ckpt"])
        rows = []
        with no_grad():
            for ep in episodes:
                first = ep.frames[0]
                canon = np.stack(first.canon_views)[None]
                opening = (np.array([first.scene.gripper.opening])
                           if model.cfg.gripper_concat else None)
                per_view = [
                    model.logits(first.views[v][None], canon, opening).data[0]
                    for v in range(cfg["views"])
                ]
                rows.append(np.sum(per_view, axis=0))
        initial_logits = np.stack(rows)

    write_run_manifest(out, "plan", {**cfg, "seed": seed}, inputs)
    summary = open_loop_eval(episodes, table, initial_logits)
    out.mkdir(parents=True, exist_ok=True)
    lines = [summary.summary()]
    for k, res in enumerate(summary.results):
        plan_str = " ".join(str(s) for s in res.plan_result.skills) or "-"
        status = "ok" if res.success else f"FAILED ({res.note})"
        lines.append(f"episode {k}: {status}; plan: {plan_str}")
    (out / "plan_trace.txt").write_text("\n".join(lines) + "\n")
    print(summary.summary())
    if summary.episodes and summary.successes == 0 and all(
            r.plan_result.success is False for r in summary.results):
        print("all planning attempts failed", file=sys.stderr)
        return EXIT_PLANNER
    return EXIT_OK


# -- viz ----------------------------------------------------------------------

VIZ_DEFAULTS = {
    "ckpt": "",
    "data": "",
    "episode": 0,
    "frame": 0,
    "layers": "0",
    "view": 0,
}


def cmd_viz(out: Path, cfg: dict, seed: int) -> int:
    from .model.bundle import load_predicate_model
    from .model.encoder import attention_heatmap
    from .nn import no_grad
    from .nn.checkpoint import file_hash
    from .scene.dataset import read_dataset
    from .scene.image import write_ppm

    if not cfg["ckpt"] or not cfg["data"]:
        raise ConfigError("viz requires ckpt=<checkpoint> and data=<dataset dir>")
    model, _ = load_predicate_model(cfg["ckpt"])
    episodes, _ = read_dataset(cfg["data"])
    ep = episodes[cfg["episode"]]
    fr = ep.frames[cfg["frame"]]
    layers = [int(x) for x in str(cfg["layers"]).split(",") if x != ""]

    image = fr.views[cfg["view"]]
    canon = np.stack(fr.canon_views)[None]
    capture: list = []
    with no_grad():
        opening = (np.array([fr.scene.gripper.opening])
                   if model.cfg.gripper_concat else None)
        model.logits(image[None], canon, opening, capture=capture)

    write_run_manifest(out, "viz", {**cfg, "seed": seed}, {
        "ckpt": file_hash(cfg["ckpt"]), "data": _manifest_hash(cfg["data"])})
    out.mkdir(parents=True, exist_ok=True)
    n_obj = len(fr.canon_views)
    grid = (model.cfg.grid, model.cfg.grid)
    written = []
    for layer in layers:
        for obj in range(n_obj):
            heat = attention_heatmap(capture, obj, layer, model.cfg.n_ctx, grid,
                                     model.cfg.image_size)
            tint = np.stack([255.0 * heat, 30.0 * heat, 30.0 * heat], axis=-1)
            overlay = np.clip(0.45 * image.astype(np.float64) + 0.55 * tint, 0, 255)
            path = out / f"attn_l{layer}_obj{obj}.ppm"
            write_ppm(path, overlay.astype(np.uint8))
            written.append(path.name)
    print(f"wrote {len(written)} overlays to {out}")
    return EXIT_OK


# -- entry ----------------------------------------------------------------------

_SUBCOMMANDS = {
    "gen": (GEN_DEFAULTS, cmd_gen),
    "train": (TRAIN_DEFAULTS, cmd_train),
    "eval": (EVAL_DEFAULTS, cmd_eval),
    "plan": (PLAN_DEFAULTS, cmd_plan),
    "viz": (VIZ_DEFAULTS, cmd_viz),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visrel", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, (defaults, _) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"{name} (keys: {', '.join(sorted(defaults))})")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override (repeatable)")
        p.add_argument("--seed", type=int, default=0)
    return parser


def run(argv: list[str] | None = None) -> int:
    from .planner import UnknownLiteralError
    from .protocols import ColorLeakError
    from .scene.dataset import DatasetError
    from .scene.episodes import EpisodeGenerationError
    from .scene.sampler import PlacementError

    args = build_parser().parse_args(argv)
    defaults, handler = _SUBCOMMANDS[args.subcommand]
    try:
        cfg = resolve_config(defaults, args.config, args.set)
        return handler(Path(args.out), cfg, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, ColorLeakError, FileNotFoundError, UnknownLiteralError,
            KeyError, IndexError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EpisodeGenerationError, PlacementError) as e:
        print(f"planner failure: {e}", file=sys.stderr)
        return EXIT_PLANNER
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
