"""Dataset directory layout and (de)serialization.

A dataset is a directory with:

    manifest.txt            key=value lines (schema config, palette,
                            camera count, patch size, format version)
    episodes/ep000000.txt   one line-delimited record per episode
    images/ep000000/        binary PPM files referenced by the record

Floats are serialized as decimal with 9 significant digits; since every
state float is quantized to that precision at creation, read(write(x))
reproduces x exactly. Images and label bitstrings round-trip byte-exact.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .episodes import Episode, Frame
from .image import read_ppm, write_ppm
from .schema import PredicateSchema, PredicateVector
from .state import Block, Gripper, SceneState

FORMAT_VERSION = 1


def _f(x: float) -> str:
    return f"{float(x):.9g}"


class DatasetError(RuntimeError):
    pass


def write_manifest(path: Path, entries: dict) -> None:
    with open(path, "w") as f:
        for k, v in entries.items():
            f.write(f"{k}={v}\n")


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.txt" if Path(root).is_dir() else Path(root)
    out: dict[str, str] = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        k, _, v = line.partition("=")
        out[k] = v
    return out


def manifest_palette(manifest: dict) -> list[tuple[str, tuple[float, float, float]]]:
    colors = []
    n = int(manifest["palette_size"])
    for k in range(n):
        name, r, g, b = manifest[f"palette.{k}"].split()
        colors.append((name, (float(r), float(g), float(b))))
    return colors


def _write_episode(ep: Episode, idx: int, root: Path) -> None:
    rec = root / "episodes" / f"ep{idx:06d}.txt"
    img_dir = Path("images") / f"ep{idx:06d}"
    lines = [
        f"task {ep.task}",
        f"objects {' '.join(ep.object_ids)}",
        f"goal {' '.join(ep.goal) if ep.goal else '-'}",
    ]
    for fi, fr in enumerate(ep.frames):
        lines.append(f"frame {fi}")
        for b in fr.scene.blocks:
            lines.append(
                "block " + " ".join([
                    b.color_name, _f(b.rgb[0]), _f(b.rgb[1]), _f(b.rgb[2]),
                    _f(b.size), _f(b.x), _f(b.y), _f(b.z), _f(b.yaw),
                ])
            )
        g = fr.scene.gripper
        held = "-" if g.held is None else str(g.held)
        lines.append(f"gripper {_f(g.x)} {_f(g.y)} {_f(g.z)} {_f(g.opening)} {held}")
        if fr.skill is None:
            lines.append("skill -")
        else:
            lines.append(f"skill {fr.skill[0]} {' '.join(fr.skill[1])}".rstrip())
        if fr.views is None:
            lines.append("views -")
        else:
            names = []
            for v, img in enumerate(fr.views):
                rel = img_dir / f"f{fi:03d}_v{v}.ppm"
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                write_ppm(root / rel, img)
                names.append(str(rel))
            lines.append("views " + " ".join(names))
        if fr.canon_views is None:
            lines.append("canon -")
        else:
            names = []
            for o, img in enumerate(fr.canon_views):
                rel = img_dir / f"f{fi:03d}_c{o}.ppm"
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                write_ppm(root / rel, img)
                names.append(str(rel))
            lines.append("canon " + " ".join(names))
        bits = "".join("1" if v else "0" for v in fr.labels.values)
        lines.append(f"labels {bits}")
        lines.append("endframe")
    lines.append("end")
    rec.write_text("\n".join(lines) + "\n")


def write_dataset(episodes: list[Episode], root, extra_manifest: dict | None = None) -> None:
    """Write episodes plus a manifest describing them."""
    root = Path(root)
    (root / "episodes").mkdir(parents=True, exist_ok=True)
    view_relations = episodes[0].schema.view_relations if episodes else False
    n_blocks = episodes[0].schema.n_objects if episodes else 0
    n_frames = sum(len(ep.frames) for ep in episodes)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_episodes": len(episodes),
        "n_frames": n_frames,
        "n_blocks": n_blocks,
        "view_relations": int(view_relations),
        "predicates_per_frame": episodes[0].schema.size if episodes else 0,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    write_manifest(root / "manifest.txt", manifest)
    for i, ep in enumerate(episodes):
        _write_episode(ep, i, root)


def _parse_episode(path: Path, root: Path, view_relations: bool,
                   load_images: bool = True) -> Episode:
    lines = path.read_text().splitlines()
    it = iter(lines)
    task = next(it).split(" ", 1)[1]
    object_ids = next(it).split()[1:]
    goal_raw = next(it).split(" ", 1)[1]
    goal = [] if goal_raw == "-" else goal_raw.split()
    schema = PredicateSchema(object_ids, view_relations=view_relations)
    frames: list[Frame] = []
    blocks: list[Block] = []
    gripper = None
    skill = None
    views = canon = None
    for line in it:
        tok = line.split()
        if not tok:
            continue
        key = tok[0]
        if key == "frame":
            blocks, gripper, skill, views, canon = [], None, None, None, None
        elif key == "block":
            name = tok[1]
            r, g, b, size, x, y, z, yaw = (float(v) for v in tok[2:])
            blocks.append(Block(name, (r, g, b), size, x, y, z, yaw))
        elif key == "gripper":
            x, y, z, opening = (float(v) for v in tok[1:5])
            held = None if tok[5] == "-" else int(tok[5])
            gripper = Gripper(x, y, z, opening, held)
        elif key == "skill":
            skill = None if tok[1] == "-" else (tok[1], tuple(tok[2:]))
        elif key == "views":
            if tok[1] != "-":
                views = [read_ppm(root / p) for p in tok[1:]] if load_images else []
        elif key == "canon":
            if tok[1] != "-":
                canon = [read_ppm(root / p) for p in tok[1:]] if load_images else []
        elif key == "labels":
            bits = tok[1]
            if len(bits) != schema.size:
                raise DatasetError(
                    f"{path.name}: label length {len(bits)} != schema size {schema.size}"
                )
            if not set(bits) <= {"0", "1"}:
                raise DatasetError(f"{path.name}: corrupted label bitstring")
            values = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
            labels = PredicateVector(schema, values.astype(bool))
        elif key == "endframe":
            frames.append(Frame(SceneState(blocks, gripper), labels, skill, views, canon))
        elif key == "end":
            break
        else:
            raise DatasetError(f"{path.name}: unrecognized record line {line!r}")
    return Episode(task, goal, object_ids, frames, schema)


def read_dataset(root, load_images: bool = True) -> tuple[list[Episode], dict]:
    """Read a dataset directory back into episodes plus its manifest."""
    root = Path(root)
    manifest = read_manifest(root)
    if int(manifest.get("format_version", -1)) != FORMAT_VERSION:
        raise DatasetError(
            f"unsupported dataset format version {manifest.get('format_version')!r}"
        )
    view_relations = bool(int(manifest.get("view_relations", 0)))
    episodes = []
    for path in sorted((root / "episodes").glob("ep*.txt")):
        episodes.append(_parse_episode(path, root, view_relations, load_images))
    if len(episodes) != int(manifest["n_episodes"]):
        raise DatasetError(
            f"manifest declares {manifest['n_episodes']} episodes, found {len(episodes)}"
        )
    return episodes, manifest


def dataset_hash(root) -> str:
    """Content hash over manifest and all episode records and images."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def palette_manifest_entries(palette) -> dict:
    out = {"palette_size": len(palette)}
    for k, c in enumerate(palette):
        out[f"palette.{k}"] = f"{c.name} {_f(c.rgb[0])} {_f(c.rgb[1])} {_f(c.rgb[2])}"
    return out


def generate_dataset(
    out_dir,
    n_episodes: int,
    seed: int,
    n_blocks: int = 4,
    palette_name: str = "train",
    task: str = "tower",
    render: bool = True,
    patch_size: int = 16,
    image_size: int = 128,
    stack_prob: float = 0.0,
    view_relations: bool = False,
    min_frames: int | None = None,
) -> dict:
    """Generate episodes until ``n_episodes`` (or ``min_frames``) and write them.

    ``task="frames"`` produces single-frame episodes from independently
    sampled scenes (fresh colors, layout and gripper pose per frame), the
    high-diversity regime for predicate pretraining; the manipulation
    templates ("tower", "multi_tower") produce planned skill sequences.

    Returns the manifest. All randomness derives from ``seed``; rerunning
    with the same arguments reproduces the dataset byte for byte.
    """
    from ..rng import rng_for
    from .episodes import Episode, EpisodeConfig, Frame, generate_episode
    from .labeler import label_predicates
    from .raster import render_block_views, render_view
    from .sampler import GenConfig, palette_by_name, sample_scene
    from .schema import PredicateSchema
    from .state import default_camera_rig

    palette = palette_by_name(palette_name)
    gen = GenConfig(n_blocks=n_blocks, palette=palette, stack_prob=stack_prob)
    cameras = default_camera_rig(image_size, image_size)
    rng = rng_for(seed, "datagen")
    episodes = []
    frames = 0

    if task == "frames":
        gen.stack_prob = stack_prob if stack_prob > 0 else 0.35
        target = min_frames if min_frames is not None else n_episodes
        while frames < target:
            scene = sample_scene(gen, rng)
            schema = PredicateSchema(scene.object_ids(), view_relations)
            labels = label_predicates(scene, schema, geom=gen.geom)
            views = canon = None
            if render:
                views = [render_view(scene, cam, rng) for cam in cameras]
                canon = render_block_views(scene, patch_size, rng)
            episodes.append(Episode(
                "frames", [], scene.object_ids(),
                [Frame(scene, labels, None, views, canon)], schema,
            ))
            frames += 1
    else:
        cfg = EpisodeConfig(
            gen=gen, task=task, cameras=cameras, patch_size=patch_size,
            render=render, view_relations=view_relations,
        )
        while len(episodes) < n_episodes or (min_frames is not None and frames < min_frames):
            ep = generate_episode(cfg, rng)
            episodes.append(ep)
            frames += len(ep.frames)

    extra = {
        "palette_name": palette_name,
        "task": task,
        "cameras": len(cameras),
        "patch_size": patch_size,
        "image_size": image_size,
        "seed": seed,
        **palette_manifest_entries(palette),
    }
    write_dataset(episodes, out_dir, extra)
    return read_manifest(out_dir)
