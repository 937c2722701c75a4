"""Optimization loops: predicate pretraining and the frozen-encoder
direction-regressor fine-tune.

Everything is bit-reproducible: all shuffling derives from the config
seed and the epoch index (never from mutable generator state), so a run
resumed from a checkpoint continues the exact loss curve of the
uninterrupted run.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..heads import DirectionHead
from ..model.bundle import PredicateModel, load_predicate_model
from ..model.encoder import ModelConfig
from ..nn import bce_with_logits, checkpoint, no_grad
from ..nn.layers import ParamStore
from ..nn.optim import SgdMomentum
from ..nn.tensor import Tensor, concat, tensor_mean, tensor_sum
from ..rng import rng_for
from .config import TrainConfig
from .data import FrameArrays

CurveRow = tuple[int, str, str, float]


@dataclass
class TrainResult:
    checkpoint: Path
    curve: list[CurveRow] = field(default_factory=list)
    final_train_loss: float = float("nan")


def write_curve(path, rows: list[CurveRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "split", "metric", "value"])
        for row in rows:
            w.writerow(row)


def read_curve(path) -> list[CurveRow]:
    rows = []
    with open(path) as f:
        for rec in list(csv.reader(f))[1:]:
            rows.append((int(rec[0]), rec[1], rec[2], float(rec[3])))
    return rows


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def predict_logits(model: PredicateModel, data: FrameArrays, n_views: int = 1,
                   batch_size: int = 64) -> np.ndarray:
    """Frozen-weight logits [F, size]; multiple views are summed."""
    outs = []
    with no_grad():
        for view in range(n_views):
            rows = []
            for idx in _batches(data.n_frames, batch_size, np.arange(data.n_frames)):
                opening = data.openings[idx] if model.cfg.gripper_concat else None
                logits = model.logits(data.images[idx, view], data.canon[idx], opening)
                rows.append(logits.data)
            outs.append(np.concatenate(rows, axis=0))
    return np.sum(outs, axis=0)


def _overall_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(((logits > 0) == (labels > 0.5)).mean())


def _save(model: PredicateModel, opt: SgdMomentum, cfg: TrainConfig, epoch_next: int,
          path: Path, curve: list[CurveRow], extra_meta: dict | None = None) -> None:
    arrays = dict(model.store.arrays())
    for k, v in opt.state().items():
        arrays[f"opt.{k}"] = v
    meta = {
        "model": model.cfg.to_meta(),
        "train": {"epoch_next": epoch_next, "config": asdict(cfg),
                  "curve": [list(r) for r in curve]},
    }
    if extra_meta:
        meta.update(extra_meta)
    checkpoint.save(path, arrays, meta)


def train_predicates(
    model: PredicateModel,
    data: FrameArrays,
    cfg: TrainConfig,
    out_dir,
    val_data: FrameArrays | None = None,
    start_epoch: int = 0,
    opt_state: dict | None = None,
    quiet: bool = False,
    extra_meta: dict | None = None,
    prior_curve: list[CurveRow] | None = None,
) -> TrainResult:
    """Minimize mean BCE over all predicate slots with SGD + momentum.

    With ``multi_view`` every frame contributes one sample per camera
    view; views of different frames are never mixed inside a sample. Each
    epoch appends a train-loss row (and a validation accuracy row when
    ``val_data`` is given) to the curve, written as CSV next to the
    checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model.cfg.gripper_concat != cfg.gripper:
        raise ValueError("model gripper_concat flag does not match the training config")

    n_frames = data.n_frames if cfg.max_frames == 0 else min(cfg.max_frames, data.n_frames)
    n_views = data.n_views if cfg.multi_view else 1
    frame_of = np.repeat(np.arange(n_frames), n_views)
    view_of = np.tile(np.arange(n_views), n_frames)
    n_samples = len(frame_of)

    opt = SgdMomentum(model.store, cfg.lr, cfg.momentum)
    if opt_state is not None:
        opt.load_state(opt_state)

    curve_path = out_dir / "curves.csv"
    if prior_curve is not None:
        curve = [r for r in prior_curve if r[0] < start_epoch]
    elif start_epoch > 0 and curve_path.exists():
        curve = [r for r in read_curve(curve_path) if r[0] < start_epoch]
    else:
        curve = []

    final_loss = float("nan")
    for epoch in range(start_epoch, cfg.epochs):
        order = rng_for(cfg.seed, f"train/shuffle/{epoch}").permutation(n_samples)
        total, seen = 0.0, 0
        for idx in _batches(n_samples, cfg.batch_size, order):
            fidx, vidx = frame_of[idx], view_of[idx]
            opening = data.openings[fidx] if cfg.gripper else None
            logits = model.logits(data.images[fidx, vidx], data.canon[fidx], opening)
            loss = bce_with_logits(logits, data.labels[fidx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} after {opt.step_count} steps; "
                    "try a lower learning rate"
                )
            loss.backward()
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(idx)
            seen += len(idx)
        final_loss = total / seen
        curve.append((epoch, "train", "bce", final_loss))
        msg = f"epoch {epoch}: train bce {final_loss:.4f}"
        if val_data is not None:
            acc = _overall_accuracy(predict_logits(model, val_data), val_data.labels)
            curve.append((epoch, "val", "accuracy", acc))
            msg += f"  val acc {acc:.4f}"
        if not quiet:
            print(msg, flush=True)
        write_curve(curve_path, curve)
        if (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
            _save(model, opt, cfg, epoch + 1, out_dir / f"ckpt_ep{epoch + 1:03d}.ckpt",
                  curve, extra_meta)

    ckpt = out_dir / "model.ckpt"
    _save(model, opt, cfg, cfg.epochs, ckpt, curve, extra_meta)
    return TrainResult(ckpt, curve, final_loss)


def resume_predicates(ckpt_path, data: FrameArrays, out_dir,
                      val_data: FrameArrays | None = None,
                      quiet: bool = False) -> TrainResult:
    """Continue an interrupted run; reproduces the uninterrupted curve."""
    arrays, meta = checkpoint.load(ckpt_path)
    model, _ = load_predicate_model(ckpt_path)
    cfg = TrainConfig(**meta["train"]["config"])
    opt_state = {k[len("opt."):]: v for k, v in arrays.items() if k.startswith("opt.")}
    extra = {k: v for k, v in meta.items() if k not in ("model", "train")}
    prior = [(int(e), s, m, float(v)) for e, s, m, v in meta["train"].get("curve", [])]
    return train_predicates(
        model, data, cfg, out_dir, val_data,
        start_epoch=meta["train"]["epoch_next"], opt_state=opt_state, quiet=quiet,
        extra_meta=extra or None, prior_curve=prior,
    )


# -- direction regression ---------------------------------------------------


@dataclass
class DirectionExamples:
    """Embedding-space regression examples with geometric targets."""

    features: np.ndarray   # [n, d] head inputs
    direction: np.ndarray  # [n, 3] unit vectors
    distance: np.ndarray   # [n]
    frame_idx: np.ndarray
    src: np.ndarray        # source block (or -1 for the end effector)
    dst: np.ndarray


def direction_targets(data: FrameArrays, mode: str, n: int, seed: int,
                      min_dist: float = 1e-3):
    """Sample (frame, source, target) triples and geometric targets.

    obj mode: direction from block i to block j. ee mode: direction from
    the gripper to block j. Degenerate pairs (distance below ``min_dist``,
    e.g. the held block at the gripper) are skipped.
    """
    rng = rng_for(seed, f"direction/{mode}/{n}")
    n_obj = data.block_pos.shape[1]
    frames, srcs, dsts, vecs = [], [], [], []
    while len(frames) < n:
        f = int(rng.integers(data.n_frames))
        j = int(rng.integers(n_obj))
        if mode == "obj":
            i = int(rng.integers(n_obj))
            if i == j:
                continue
            vec = data.block_pos[f, j] - data.block_pos[f, i]
        elif mode == "ee":
            i = -1
            vec = data.block_pos[f, j] - data.gripper_pos[f]
        else:
            raise ValueError(f"unknown direction mode {mode!r}")
        dist = float(np.linalg.norm(vec))
        if dist < min_dist:
            continue
        frames.append(f)
        srcs.append(i)
        dsts.append(j)
        unit = vec / dist
        vecs.append((unit[0], unit[1], unit[2], dist))
    arr = np.asarray(vecs, dtype=np.float32)
    return (np.asarray(frames), np.asarray(srcs), np.asarray(dsts),
            arr[:, :3], arr[:, 3])


def embed_frames(model: PredicateModel, data: FrameArrays, frame_idx: np.ndarray,
                 batch_size: int = 64) -> np.ndarray:
    """Frozen object embeddings [len(frame_idx), N, d(+1)] for given frames."""
    uniq, inverse = np.unique(frame_idx, return_inverse=True)
    rows = []
    with no_grad():
        for idx in _batches(len(uniq), batch_size, np.arange(len(uniq))):
            f = uniq[idx]
            opening = data.openings[f] if model.cfg.gripper_concat else None
            emb = model.embeddings(data.images[f, 0], data.canon[f], opening)
            rows.append(emb.data)
    return np.concatenate(rows, axis=0)[inverse]


def direction_features(emb: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Head inputs: concat(e_src, e_dst) in obj mode, e_dst in ee mode."""
    tgt = emb[np.arange(len(dst)), dst]
    if np.all(src < 0):
        return tgt
    return np.concatenate([emb[np.arange(len(src)), src], tgt], axis=1)


def l2_direction_loss(head: DirectionHead, feats: Tensor, gt_dir: np.ndarray,
                      gt_dist: np.ndarray) -> Tensor:
    direction, distance = head(feats)
    derr = direction - Tensor(gt_dir.astype(direction.dtype))
    dist_err = distance - Tensor(gt_dist.astype(distance.dtype))
    return tensor_mean(tensor_sum(derr * derr, axis=-1)) + tensor_mean(dist_err * dist_err)


@dataclass
class DirectionResult:
    head_checkpoint: Path | None
    train_examples: int
    test_error: float       # mean Euclidean error on unit directions
    test_dist_error: float  # mean |distance error|
    encoder_digest_before: str = ""
    encoder_digest_after: str = ""


def finetune_direction(
    model: PredicateModel,
    data: FrameArrays,
    test_data: FrameArrays,
    mode: str = "obj",
    n_train: int = 1000,
    n_test: int = 3000,
    seed: int = 0,
    epochs: int = 300,
    lr: float = 0.05,
    momentum: float = 0.9,
    batch_size: int = 128,
    out_path=None,
) -> DirectionResult:
    """Train a direction regressor on frozen encoder embeddings.

    Only the regressor parameters are optimized; the encoder digest is
    asserted unchanged afterwards (a mutation aborts the run).
    """
    before = model.digest()
    f_tr, s_tr, d_tr, dir_tr, dist_tr = direction_targets(data, mode, n_train, seed)
    f_te, s_te, d_te, dir_te, dist_te = direction_targets(test_data, mode, n_test, seed + 1)
    emb_tr = direction_features(embed_frames(model, data, f_tr), s_tr, d_tr)
    emb_te = direction_features(embed_frames(model, test_data, f_te), s_te, d_te)

    store = ParamStore()
    head = DirectionHead(store, emb_tr.shape[1], rng_for(seed, "direction-head"))
    opt = SgdMomentum(store, lr, momentum)
    for epoch in range(epochs):
        order = rng_for(seed, f"direction/shuffle/{epoch}").permutation(len(emb_tr))
        for idx in _batches(len(emb_tr), batch_size, order):
            loss = l2_direction_loss(head, Tensor(emb_tr[idx]), dir_tr[idx], dist_tr[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite regression loss at epoch {epoch}")
            loss.backward()
            opt.step()
            opt.zero_grad()

    after = model.digest()
    if after != before:
        raise RuntimeError("encoder parameters changed during direction fine-tune")

    with no_grad():
        pred_dir, pred_dist = head(Tensor(emb_te))
    err = float(np.linalg.norm(pred_dir.data - dir_te, axis=1).mean())
    dist_err = float(np.abs(pred_dist.data - dist_te).mean())
    if out_path is not None:
        checkpoint.save(out_path, store.arrays(),
                        {"head": {"mode": mode, "d_in": emb_tr.shape[1]}})
    return DirectionResult(out_path, n_train, err, dist_err, before, after)


def train_direction_scratch(
    model_cfg: ModelConfig,
    data: FrameArrays,
    test_data: FrameArrays,
    mode: str = "obj",
    n_train: int = 1000,
    n_test: int = 3000,
    seed: int = 0,
    epochs: int = 10,
    lr: float = 3e-4,
    momentum: float = 0.9,
    batch_size: int = 64,
) -> DirectionResult:
    """Ablation: encoder + regressor trained end-to-end from random init
    on the same direction examples (no predicate pretraining)."""
    from ..model.encoder import Encoder

    f_tr, s_tr, d_tr, dir_tr, dist_tr = direction_targets(data, mode, n_train, seed)
    f_te, s_te, d_te, dir_te, dist_te = direction_targets(test_data, mode, n_test, seed + 1)

    rng = rng_for(seed, "direction-scratch")
    enc = Encoder(model_cfg, rng)
    d_in = model_cfg.width if mode == "ee" else 2 * model_cfg.width
    head = DirectionHead(enc.store, d_in, rng)
    opt = SgdMomentum(enc.store, lr, momentum)

    def batch_features(arrays: FrameArrays, f, src, dst) -> Tensor:
        emb = enc.forward(arrays.images[f, 0], arrays.canon[f])
        rows = np.arange(len(f))
        tgt = emb[rows, dst]
        return tgt if mode == "ee" else concat([emb[rows, src], tgt], axis=1)

    for epoch in range(epochs):
        order = rng_for(seed, f"direction-scratch/shuffle/{epoch}").permutation(len(f_tr))
        for idx in _batches(len(f_tr), batch_size, order):
            feats = batch_features(data, f_tr[idx], s_tr[idx], d_tr[idx])
            loss = l2_direction_loss(head, feats, dir_tr[idx], dist_tr[idx])
            loss.backward()
            opt.step()
            opt.zero_grad()

    with no_grad():
        rows_te = []
        for idx in _batches(len(f_te), batch_size, np.arange(len(f_te))):
            pd, _ = head(batch_features(test_data, f_te[idx], s_te[idx], d_te[idx]))
            rows_te.append(pd.data)
    pred = np.concatenate(rows_te, axis=0)
    err = float(np.linalg.norm(pred - dir_te, axis=1).mean())
    return DirectionResult(None, n_train, err, float("nan"))
