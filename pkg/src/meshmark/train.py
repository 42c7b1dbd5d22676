"""Joint training of the embedding and extracting sub-networks through the
attack layers, plus checkpoint persistence and evaluation sweeps.

Everything is deterministic given (seed, config, dataset): one random stream
drives epoch shuffles, watermark draws, attack selection, and noise, in a
fixed consumption order.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import attacks as atk
from . import autodiff as ad
from . import metrics
from .attacks import AttackConfig
from .losses import loss_cur, loss_m, loss_w, total_loss  # re-exported API
from .mesh import Mesh, Neighborhood, build_neighborhood, laplacian_matrix, \
    vertex_curvature, vertex_normals
from .model import BatchMember, ModelParams, NetFlags, Watermark, decode_bits, \
    embed, end_to_end_batch, extract, init_model, named_learnables, named_stats
from .sparse import CsrMatrix

__all__ = [
    "TrainConfig", "OptimizerState", "TrainResult", "TrainingDiverged",
    "CheckpointError", "loss_w", "loss_m", "loss_cur", "total_loss",
    "adam_step", "init_optimizer", "train", "evaluate",
    "save_checkpoint", "load_checkpoint", "prepare", "BatchMember",
]

CHECKPOINT_MAGIC = b"MESHMARK1"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite; message names the offending term."""


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 10
    epochs: int = 40
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 5.0
    watermark_length: int = 64
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0
    no_attack_layers: bool = False
    no_degree_norm: bool = False
    no_batch_norm: bool = False
    no_curvature_loss: bool = False
    precision: str = "float32"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("learning rate must be > 0 and epochs >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)

    @property
    def flags(self) -> NetFlags:
        return NetFlags(degree_normalize=not self.no_degree_norm,
                        batch_norm=not self.no_batch_norm)

    @property
    def ablations(self) -> list[str]:
        out = []
        for name in ("no_attack_layers", "no_degree_norm", "no_batch_norm",
                     "no_curvature_loss"):
            if getattr(self, name):
                out.append(name.replace("_", "-"))
        return out


@dataclass
class OptimizerState:
    """Adam moments per parameter, step counter, and the usual constants."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: ModelParams) -> OptimizerState:
    return OptimizerState({n: np.zeros_like(p) for n, p in named_learnables(params)},
                          {n: np.zeros_like(p) for n, p in named_learnables(params)})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in named_learnables(params):
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter {name} {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def prepare(mesh: Mesh) -> BatchMember:
    """Per-mesh constants (adjacency, Laplacian, reference curvature) reused
    every iteration."""
    if not mesh.normalized:
        raise ValueError("training meshes must be unit-cube-normalized")
    nbhd = build_neighborhood(mesh)
    lap = laplacian_matrix(nbhd)
    cur = vertex_curvature(mesh, nbhd, vertex_normals(mesh))
    return BatchMember(mesh, nbhd, lap, cur)


@dataclass
class LogRow:
    epoch: int
    total: float
    l_w: float
    l_m: float
    l_cur: float
    bit_acc: float

    def as_csv(self) -> str:
        return (f"{self.epoch},{self.total:.6f},{self.l_w:.6f},"
                f"{self.l_m:.6f},{self.l_cur:.6f},{self.bit_acc:.4f}")


LOG_HEADER = "epoch,total,l_w,l_m,l_cur,bit_acc"


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: OptimizerState
    log: list[LogRow]
    config: TrainConfig
    rng_state: dict

    def log_csv(self) -> str:
        lines = []
        ablations = self.config.ablations
        if ablations:
            lines.append("# ablations=" + ",".join(ablations))
        lines.append(LOG_HEADER)
        lines += [row.as_csv() for row in self.log]
        return "\n".join(lines) + "\n"


def _check_finite(result, kind: str):
    for name, term in (("l_w", result.l_w), ("l_m", result.l_m),
                       ("l_cur", result.l_cur), ("total", result.total)):
        if not np.isfinite(term.data):
            raise TrainingDiverged(
                f"loss term {name} became non-finite "
                f"(kind={kind}); training aborted")


def train(config: TrainConfig, dataset: list[Mesh],
          on_epoch=None) -> TrainResult:
    """Joint training loop.

    Per minibatch: one attack kind, a fresh uniform random watermark and
    intensity draw per mesh, one forward over the batch's disjoint-union
    graph (batch-norm statistics pool every vertex in the minibatch), and a
    single Adam step on the batch-mean gradients.

    on_epoch(log_row, params), when given, is called after every epoch
    (progress reporting; must not mutate the parameters).
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if config.batch_size > len(dataset):
        raise ValueError(
            f"batch size {config.batch_size} exceeds dataset size {len(dataset)}")
    prepared = [prepare(m) for m in dataset]

    rng = np.random.Generator(np.random.PCG64(config.seed))
    params = init_model(config.watermark_length, seed=config.seed,
                        dtype=np.float32)
    opt = init_optimizer(params)
    attack_cfg = config.attack
    flags = config.flags
    log: list[LogRow] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        sums = np.zeros(4)
        acc_sum = 0.0
        n_seen = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            kind = "identity" if config.no_attack_layers \
                else atk.sample_kind(attack_cfg, rng)
            members = [prepared[i] for i in batch]
            watermarks = []
            insts = []
            for _ in batch:
                watermarks.append(Watermark.random(config.watermark_length, rng))
                insts.append(atk.sample_intensity(attack_cfg, kind, rng))
            result = end_to_end_batch(params, members, watermarks, insts, rng,
                                      mode="train", flags=flags,
                                      update_running=True,
                                      lambdas=config.lambdas,
                                      no_curvature=config.no_curvature_loss,
                                      dtype=config.dtype)
            _check_finite(result, kind)
            gmap = ad.backward(result.tape, result.total)
            grads = {name: ad.grad_of(gmap, leaf)
                     for name, leaf in named_learnables(result.bound)}
            adam_step(params, grads, opt, config.learning_rate)
            sums += len(batch) * np.array(
                [float(result.total.data), float(result.l_w.data),
                 float(result.l_m.data), float(result.l_cur.data)])
            for w, w_ext in zip(watermarks, result.w_ext):
                acc_sum += metrics.bit_accuracy(w, decode_bits(w_ext.data))
            n_seen += len(batch)
        log.append(LogRow(epoch, *(sums / max(n_seen, 1)), acc_sum / max(n_seen, 1)))
        if on_epoch is not None:
            on_epoch(log[-1], params)
    return TrainResult(params, opt, log, config,
                       rng.bit_generator.state)


# --- evaluation ---------------------------------------------------------------

def _attack_mesh(mesh_wm: Mesh, prep_nbhd: Neighborhood, laplacian: CsrMatrix,
                 inst: atk.AttackInstance, rng) -> tuple[Mesh, Neighborhood]:
    v = ad.DiffArray(np.asarray(mesh_wm.vertices, dtype=np.float64))
    v_att, faces_att, kept = atk.apply(v, mesh_wm.faces, laplacian, inst, rng)
    # still the normalized frame: attacks only perturb coordinates within it
    mesh_att = Mesh(v_att.data, faces_att, normalized=True)
    nbhd_att = build_neighborhood(mesh_att) if kept is not None else prep_nbhd
    return mesh_att, nbhd_att


@dataclass(frozen=True)
class EvalRow:
    attack: str
    intensity: float
    bit_acc_mean: float
    bit_acc_std: float
    hd_mean: float
    mrms_mean: float
    lcur_mean: float


def evaluate(params: ModelParams, dataset: list[Mesh],
             grid: list[tuple[str, float]], seed: int = 0,
             flags: NetFlags = NetFlags()) -> list[EvalRow]:
    """Fixed-intensity robustness table.

    Per mesh: embed a fresh seeded watermark, apply the attack at exactly the
    given intensity, extract and decode. Distortion columns compare original
    and watermarked meshes. Each grid row restarts the generator, so rows are
    comparable draw-for-draw.
    """
    prepared = [prepare(m) for m in dataset]
    rows = []
    for kind, intensity in grid:
        rng = np.random.Generator(np.random.PCG64(seed))
        accs, hds, rmss, curs = [], [], [], []
        for prep in prepared:
            w = Watermark.random(params.watermark_length, rng)
            mesh_wm = embed(params, prep.mesh, prep.nbhd, w, flags)
            inst = atk.fixed_instance(kind, intensity)
            mesh_att, nbhd_att = _attack_mesh(mesh_wm, prep.nbhd,
                                              prep.laplacian, inst, rng)
            w_ext = extract(params, mesh_att, nbhd_att, flags)
            accs.append(metrics.bit_accuracy(w, decode_bits(w_ext)))
            hds.append(metrics.hausdorff(prep.mesh, mesh_wm))
            rmss.append(metrics.mrms(prep.mesh, mesh_wm))
            curs.append(metrics.curvature_distortion(prep.mesh, mesh_wm))
        rows.append(EvalRow(kind, float(intensity), float(np.mean(accs)),
                            float(np.std(accs)), float(np.mean(hds)),
                            float(np.mean(rmss)), float(np.mean(curs))))
    return rows


# --- checkpoint persistence ----------------------------------------------------

def _entries(params: ModelParams, optimizer: Optional[OptimizerState]):
    for name, arr in named_learnables(params):
        yield name, arr
    for name, arr in named_stats(params):
        yield name, arr
    if optimizer is not None:
        for name in sorted(optimizer.m):
            yield f"opt.m.{name}", optimizer.m[name]
        for name in sorted(optimizer.v):
            yield f"opt.v.{name}", optimizer.v[name]


def save_checkpoint(path: str | Path, params: ModelParams,
                    config: Optional[TrainConfig] = None,
                    optimizer: Optional[OptimizerState] = None,
                    rng_state: Optional[dict] = None) -> None:
    """Write magic, a length-prefixed JSON manifest, then raw little-endian
    float32 parameter data."""
    blob = io.BytesIO()
    table = []
    for name, arr in _entries(params, optimizer):
        data = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape),
                      "offset": blob.tell()})
        blob.write(data.tobytes())
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "watermark_length": params.watermark_length,
        "tied": params.tied,
        "config": None if config is None else asdict(config),
        "optimizer": None if optimizer is None else {
            "step": optimizer.step, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps},
        "rng_state": rng_state,
        "entries": table,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(blob.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, Optional[OptimizerState], dict]:
    """Rebuild parameters (and optimizer state, when present) bitwise."""
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a meshmark checkpoint: bad magic in {path}")
    off = len(CHECKPOINT_MAGIC)
    if len(raw) < off + 4:
        raise CheckpointError("truncated checkpoint: missing manifest length")
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + mlen:
        raise CheckpointError("truncated checkpoint: manifest cut short")
    manifest = json.loads(raw[off:off + mlen].decode("utf-8"))
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = raw[off + mlen:]

    length = manifest["watermark_length"]
    params = init_model(length, tied=manifest.get("tied", True))
    values = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"truncated checkpoint: entry {entry['name']}")
        values[entry["name"]] = np.frombuffer(blob[start:end],
                                              dtype="<f4").reshape(shape).copy()
    for name, arr in list(named_learnables(params)) + list(named_stats(params)):
        if name not in values:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        if values[name].shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {values[name].shape}, "
                f"model {arr.shape}")
        arr[...] = values[name]

    optimizer = None
    if manifest.get("optimizer") is not None:
        meta = manifest["optimizer"]
        optimizer = init_optimizer(params)
        optimizer.step = int(meta["step"])
        optimizer.beta1 = float(meta["beta1"])
        optimizer.beta2 = float(meta["beta2"])
        optimizer.eps = float(meta["eps"])
        for name in optimizer.m:
            optimizer.m[name][...] = values[f"opt.m.{name}"]
            optimizer.v[name][...] = values[f"opt.v.{name}"]
    return params, optimizer, manifest
