"""The watermark network: embedding sub-network, extracting sub-network, and
the end-to-end forward pass (embed -> attack -> extract) on one tape.

The feature learning module (five graph residual blocks) is shared between
embedder and extractor by default; an untied variant keeps separate copies.
The extractor is blind: it sees only coordinates and connectivity of the
mesh in front of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import attacks as atk
from . import autodiff as ad
from . import losses, nn
from .autodiff import DiffArray, Tape
from .mesh import Mesh, Neighborhood, build_neighborhood
from .sparse import CsrMatrix

CONCAT_DIM = 3 + nn.FEATURE_DIM + nn.LATENT_DIM  # vertices + features + code


@dataclass(frozen=True)
class Watermark:
    """An L-bit message; bits are also exposed as reals for the network."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if b.size and not np.isin(b, (0, 1)).all():
            raise ValueError("watermark bits must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return int(self.bits.size)

    def as_real(self, dtype=np.float32) -> np.ndarray:
        return self.bits.astype(dtype)

    def to_hex(self) -> str:
        if len(self) % 4:
            raise ValueError("hex form requires a length divisible by 4")
        value = int("".join("1" if b else "0" for b in self.bits), 2) if len(self) else 0
        return format(value, f"0{len(self) // 4}x")

    @classmethod
    def from_hex(cls, text: str, length: int) -> "Watermark":
        if length % 4 or len(text) != length // 4:
            raise ValueError(
                f"expected {length // 4} hex characters for {length} bits, got {len(text)}")
        value = int(text, 16)
        bits = [(value >> (length - 1 - k)) & 1 for k in range(length)]
        return cls(np.asarray(bits, dtype=np.uint8))

    @classmethod
    def random(cls, length: int, rng: np.random.Generator) -> "Watermark":
        return cls(rng.integers(0, 2, size=length, dtype=np.uint8))


def decode_bits(w_ext: np.ndarray) -> Watermark:
    """Threshold raw extractor outputs at 0.5 (strictly greater -> 1)."""
    w = np.asarray(w_ext, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ValueError("extracted watermark contains non-finite entries")
    return Watermark((w > 0.5).astype(np.uint8))


@dataclass(frozen=True)
class NetFlags:
    """Forward-pass switches; the false settings realize the ablations."""

    degree_normalize: bool = True
    batch_norm: bool = True
    residual_output: bool = True


@dataclass
class ModelParams:
    """All learnable state plus batch-norm running statistics."""

    feature: list  # 5 residual blocks: 3->64, then 64->64 x4
    encoder: nn.EncoderParams  # L -> 64
    aggregation: list  # 2 residual blocks: 131->64, 64->64
    output_conv: nn.GraphConvParams  # 64 -> 3
    head: nn.Mlp2Params  # 64 -> 128 -> L
    extractor_feature: Optional[list] = None  # present iff untied
    watermark_length: int = 64

    @property
    def tied(self) -> bool:
        return self.extractor_feature is None

    def extractor_blocks(self) -> list:
        return self.feature if self.tied else self.extractor_feature


def init_model(length: int = 64, seed: int = 0, tied: bool = True,
               dtype=np.float32) -> ModelParams:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xA11])))

    def feature_module():
        blocks = [nn.init_residual_block(rng, 3, nn.FEATURE_DIM, dtype)]
        blocks += [nn.init_residual_block(rng, nn.FEATURE_DIM, nn.FEATURE_DIM, dtype)
                   for _ in range(4)]
        return blocks

    feature = feature_module()
    encoder = nn.init_encoder(rng, length, nn.LATENT_DIM, dtype)
    aggregation = [nn.init_residual_block(rng, CONCAT_DIM, nn.FEATURE_DIM, dtype),
                   nn.init_residual_block(rng, nn.FEATURE_DIM, nn.FEATURE_DIM, dtype)]
    output_conv = nn.init_graph_conv(rng, nn.FEATURE_DIM, 3, dtype)
    # zero coordinate-offset branch: watermarked = input at step 0, so early
    # training is not spent un-learning a large random distortion
    output_conv.w0[...] = 0
    output_conv.w1[...] = 0
    head = nn.init_mlp2(rng, nn.FEATURE_DIM, nn.MLP_HIDDEN, length, dtype)
    # raw extractor outputs regress bits in {0,1}: start at their mean
    head.b2[...] = 0.5
    extractor_feature = None if tied else feature_module()
    return ModelParams(feature, encoder, aggregation, output_conv, head,
                       extractor_feature, length)


def named_learnables(params: ModelParams):
    yield from nn.walk_learnables(params.feature, "feature.")
    yield from nn.walk_learnables(params.encoder, "encoder.")
    yield from nn.walk_learnables(params.aggregation, "aggregation.")
    yield from nn.walk_learnables(params.output_conv, "output_conv.")
    yield from nn.walk_learnables(params.head, "head.")
    if params.extractor_feature is not None:
        yield from nn.walk_learnables(params.extractor_feature, "extractor_feature.")


def named_stats(params: ModelParams):
    yield from nn.walk_stats(params.feature, "feature.")
    yield from nn.walk_stats(params.aggregation, "aggregation.")
    if params.extractor_feature is not None:
        yield from nn.walk_stats(params.extractor_feature, "extractor_feature.")


def bind_model(params: ModelParams, tape: Tape) -> ModelParams:
    """Leaf-bound copy of the model for one forward/backward pass."""
    return ModelParams(
        nn.bind(params.feature, tape),
        nn.bind(params.encoder, tape),
        nn.bind(params.aggregation, tape),
        nn.bind(params.output_conv, tape),
        nn.bind(params.head, tape),
        None if params.extractor_feature is None else nn.bind(params.extractor_feature, tape),
        params.watermark_length,
    )


def _run_blocks(blocks, x, nbhd, mode, flags: NetFlags, update_running: bool):
    for block in blocks:
        x = nn.graph_residual_block(block, x, nbhd, mode,
                                    degree_normalize=flags.degree_normalize,
                                    use_batch_norm=flags.batch_norm,
                                    update_running=update_running)
    return x


def embed_vertices(bound: ModelParams, v_in: DiffArray, nbhd: Neighborhood,
                   w_real, mode: str = "infer", flags: NetFlags = NetFlags(),
                   update_running: bool = False) -> DiffArray:
    """Watermarked coordinates from input coordinates and the bit vector."""
    n = v_in.data.shape[0]
    f_in = _run_blocks(bound.feature, v_in, nbhd, mode, flags, update_running)
    code = nn.encode_and_expand(bound.encoder, w_real, n)
    h = ad.concat([v_in, f_in, code], axis=1)
    h = _run_blocks(bound.aggregation, h, nbhd, mode, flags, update_running)
    delta = nn.graph_conv(bound.output_conv, h, nbhd, flags.degree_normalize)
    return ad.add(v_in, delta) if flags.residual_output else delta


def extract_vector(bound: ModelParams, v: DiffArray, nbhd: Neighborhood,
                   mode: str = "infer", flags: NetFlags = NetFlags(),
                   update_running: bool = False) -> DiffArray:
    """Raw extractor outputs, one real per watermark bit; works for any
    vertex count (cropped meshes included)."""
    if v.data.shape[0] < 1:
        raise ValueError("cannot extract from an empty mesh")
    f = _run_blocks(bound.extractor_blocks(), v, nbhd, mode, flags, update_running)
    pooled = nn.global_average_pool(f)
    return nn.mlp2(bound.head, pooled)


def embed(params: ModelParams, mesh: Mesh, nbhd: Neighborhood, w: Watermark,
          flags: NetFlags = NetFlags()) -> Mesh:
    """Embed a watermark into a normalized mesh (inference mode).

    Faces, vertex count and order are unchanged; only coordinates move.
    """
    if not mesh.normalized:
        raise ValueError("embed expects a unit-cube-normalized mesh")
    if len(w) != params.watermark_length:
        raise ValueError(
            f"watermark length {len(w)} does not match model ({params.watermark_length})")
    tape = Tape(np.float32)
    bound = bind_model(params, tape)
    v_in = tape.leaf(mesh.vertices)
    v_wm = embed_vertices(bound, v_in, nbhd, w.as_real(np.float32), "infer", flags)
    return mesh.with_vertices(v_wm.data)


def extract(params: ModelParams, mesh: Mesh, nbhd: Neighborhood,
            flags: NetFlags = NetFlags()) -> np.ndarray:
    """Raw extractor outputs for a mesh in the normalized frame (blind: no
    original-mesh reference)."""
    if not mesh.normalized:
        raise ValueError("extract expects a unit-cube-normalized mesh")
    tape = Tape(np.float32)
    bound = bind_model(params, tape)
    v = tape.leaf(mesh.vertices)
    return extract_vector(bound, v, nbhd, "infer", flags).data.copy()


@dataclass
class ForwardResult:
    """Everything one end-to-end pass produced, still attached to its tape."""

    tape: Tape
    bound: ModelParams
    v_in: DiffArray
    v_wm: DiffArray
    v_att: DiffArray
    faces_att: np.ndarray
    w_ext: DiffArray
    attack: atk.AttackInstance
    l_w: DiffArray
    l_m: DiffArray
    l_cur: DiffArray
    total: DiffArray

    def mesh_wm(self, template: Mesh) -> Mesh:
        return template.with_vertices(self.v_wm.data)

    def mesh_att(self) -> Mesh:
        # attacks act inside the normalized frame
        return Mesh(self.v_att.data, self.faces_att, normalized=True)


def end_to_end(params: ModelParams, mesh: Mesh, nbhd: Neighborhood,
               laplacian: CsrMatrix, w: Watermark, attack: atk.AttackInstance,
               rng: Optional[np.random.Generator] = None, mode: str = "train",
               flags: NetFlags = NetFlags(), update_running: bool = True,
               lambdas: tuple[float, float, float] = (1.0, 1.0, 5.0),
               no_curvature: bool = False, dtype=np.float32,
               cur_in: Optional[np.ndarray] = None) -> ForwardResult:
    """One tape spanning embed, attack, extract, and all three losses.

    Gradients reach both sub-networks through the attack layer; under
    cropping the extractor runs on the rebuilt connectivity of the retained
    vertices.
    """
    if not mesh.normalized:
        raise ValueError("end_to_end expects a unit-cube-normalized mesh")
    tape = Tape(dtype)
    bound = bind_model(params, tape)
    v_in = tape.leaf(mesh.vertices)
    w_real = w.as_real(tape.dtype)

    v_wm = embed_vertices(bound, v_in, nbhd, w_real, mode, flags, update_running)
    v_att, faces_att, kept = atk.apply(v_wm, mesh.faces, laplacian, attack, rng)
    if kept is not None:
        nbhd_att = build_neighborhood(Mesh(v_att.data, faces_att))
    else:
        nbhd_att = nbhd
    w_ext = extract_vector(bound, v_att, nbhd_att, mode, flags, update_running)

    l_w = losses.loss_w(w_real, w_ext)
    l_m = losses.loss_m(v_in, v_wm)
    l_cur = losses.loss_cur(mesh, v_wm, nbhd, cur_in=cur_in)
    total = losses.total_loss(l_w, l_cur, l_m, *lambdas, no_curvature=no_curvature)
    return ForwardResult(tape, bound, v_in, v_wm, v_att, faces_att, w_ext,
                         attack, l_w, l_m, l_cur, total)


# --- minibatch forward over a disjoint-union graph ---------------------------
#
# Batch normalization pools statistics over every vertex of every mesh in the
# minibatch. That pooling is load-bearing: the expanded watermark code is
# constant within one mesh, so per-mesh normalization would subtract it away
# and sever the watermark channel. The batch therefore runs as one big graph
# (block-diagonal connectivity).

def _stack_neighborhoods(nbhds: list[Neighborhood]) -> Neighborhood:
    sizes = [nb.n_vertices for nb in nbhds]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    offsets = [np.asarray([0], dtype=np.int64)]
    targets = []
    for nb, s in zip(nbhds, starts):
        offsets.append(nb.offsets[1:] + offsets[-1][-1])
        targets.append(nb.targets + s)
    return Neighborhood(np.concatenate(offsets),
                        np.concatenate(targets) if targets else np.zeros(0, np.int64),
                        int(starts[-1]))


def _stack_scaled_csr(mats: list[CsrMatrix], scales: list[float],
                      dtype: np.dtype) -> CsrMatrix:
    sizes = [m.shape[0] for m in mats]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    indptr = [np.asarray([0], dtype=np.int64)]
    indices = []
    data = []
    for m, s, a in zip(mats, starts, scales):
        indptr.append(m.indptr[1:] + indptr[-1][-1])
        indices.append(m.indices + s)
        data.append(np.asarray(m.data, dtype=dtype) * dtype.type(a))
    n = int(starts[-1])
    return CsrMatrix(np.concatenate(indptr), np.concatenate(indices),
                     np.concatenate(data), (n, n))


@dataclass
class BatchMember:
    """Per-mesh constants used by the batched training forward."""

    mesh: Mesh
    nbhd: Neighborhood
    laplacian: CsrMatrix
    cur_in: np.ndarray


@dataclass
class BatchResult:
    tape: Tape
    bound: ModelParams
    v_in: DiffArray
    v_wm: DiffArray
    w_ext: list[DiffArray]
    attacks: list[atk.AttackInstance]
    l_w: DiffArray
    l_m: DiffArray
    l_cur: DiffArray
    total: DiffArray


def _batch_attack(v_wm: DiffArray, members: list[BatchMember],
                  insts: list[atk.AttackInstance], starts: np.ndarray,
                  rng: Optional[np.random.Generator], dtype):
    """Apply the batch's attack kind with per-mesh intensities; returns the
    attacked stacked coordinates, the attacked union neighborhood, and the
    per-mesh attacked row ranges."""
    kind = insts[0].kind
    sizes = [m.mesh.n_vertices for m in members]
    blocks = [np.arange(starts[i], starts[i + 1]) for i in range(len(members))]

    if kind == "identity":
        return v_wm, None, blocks
    if kind == "rotation":
        parts = [atk.rotate(ad.gather_rows(v_wm, b), inst)
                 for b, inst in zip(blocks, insts)]
        return ad.concat(parts, axis=0), None, blocks
    if kind == "noise":
        noise = np.concatenate([
            rng.normal(0.0, inst.sigma, size=(n, 3)) if inst.sigma > 0
            else np.zeros((n, 3))
            for n, inst in zip(sizes, insts)])
        return ad.add(v_wm, noise), None, blocks
    if kind == "smoothing":
        lap = _stack_scaled_csr([m.laplacian for m in members],
                                [inst.alpha for inst in insts], np.dtype(dtype))
        return ad.sub(v_wm, ad.sparse_matvec(lap, v_wm)), None, blocks
    if kind == "cropping":
        kept_union = []
        att_meshes = []
        for m, b, inst in zip(members, blocks, insts):
            v_block = v_wm.data[b[0]:b[-1] + 1]
            sub_inst = atk.AttackInstance("cropping", beta=inst.beta)
            _, faces_att, kept = atk.crop(DiffArray(np.ascontiguousarray(v_block)),
                                          m.mesh.faces, sub_inst)
            inst.kept = kept
            kept_union.append(kept + b[0])
            att_meshes.append((v_block[kept], faces_att))
        kept_all = np.concatenate(kept_union)
        v_att = ad.gather_rows(v_wm, kept_all)
        nbhd_att = _stack_neighborhoods(
            [build_neighborhood(Mesh(v, f)) for v, f in att_meshes])
        att_sizes = np.concatenate([[0], np.cumsum([len(k) for k in kept_union])])
        att_blocks = [np.arange(att_sizes[i], att_sizes[i + 1])
                      for i in range(len(members))]
        return v_att, nbhd_att, att_blocks
    raise atk.AttackError(f"unknown attack kind {kind!r}")


def end_to_end_batch(params: ModelParams, members: list[BatchMember],
                     watermarks: list[Watermark],
                     insts: list[atk.AttackInstance],
                     rng: Optional[np.random.Generator] = None,
                     mode: str = "train", flags: NetFlags = NetFlags(),
                     update_running: bool = True,
                     lambdas: tuple[float, float, float] = (1.0, 1.0, 5.0),
                     no_curvature: bool = False, dtype=np.float32) -> BatchResult:
    """Minibatch forward on the disjoint union of the member meshes.

    All member instances must share one attack kind (selected per minibatch);
    intensities vary per mesh. Losses are averaged over the batch.
    """
    if not members:
        raise ValueError("empty batch")
    kinds = {inst.kind for inst in insts}
    if len(kinds) != 1:
        raise ValueError(f"one attack kind per minibatch, got {sorted(kinds)}")
    for m in members:
        if not m.mesh.normalized:
            raise ValueError("end_to_end_batch expects unit-cube-normalized meshes")

    b = len(members)
    sizes = [m.mesh.n_vertices for m in members]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    tape = Tape(dtype)
    bound = bind_model(params, tape)
    v_in = tape.leaf(np.concatenate([m.mesh.vertices for m in members]))
    union_nbhd = _stack_neighborhoods([m.nbhd for m in members])
    union_faces = np.concatenate([m.mesh.faces + starts[i]
                                  for i, m in enumerate(members)])

    f_in = _run_blocks(bound.feature, v_in, union_nbhd, mode, flags, update_running)
    codes = ad.concat([nn.encode_and_expand(bound.encoder,
                                            w.as_real(tape.dtype), n)
                       for w, n in zip(watermarks, sizes)], axis=0)
    h = ad.concat([v_in, f_in, codes], axis=1)
    h = _run_blocks(bound.aggregation, h, union_nbhd, mode, flags, update_running)
    delta = nn.graph_conv(bound.output_conv, h, union_nbhd, flags.degree_normalize)
    v_wm = ad.add(v_in, delta) if flags.residual_output else delta

    v_att, nbhd_att, att_blocks = _batch_attack(v_wm, members, insts, starts,
                                                rng, dtype)
    if nbhd_att is None:
        nbhd_att = union_nbhd
    f_no = _run_blocks(bound.extractor_blocks(), v_att, nbhd_att, mode, flags,
                       update_running)

    w_exts = []
    l_w_terms = []
    for w, block in zip(watermarks, att_blocks):
        pooled = ad.mean_(ad.gather_rows(f_no, block), axis=0)
        w_ext = nn.mlp2(bound.head, pooled)
        w_exts.append(w_ext)
        l_w_terms.append(losses.loss_w(w.as_real(tape.dtype), w_ext))
    l_w = ad.scalar_mul(_sum_terms(l_w_terms), 1.0 / b)

    sq = ad.sum_(ad.square(ad.sub(v_in, v_wm)), axis=1)
    l_m_terms = [ad.scalar_mul(ad.sum_(ad.gather_rows(sq, blk)), 1.0 / n)
                 for blk, n in zip(_input_blocks(starts), sizes)]
    l_m = ad.scalar_mul(_sum_terms(l_m_terms), 1.0 / b)

    normals = losses.tape_vertex_normals(v_wm, union_faces)
    cur_wm = losses.tape_vertex_curvature(v_wm, union_nbhd, normals)
    cur_in = np.concatenate([m.cur_in for m in members]).astype(np.dtype(dtype))
    cur_sq = ad.square(ad.sub(cur_wm, cur_in))
    l_cur_terms = [ad.scalar_mul(ad.sum_(ad.gather_rows(cur_sq, blk)), 1.0 / n)
                   for blk, n in zip(_input_blocks(starts), sizes)]
    l_cur = ad.scalar_mul(_sum_terms(l_cur_terms), 1.0 / b)

    total = losses.total_loss(l_w, l_cur, l_m, *lambdas, no_curvature=no_curvature)
    return BatchResult(tape, bound, v_in, v_wm, w_exts, insts,
                       l_w, l_m, l_cur, total)


def _input_blocks(starts: np.ndarray) -> list[np.ndarray]:
    return [np.arange(starts[i], starts[i + 1]) for i in range(len(starts) - 1)]


def _sum_terms(terms: list[DiffArray]) -> DiffArray:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
