"""Watermark network: embed/extract contracts, reordering symmetry, the
end-to-end tape, straight-line oracle agreement, and gradient checks."""

import numpy as np
import pytest

from meshmark import attacks as atk
from meshmark import autodiff as ad
from meshmark import model as wm
from meshmark import nn
from meshmark.autodiff import Tape, backward, grad_of
from meshmark.mesh import Mesh, build_neighborhood, laplacian_matrix, normalize_unit_cube
from meshmark.model import (ModelParams, NetFlags, Watermark, decode_bits, embed,
                            end_to_end, extract, init_model, named_learnables)
from meshmark.synth import icosphere

from conftest import randomize_output_conv, rel_err
from test_nn import np_batch_norm_train, np_graph_conv


def small_mesh():
    m, _ = normalize_unit_cube(icosphere(0))
    return m


def permuted_copy(mesh: Mesh, perm: np.ndarray) -> Mesh:
    inv = np.argsort(perm)
    return Mesh(mesh.vertices[perm], inv[mesh.faces], normalized=mesh.normalized)


# --- watermark type ---------------------------------------------------------------

def test_watermark_hex_round_trip(rng):
    w = Watermark.random(64, rng)
    assert len(w.to_hex()) == 16
    assert np.array_equal(Watermark.from_hex(w.to_hex(), 64).bits, w.bits)


def test_watermark_hex_length_validation():
    with pytest.raises(ValueError):
        Watermark.from_hex("abc", 64)


def test_watermark_rejects_non_binary():
    with pytest.raises(ValueError):
        Watermark(np.array([0, 2, 1]))


def test_decode_bits_examples():
    assert decode_bits(np.array([0.9, 0.1])).bits.tolist() == [1, 0]
    assert decode_bits(np.full(8, 0.5)).bits.tolist() == [0] * 8  # strict >
    with pytest.raises(ValueError, match="non-finite"):
        decode_bits(np.array([np.nan, 0.2]))


def test_decode_recovers_exact_bits(rng):
    w = Watermark.random(32, rng)
    assert np.array_equal(decode_bits(w.as_real()).bits, w.bits)


# --- embed ------------------------------------------------------------------------

def test_embed_zero_output_conv_is_identity(rng):
    mesh = small_mesh()
    nbhd = build_neighborhood(mesh)
    params = init_model(8, seed=3)
    params.output_conv.w0[...] = 0
    params.output_conv.w1[...] = 0
    params.output_conv.bias[...] = 0
    out = embed(params, mesh, nbhd, Watermark.random(8, rng))
    # the network runs in float32: identity is exact at that resolution
    assert np.array_equal(out.vertices.astype(np.float32),
                          mesh.vertices.astype(np.float32))
    assert np.array_equal(out.faces, mesh.faces)


def test_embed_requires_normalized():
    mesh = icosphere(0)  # not normalized
    params = init_model(8)
    with pytest.raises(ValueError, match="normalized"):
        embed(params, mesh, build_neighborhood(mesh), Watermark(np.zeros(8, dtype=np.uint8)))


def test_embed_rejects_wrong_length(rng):
    mesh = small_mesh()
    params = init_model(8)
    with pytest.raises(ValueError, match="length"):
        embed(params, mesh, build_neighborhood(mesh), Watermark.random(16, rng))


def test_embed_preserves_structure(rng):
    mesh = small_mesh()
    params = randomize_output_conv(init_model(8, seed=1), rng)
    out = embed(params, mesh, build_neighborhood(mesh), Watermark.random(8, rng))
    assert out.n_vertices == mesh.n_vertices
    assert np.array_equal(out.faces, mesh.faces)
    assert not np.array_equal(out.vertices, mesh.vertices)


def test_literal_output_mode_differs(rng):
    mesh = small_mesh()
    nbhd = build_neighborhood(mesh)
    params = randomize_output_conv(init_model(8, seed=1), rng)
    w = Watermark.random(8, rng)
    residual = embed(params, mesh, nbhd, w)
    literal = embed(params, mesh, nbhd, w, NetFlags(residual_output=False))
    assert np.allclose(residual.vertices - mesh.vertices, literal.vertices, atol=1e-6)


def _f64_model(length, seed):
    return init_model(length, seed=seed, dtype=np.float64)


def test_embedding_equivariant_to_vertex_reordering(rng):
    mesh = small_mesh()
    nbhd = build_neighborhood(mesh)
    params = randomize_output_conv(_f64_model(8, 5), rng)
    w = Watermark.random(8, rng)
    perm = rng.permutation(mesh.n_vertices)
    pmesh = permuted_copy(mesh, perm)
    pnbhd = build_neighborhood(pmesh)

    def run(m, nb):
        t = Tape(np.float64)
        bound = wm.bind_model(params, t)
        return wm.embed_vertices(bound, t.leaf(m.vertices), nb,
                                 w.as_real(np.float64), "infer").data

    out = run(mesh, nbhd)
    out_p = run(pmesh, pnbhd)
    assert rel_err(out_p, out[perm]) < 1e-6


def test_extraction_invariant_to_vertex_reordering(rng):
    mesh = small_mesh()
    params = _f64_model(8, 5)
    perm = rng.permutation(mesh.n_vertices)
    pmesh = permuted_copy(mesh, perm)

    def run(m):
        t = Tape(np.float64)
        bound = wm.bind_model(params, t)
        return wm.extract_vector(bound, t.leaf(m.vertices),
                                 build_neighborhood(m), "infer").data

    assert rel_err(run(pmesh), run(mesh)) < 1e-5


def test_extract_single_vertex_mesh_defined():
    mesh = Mesh(np.zeros((1, 3)), np.zeros((0, 3), dtype=np.int64), normalized=True)
    params = init_model(8)
    out = extract(params, mesh, build_neighborhood(mesh))
    assert out.shape == (8,) and np.isfinite(out).all()


def test_extract_empty_mesh_rejected():
    mesh = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), normalized=True)
    params = init_model(8)
    with pytest.raises(ValueError):
        extract(params, mesh, build_neighborhood(mesh))


def test_embed_matches_straightline_oracle(rng):
    """Independent numpy reimplementation of the whole embedding forward."""
    mesh = small_mesh()
    nbhd = build_neighborhood(mesh)
    params = randomize_output_conv(_f64_model(8, 11), rng)
    w = Watermark.random(8, rng)

    t = Tape(np.float64)
    bound = wm.bind_model(params, t)
    got = wm.embed_vertices(bound, t.leaf(mesh.vertices), nbhd,
                            w.as_real(np.float64), "train", update_running=False).data

    def np_block(block, x):
        h = np.maximum(np_batch_norm_train(block.bn1, np_graph_conv(block.conv1, x, nbhd)), 0)
        h = np.maximum(np_batch_norm_train(block.bn2, np_graph_conv(block.conv2, h, nbhd)), 0)
        return h + (x if block.projection is None else x @ block.projection)

    x = mesh.vertices
    f = x
    for block in params.feature:
        f = np_block(block, f)
    z = w.as_real(np.float64) @ params.encoder.weight + params.encoder.bias
    h = np.concatenate([x, f, np.tile(z, (mesh.n_vertices, 1))], axis=1)
    for block in params.aggregation:
        h = np_block(block, h)
    delta = np_graph_conv(params.output_conv, h, nbhd)
    want = x + delta
    assert rel_err(got, want) < 1e-5


def test_extract_matches_straightline_oracle(rng):
    mesh = small_mesh()
    nbhd = build_neighborhood(mesh)
    params = _f64_model(8, 12)

    t = Tape(np.float64)
    bound = wm.bind_model(params, t)
    got = wm.extract_vector(bound, t.leaf(mesh.vertices), nbhd, "train",
                            update_running=False).data

    def np_block(block, x):
        h = np.maximum(np_batch_norm_train(block.bn1, np_graph_conv(block.conv1, x, nbhd)), 0)
        h = np.maximum(np_batch_norm_train(block.bn2, np_graph_conv(block.conv2, h, nbhd)), 0)
        return h + (x if block.projection is None else x @ block.projection)

    f = mesh.vertices
    for block in params.feature:
        f = np_block(block, f)
    pooled = f.mean(axis=0)
    want = np.maximum(pooled @ params.head.w1 + params.head.b1, 0) @ params.head.w2 \
        + params.head.b2
    assert rel_err(got, want) < 1e-5


# --- end to end -------------------------------------------------------------------

def _prep(mesh):
    nbhd = build_neighborhood(mesh)
    return nbhd, laplacian_matrix(nbhd)


def test_end_to_end_identity_zero_conv(rng):
    mesh = small_mesh()
    nbhd, lap = _prep(mesh)
    params = init_model(8, seed=2)
    params.output_conv.w0[...] = 0
    params.output_conv.w1[...] = 0
    params.output_conv.bias[...] = 0
    res = end_to_end(params, mesh, nbhd, lap, Watermark.random(8, rng),
                     atk.AttackInstance("identity"), rng)
    assert np.array_equal(res.v_att.data, res.v_wm.data)  # identity: bitwise
    assert float(res.l_m.data) == 0.0
    assert float(res.l_cur.data) < 1e-10
    assert res.v_att is res.v_wm


def test_end_to_end_crop_keeps_length_and_blocks_dropped_grads(rng):
    mesh, _ = normalize_unit_cube(icosphere(1))
    nbhd, lap = _prep(mesh)
    params = randomize_output_conv(init_model(8, seed=2), rng)
    inst = atk.AttackInstance("cropping", beta=0.85)
    res = end_to_end(params, mesh, nbhd, lap, Watermark.random(8, rng), inst, rng)
    assert res.w_ext.data.shape == (8,)
    assert res.v_att.data.shape[0] < mesh.n_vertices
    # gradients through the extraction path reach only retained rows of v_wm
    probe = ad.mean_(ad.square(res.w_ext))
    g = grad_of(backward(res.tape, probe), res.v_wm)
    dropped = np.setdiff1d(np.arange(mesh.n_vertices), inst.kept)
    assert (g[dropped] == 0).all()
    assert np.abs(g[inst.kept]).max() > 0


def test_end_to_end_losses_match_module_formulas(rng):
    mesh = small_mesh()
    nbhd, lap = _prep(mesh)
    params = randomize_output_conv(init_model(8, seed=4), rng)
    w = Watermark.random(8, rng)
    res = end_to_end(params, mesh, nbhd, lap, w, atk.AttackInstance("identity"), rng,
                     lambdas=(1.0, 1.0, 5.0))
    want_l_w = np.mean((w.as_real(np.float64) - res.w_ext.data.astype(np.float64)) ** 2)
    assert rel_err(res.l_w.data, want_l_w) < 1e-6
    want_l_m = np.mean(np.sum((mesh.vertices - res.v_wm.data.astype(np.float64)) ** 2, axis=1))
    assert rel_err(res.l_m.data, want_l_m) < 1e-5
    total = float(res.l_w.data) + float(res.l_cur.data) + 5 * float(res.l_m.data)
    assert rel_err(res.total.data, total) < 1e-6


def test_tied_feature_module_parameter_identity():
    tied = init_model(8, seed=1, tied=True)
    assert tied.extractor_blocks() is tied.feature
    untied = init_model(8, seed=1, tied=False)
    assert untied.extractor_blocks() is untied.extractor_feature
    assert untied.extractor_feature is not untied.feature
    names = [n for n, _ in named_learnables(untied)]
    assert any(n.startswith("extractor_feature.") for n in names)


def test_tied_training_gradients_accumulate_on_shared_leaves(rng):
    mesh = small_mesh()
    nbhd, lap = _prep(mesh)
    params = randomize_output_conv(init_model(8, seed=6), rng)
    res = end_to_end(params, mesh, nbhd, lap, Watermark.random(8, rng),
                     atk.AttackInstance("identity"), rng)
    bound_names = [n for n, _ in named_learnables(res.bound)]
    assert not any(n.startswith("extractor_feature.") for n in bound_names)
    gmap = backward(res.tape, res.total)
    g = grad_of(gmap, res.bound.feature[0].conv1.w0)
    assert np.abs(g).max() > 0


def test_end_to_end_gradient_check_sampled(rng):
    """Sampled-coordinate finite differences through the full pipeline."""
    mesh, _ = normalize_unit_cube(icosphere(0))
    nbhd, lap = _prep(mesh)
    params = randomize_output_conv(_f64_model(6, 13), rng)
    w = Watermark.random(6, rng)

    for kind in ("identity", "smoothing"):
        inst = atk.AttackInstance(kind, alpha=0.15 if kind == "smoothing" else None)

        def loss():
            res = end_to_end(params, mesh, nbhd, lap, w, inst, None,
                             mode="train", update_running=False, dtype=np.float64)
            return res

        res = loss()
        f0 = float(res.total.data)
        gmap = backward(res.tape, res.total)
        grads = {n: grad_of(gmap, leaf) for n, leaf in named_learnables(res.bound)}

        arrays = dict(named_learnables(params))
        # note: conv biases immediately before train-mode BN have exactly-zero
        # gradients (mean subtraction), so they are no use for FD comparison
        for name in ("feature.0.conv1.w0", "feature.2.conv2.w0", "encoder.weight",
                     "aggregation.0.bn1.gamma", "output_conv.w0", "head.w2",
                     "head.b2"):
            arr = arrays[name]
            for k in rng.choice(arr.size, size=2, replace=False):
                orig = arr.flat[k]
                # eps small enough to sit inside the quadratic regime: the
                # curvature loss is strongly non-quadratic near the zero-offset
                # initialization
                eps = 1e-6
                arr.flat[k] = orig + eps
                fp = float(loss().total.data)
                arr.flat[k] = orig - eps
                fm = float(loss().total.data)
                arr.flat[k] = orig
                fd = (fp - fm) / (2 * eps)
                got = grads[name].flat[k]
                # denominator floor scales with |f|: central differences carry
                # cancellation noise of roughly |f| * ulp / eps
                denom = max(abs(fd), abs(got), 1e-5 * max(1.0, abs(f0)))
                assert abs(got - fd) / denom < 1e-4, \
                    f"{kind}:{name}[{k}] {got} vs {fd}"
