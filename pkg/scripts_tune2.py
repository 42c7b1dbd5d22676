"""Probe: zero-init output conv + gradient-coupling diagnostics."""
import sys
import time

import numpy as np

from meshmark import attacks as atk
from meshmark.attacks import AttackConfig
from meshmark.autodiff import backward, grad_of
from meshmark.mesh import build_neighborhood, laplacian_matrix
from meshmark.model import Watermark, end_to_end, init_model, named_learnables
from meshmark.synth import SynthSpec, generate
from meshmark.train import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

train_set = generate(SynthSpec(level=3, count=100, amplitude=0.2, seed=100))
test_set = generate(SynthSpec(level=3, count=20, amplitude=0.2, seed=200))

# gradient coupling diagnostic on the *stuck* glorot model
params = init_model(16, seed=0)
mesh = train_set[0]
nbhd = build_neighborhood(mesh)
lap = laplacian_matrix(nbhd).astype(np.float32)
rng = np.random.default_rng(0)
res = end_to_end(params, mesh, nbhd, lap, Watermark.random(16, rng),
                 atk.AttackInstance("identity"), rng, update_running=False)
g_w = backward(res.tape, res.l_w)
g_m = backward(res.tape, res.l_m)
for name, leaf in named_learnables(res.bound):
    if name in ("encoder.weight", "output_conv.w0", "head.w2", "feature.0.conv1.w0"):
        gw = np.abs(grad_of(g_w, leaf)).mean()
        gm = np.abs(grad_of(g_m, leaf)).mean()
        print(f"{name:22s} |dl_w/dp|={gw:.2e}  |dl_m/dp|={gm:.2e}")

def zero_out(p):
    p.output_conv.w0[...] = 0
    p.output_conv.w1[...] = 0
    p.output_conv.bias[...] = 0

import meshmark.train as trainmod
orig_init = trainmod.init_model
def patched(*a, **k):
    p = orig_init(*a, **k)
    zero_out(p)
    return p
trainmod.init_model = patched

cfg = TrainConfig(epochs=epochs, batch_size=10, watermark_length=16, seed=0,
                  attack=AttackConfig())
t0 = time.time()
res = train(cfg, train_set)
print(f"train {epochs} epochs (zero out-conv): {(time.time() - t0) / 60:.1f} min")
for row in res.log[:: max(1, epochs // 15)]:
    print(f"  epoch {row.epoch:3d} total {row.total:9.4f} l_w {row.l_w:7.4f} "
          f"l_m {row.l_m:8.5f} l_cur {row.l_cur:8.5f} acc {row.bit_acc:6.2f}")
grid = [("identity", 0.0), ("rotation", 15.0), ("noise", 0.03),
        ("smoothing", 0.2), ("cropping", 0.8)]
rows = evaluate(res.params, test_set, grid, seed=11)
for r in rows:
    print(f"  eval {r.attack:10s} {r.intensity:5.2f}: acc {r.bit_acc_mean:6.2f} "
          f"hd {r.hd_mean:.4f} mrms {r.mrms_mean:.4f} lcur {r.lcur_mean:.5f}")
