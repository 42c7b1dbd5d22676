"""Probe: encoder init scale variants, 40 epochs each."""
import sys
import time

import numpy as np

import meshmark.model as mm
from meshmark.attacks import AttackConfig
from meshmark.synth import SynthSpec, generate
from meshmark.train import TrainConfig, evaluate, train

scale = float(sys.argv[1])
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40
seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0

train_set = generate(SynthSpec(level=3, count=100, amplitude=0.2, seed=100))
test_set = generate(SynthSpec(level=3, count=20, amplitude=0.2, seed=200))

orig = mm.init_model
def patched(length=64, seed=0, tied=True, dtype=np.float32):
    p = orig(length, seed, tied, dtype)
    p.encoder.weight[...] = p.encoder.weight * scale
    return p
mm.init_model = patched
import meshmark.train as tm
tm.init_model = patched

cfg = TrainConfig(epochs=epochs, batch_size=10, watermark_length=16, seed=seed,
                  attack=AttackConfig())
t0 = time.time()
res = train(cfg, train_set)
print(f"scale={scale} seed={seed}: {epochs} epochs in {(time.time()-t0)/60:.1f} min")
for row in res.log[:: max(1, epochs // 8)]:
    print(f"  epoch {row.epoch:3d} total {row.total:9.4f} l_w {row.l_w:7.4f} "
          f"l_m {row.l_m:8.5f} l_cur {row.l_cur:8.5f} acc {row.bit_acc:6.2f}")
grid = [("identity", 0.0), ("rotation", 15.0), ("noise", 0.03),
        ("smoothing", 0.2), ("cropping", 0.8)]
rows = evaluate(res.params, test_set, grid, seed=11)
am = np.mean([r.bit_acc_mean for r in rows[1:]])
print(f"  eval identity {rows[0].bit_acc_mean:.2f} attacks {am:.2f} "
      f"lcur {rows[0].lcur_mean:.5f} hd {rows[0].hd_mean:.4f}")
