"""Tuning probe for the toy training experiment (not part of the package)."""
import sys
import time

import numpy as np

from meshmark.attacks import AttackConfig
from meshmark.model import init_model
from meshmark.synth import SynthSpec, generate
from meshmark.train import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

train_set = generate(SynthSpec(level=3, count=100, amplitude=0.2, seed=100))
test_set = generate(SynthSpec(level=3, count=20, amplitude=0.2, seed=200))

cfg = TrainConfig(epochs=epochs, batch_size=10, watermark_length=16, seed=0,
                  attack=AttackConfig())
t0 = time.time()
res = train(cfg, train_set)
t1 = time.time()
print(f"train {epochs} epochs: {(t1 - t0) / 60:.1f} min")
for row in res.log[:: max(1, epochs // 10)]:
    print(f"  epoch {row.epoch:3d} total {row.total:9.4f} l_w {row.l_w:7.4f} "
          f"l_m {row.l_m:8.5f} l_cur {row.l_cur:8.5f} acc {row.bit_acc:6.2f}")
print(f"  final epoch {res.log[-1].epoch}: total {res.log[-1].total:.4f} acc {res.log[-1].bit_acc:.2f}")

grid = [("identity", 0.0), ("rotation", 15.0), ("noise", 0.03),
        ("smoothing", 0.2), ("cropping", 0.8)]
rows = evaluate(res.params, test_set, grid, seed=11)
for r in rows:
    print(f"  eval {r.attack:10s} {r.intensity:5.2f}: acc {r.bit_acc_mean:6.2f} "
          f"+- {r.bit_acc_std:5.2f}  hd {r.hd_mean:.4f} mrms {r.mrms_mean:.4f} "
          f"lcur {r.lcur_mean:.5f}")
attack_mean = np.mean([r.bit_acc_mean for r in rows[1:]])
print(f"  identity acc: {rows[0].bit_acc_mean:.2f} | attack mean: {attack_mean:.2f} "
      f"| lcur: {rows[0].lcur_mean:.5f}")
print(f"eval time: {(time.time() - t1) / 60:.1f} min")
