"""Long instrumented run: eval every 50 epochs, watch the l_cur turn."""
import sys
import time

import numpy as np

from meshmark.attacks import AttackConfig
from meshmark.synth import SynthSpec, generate
from meshmark.train import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 400
no_attacks = len(sys.argv) > 2 and sys.argv[2] == "noattack"

train_set = generate(SynthSpec(level=3, count=100, amplitude=0.2, seed=100))
test_set = generate(SynthSpec(level=3, count=20, amplitude=0.2, seed=200))
grid = [("identity", 0.0), ("rotation", 15.0), ("noise", 0.03),
        ("smoothing", 0.2), ("cropping", 0.8)]

t0 = time.time()


def peek(row, params):
    if row.epoch % 50 != 49 and row.epoch != epochs - 1:
        return
    rows = evaluate(params, test_set, grid, seed=11)
    am = np.mean([r.bit_acc_mean for r in rows[1:]])
    print(f"  [{(time.time()-t0)/60:5.1f} min] epoch {row.epoch:3d} "
          f"train_acc {row.bit_acc:6.2f} l_w {row.l_w:.4f} | eval id "
          f"{rows[0].bit_acc_mean:6.2f} attacks {am:6.2f} lcur "
          f"{rows[0].lcur_mean:.5f} mrms {rows[0].mrms_mean:.4f}", flush=True)


cfg = TrainConfig(epochs=epochs, batch_size=10, watermark_length=16, seed=0,
                  attack=AttackConfig(), no_attack_layers=no_attacks)
res = train(cfg, train_set, on_epoch=peek)
print(f"total {(time.time()-t0)/60:.1f} min", flush=True)
