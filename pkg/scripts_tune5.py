"""Probe: untied feature module and/or low-frequency dataset."""
import sys
import time

import numpy as np

import meshmark.model as mm
import meshmark.train as tm
from meshmark.attacks import AttackConfig
from meshmark.synth import SynthSpec, generate
from meshmark.train import TrainConfig, evaluate, train

variant = sys.argv[1]  # tied | untied
freq = int(sys.argv[2])
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 100

train_set = generate(SynthSpec(level=3, count=100, amplitude=0.2,
                               frequency=freq, seed=100))
test_set = generate(SynthSpec(level=3, count=20, amplitude=0.2,
                              frequency=freq, seed=200))
grid = [("identity", 0.0), ("rotation", 15.0), ("noise", 0.03),
        ("smoothing", 0.2), ("cropping", 0.8)]

if variant == "untied":
    orig = mm.init_model
    def patched(length=64, seed=0, tied=True, dtype=np.float32):
        return orig(length, seed, False, dtype)
    tm.init_model = patched

t0 = time.time()

def peek(row, params):
    if row.epoch % 25 != 24 and row.epoch != epochs - 1:
        return
    rows = evaluate(params, test_set, grid, seed=11)
    am = np.mean([r.bit_acc_mean for r in rows[1:]])
    print(f"  [{(time.time()-t0)/60:5.1f} min] epoch {row.epoch:3d} "
          f"train_acc {row.bit_acc:6.2f} l_w {row.l_w:.4f} | id "
          f"{rows[0].bit_acc_mean:6.2f} att {am:6.2f} lcur "
          f"{rows[0].lcur_mean:.5f}", flush=True)

cfg = TrainConfig(epochs=epochs, batch_size=10, watermark_length=16, seed=0,
                  attack=AttackConfig())
res = train(cfg, train_set, on_epoch=peek)
print(f"{variant} freq={freq}: total {(time.time()-t0)/60:.1f} min", flush=True)
