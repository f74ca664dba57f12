import json
import time

import numpy as np

from validmark.augment import AugmentConfig
from validmark.evaluate import discard_worst, evaluate, pearson
from validmark.losses import LossConfig
from validmark.net import NetConfig, OptimConfig
from validmark.synth import SynthConfig, generate
from validmark.train import TrainConfig, train

scfg = SynthConfig(train_common=1700, train_challenging=300, test_common=400,
                   test_challenging=100, landmark_count=5, image_size=96, seed=42)
t0 = time.perf_counter()
data = generate(scfg)
print(f"gen {time.perf_counter()-t0:.0f}s", flush=True)

cfg = TrainConfig(
    epochs=120, seed=42,
    net=NetConfig(landmark_count=5, input_size=32, stem_channels=8,
                  block_channels=(8, 16, 32), fc_hidden=64),
    optim=OptimConfig(learning_rate=0.03, batch_size=10,
                      schedule=((0, 0.03), (80, 0.003), (105, 0.0006))),
    loss=LossConfig(),
    augment=AugmentConfig(out_size=32),
    eval_every=30,
)
t0 = time.perf_counter()
result = train(data.train, data.test, cfg)
minutes = (time.perf_counter() - t0) / 60
records, rows = evaluate(result.net, data.test)
sig = np.concatenate([x.signals for x in records])
err = np.concatenate([x.errors for x in records])
curve = [100 * discard_worst(records, f) for f in (0.0, 0.1, 0.2, 0.3)]
print(json.dumps({
    "minutes": round(minutes, 1),
    "final_loss": round(result.history.rows[-1].mean_loss, 4),
    "pearson": round(pearson(sig, err), 4),
    "nme": {row.subset: round(row.nme, 3) for row in rows},
    "discard_curve": [round(v, 3) for v in curve],
}), flush=True)
for r in result.history.rows:
    if r.common_nme is not None:
        print(f"  epoch {r.epoch}: loss {r.mean_loss:.3f} "
              f"common {r.common_nme:.2f} chal {r.challenging_nme:.2f}", flush=True)
