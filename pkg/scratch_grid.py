import json
import sys
import time

import numpy as np

from validmark.augment import AugmentConfig
from validmark.evaluate import discard_worst, evaluate, pearson
from validmark.losses import LossConfig
from validmark.net import NetConfig, OptimConfig
from validmark.synth import SynthConfig, generate
from validmark.train import TrainConfig, train

scfg = SynthConfig(train_common=850, train_challenging=150, test_common=200,
                   test_challenging=50, landmark_count=5, image_size=96, seed=42)
data = generate(scfg)

NET = NetConfig(landmark_count=5, input_size=32, stem_channels=8,
                block_channels=(8, 16, 32), fc_hidden=64)

recipes = {
    "A_paper_aug_lr03": dict(
        optim=OptimConfig(learning_rate=0.03, batch_size=10,
                          schedule=((0, 0.03), (40, 0.003))),
        augment=AugmentConfig(out_size=32),
        epochs=60),
    "B_mild_aug_lr03": dict(
        optim=OptimConfig(learning_rate=0.03, batch_size=10,
                          schedule=((0, 0.03), (40, 0.003))),
        augment=AugmentConfig(out_size=32, noise_max_frac=0.2, shift_max_frac=0.2,
                              scale_range=(0.9, 1.1), blur_prob=0.3,
                              occlude_prob=0.35, occlude_max_area_frac=0.3,
                              contrast_range=(-50, 50)),
        epochs=60),
    "C_mild_aug_lr06": dict(
        optim=OptimConfig(learning_rate=0.06, batch_size=10,
                          schedule=((0, 0.06), (35, 0.012), (50, 0.0024))),
        augment=AugmentConfig(out_size=32, noise_max_frac=0.2, shift_max_frac=0.2,
                              scale_range=(0.9, 1.1), blur_prob=0.3,
                              occlude_prob=0.35, occlude_max_area_frac=0.3,
                              contrast_range=(-50, 50)),
        epochs=60),
}

for name, r in recipes.items():
    t0 = time.perf_counter()
    cfg = TrainConfig(epochs=r["epochs"], seed=42, net=NET, optim=r["optim"],
                      loss=LossConfig(), augment=r["augment"])
    result = train(data.train, None, cfg)
    records, rows = evaluate(result.net, data.test)
    sig = np.concatenate([x.signals for x in records])
    err = np.concatenate([x.errors for x in records])
    curve = [100 * discard_worst(records, f) for f in (0.0, 0.1, 0.2, 0.3)]
    out = {
        "recipe": name,
        "minutes": round((time.perf_counter() - t0) / 60, 2),
        "final_loss": round(result.history.rows[-1].mean_loss, 4),
        "pearson": round(pearson(sig, err), 4),
        "nme": {row.subset: round(row.nme, 3) for row in rows},
        "discard_curve": [round(v, 3) for v in curve],
    }
    print(json.dumps(out), flush=True)
