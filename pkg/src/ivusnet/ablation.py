"""Directional ablation study on synthetic phantoms.

Three arms are trained under identical budgets: the full model, the model
without the refining branches, and the full model trained without
augmentation. Each arm trains several models per seed and scores the
ensembled, thresholded probability maps on held-out phantoms (no contour
extraction), so the comparison isolates the architecture and data effects.
The no-augmentation arm gets proportionally more epochs so every arm takes
the same number of optimizer steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig
from .data import load_frame, synth_phantoms
from .metrics import jaccard
from .network import ArchConfig
from .training import TrainConfig, ensemble_predict, fit_network


@dataclass
class AblationResult:
    per_seed: dict = field(default_factory=dict)  # arm -> [jm per seed]

    def mean(self, arm):
        return float(np.mean(self.per_seed[arm]))

    def summary(self):
        lines = ["arm            mean held-out JM   per-seed"]
        for arm in ("full", "no_refine", "no_aug"):
            vals = ", ".join(f"{v:.3f}" for v in self.per_seed[arm])
            lines.append(f"{arm:<15}{self.mean(arm):>14.3f}   [{vals}]")
        lines.append("")
        lines.append(f"refining branch helps:  {self.mean('full'):.3f} >= "
                     f"{self.mean('no_refine'):.3f}  -> "
                     f"{self.mean('full') >= self.mean('no_refine')}")
        lines.append(f"augmentation helps:     {self.mean('full'):.3f} >= "
                     f"{self.mean('no_aug'):.3f}  -> "
                     f"{self.mean('full') >= self.mean('no_aug')}")
        return "\n".join(lines)


def _arm_jaccard(train_frames, test_frames, arch, models_per_arm, seed,
                 epochs, lr, batch_size, augment, target_index):
    models = []
    for k in range(models_per_arm):
        tcfg = TrainConfig(learning_rate=lr, batch_size=batch_size,
                           epochs=epochs, validation_count=0,
                           seed=1000 * seed + k)
        acfg = AugmentConfig(seed=1000 * seed + k) if augment else None
        net, _ = fit_network(train_frames, arch, tcfg, acfg,
                             target_index=target_index)
        models.append(net)
    scores = []
    for frame in test_frames:
        prob = ensemble_predict(models, frame.image)
        scores.append(jaccard(prob >= 0.5, frame.masks[target_index]))
    return float(np.mean(scores))


def run_ablation(work_dir, models_per_arm=5, n_seeds=3, size=48,
                 n_train=12, n_test=12, epochs=12, lr=3e-4, batch_size=6,
                 depths=(4, 8, 16, 32), target="lumen", data_seed=7,
                 progress=None):
    """Train all arms and return the per-seed held-out Jaccard scores.

    Arms share the phantom corpus and per-seed model seeds; the
    no-augmentation arm runs ``4 * epochs`` epochs over the originals so its
    optimizer step count matches the augmented arms (whose epoch streams are
    four times longer).
    """
    records = synth_phantoms(data_seed, n_train + n_test, size,
                             work_dir)
    frames = [load_frame(r) for r in records]
    train_frames = frames[:n_train]
    test_frames = frames[n_train:]
    target_index = 0 if target == "lumen" else 1

    arch_full = ArchConfig(block_depths=tuple(depths), refine=True)
    arch_norefine = ArchConfig(block_depths=tuple(depths), refine=False)
    arms = {
        "full": (arch_full, True, epochs),
        "no_refine": (arch_norefine, True, epochs),
        "no_aug": (arch_full, False, 4 * epochs),
    }
    result = AblationResult(per_seed={arm: [] for arm in arms})
    for seed in range(n_seeds):
        for arm, (arch, augment, arm_epochs) in arms.items():
            jm = _arm_jaccard(train_frames, test_frames, arch,
                              models_per_arm, seed, arm_epochs, lr,
                              batch_size, augment, target_index)
            result.per_seed[arm].append(jm)
            if progress is not None:
                progress(f"seed {seed} arm {arm}: held-out JM {jm:.3f}")
    return result
