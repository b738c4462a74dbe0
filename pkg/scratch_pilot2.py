import time

import numpy as np

from catpose import metrics, pipeline, profiles, synth
from catpose.pipeline import TrainConfig, evaluate_sample
from catpose.rng import Prng

prof = profiles.desk_profile()
cats = ("can", "bowl")
root = Prng(7)
priors = {c: synth.build_prior(c, 12, root.derive("prior", c), n_points=prof.n_model) for c in cats}

train_samples = []
for c in cats:
    for i in range(100):
        train_samples.append(
            synth.make_sample(c, root.derive("sample", c, i), prof.image_size, prof.n_observed, prof.n_model)
        )
held = []
for c in cats:
    for i in range(12):
        held.append(
            synth.make_sample(c, root.derive("held", c, i), prof.image_size, prof.n_observed, prof.n_model)
        )
print("data ready", flush=True)

params = pipeline.init_pipeline(Prng(42), prof)


def eval_now(tag):
    ok, cds, rots, trans = 0, [], [], []
    for i, s in enumerate(held):
        rec, cd, res = evaluate_sample(params, prof, s, priors[s.category], ransac_seed=i)
        cds.append(cd)
        if rec is not None:
            rots.append(metrics.rotation_error(rec.pred.rotation, rec.gt.rotation, rec.symmetry))
            trans.append(metrics.translation_error(rec.pred.translation, rec.gt.translation))
            if metrics.pose_within(rec.pred, rec.gt, 10, 10, rec.symmetry):
                ok += 1
    print(
        f"[{tag}] pose10/10 {ok}/{len(held)}  meanCD {np.mean(cds):.5f}  "
        f"medrot {np.median(rots):.2f}  medtrans {np.median(trans)*100:.2f}cm",
        flush=True,
    )


t0 = time.time()
for stage in range(5):
    pipeline.toy_train(
        train_samples, priors, params, prof,
        TrainConfig(epochs=4, lr=2e-3 * (0.6 ** stage), halve_every=10**9, seed=stage),
        log=lambda s: print("  " + s, flush=True),
    )
    eval_now(f"after {(stage + 1) * 4} epochs, {time.time()-t0:.0f}s")
