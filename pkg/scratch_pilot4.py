import time

import numpy as np

from catpose import metrics, pipeline, profiles, synth
from catpose.pipeline import TrainConfig, evaluate_sample
from catpose.rng import Prng

prof = profiles.desk_profile()
cats = ("laptop", "camera_proxy")
root = Prng(7)
priors = {c: synth.build_prior(c, 12, root.derive("prior", c), n_points=prof.n_model) for c in cats}

train_samples = []
for c in cats:
    for i in range(150):
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
    stats = {c: [0, 0] for c in cats}
    cds, rots = {c: [] for c in cats}, {c: [] for c in cats}
    ycorr = []
    for i, s in enumerate(held):
        rec, cd, res = evaluate_sample(params, prof, s, priors[s.category], ransac_seed=i)
        cds[s.category].append(cd)
        # diagnostic: does predicted canonical height track the truth?
        ycorr.append(np.corrcoef(res.coords[:, 1], s.nocs[:, 1])[0, 1])
        if rec.pred is not None:
            stats[s.category][1] += 1
            rots[s.category].append(
                metrics.rotation_error(rec.pred.rotation, rec.gt.rotation, rec.symmetry)
            )
            if metrics.pose_within(rec.pred, rec.gt, 10, 10, rec.symmetry):
                stats[s.category][0] += 1
    for c in cats:
        print(
            f"[{tag}] {c}: {stats[c][0]}/{stats[c][1]} at 10/10, medrot "
            f"{np.median(rots[c]):.1f} deg, meanCD {np.mean(cds[c]):.5f}",
            flush=True,
        )
    print(f"[{tag}] median y-corr {np.median(ycorr):.3f}", flush=True)


eval_now("init")
t0 = time.time()
pipeline.toy_train(
    train_samples, priors, params, prof,
    TrainConfig(epochs=16, lr=1e-3, halve_every=6, seed=1),
    log=lambda s: print("  " + s, flush=True),
)
print(f"train: {time.time()-t0:.0f}s", flush=True)
eval_now("final")
