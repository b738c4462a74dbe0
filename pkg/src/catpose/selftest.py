"""Fast self-contained property checks behind the `selftest` subcommand.

Each check re-derives its expected values independently (small oracles,
closed forms) rather than trusting the code path it probes.
"""

from __future__ import annotations

import numpy as np


def _check_pixel_shapes():
    from . import pixelformer as pf
    from .profiles import desk_profile
    from .rng import Prng
    from .tensor import Tensor, no_grad

    prof = desk_profile()
    params = pf.init_pixelformer(Prng(11), prof.pixel)
    img = np.random.default_rng(0).uniform(size=(64, 64, 3))
    with no_grad():
        levels = pf.encoder_forward(params, prof.pixel, Tensor(img))
        out = pf.decoder_forward(params.decoder, prof.pixel, levels)
    got = [lv.shape for lv in levels]
    want = [(16, 16, 8), (8, 8, 16), (4, 4, 24), (2, 2, 32)]
    ok = got == want and out.shape == (64, 64, 32) and np.isfinite(out.data).all()
    return ok, f"levels {got}, decoder {out.shape}"


def _check_attention_oracle():
    from . import ops, pixelformer as pf
    from .rng import Prng
    from .tensor import Tensor

    rng = np.random.default_rng(1)
    c, heads, n = 8, 2, 25
    p = Prng(12)
    attn = pf.SrmaParams(
        query=ops.init_linear(p.derive(0), c, c),
        key=ops.init_linear(p.derive(1), c, c),
        value=ops.init_linear(p.derive(2), c, c),
        out=ops.init_linear(p.derive(3), c, c),
        sr_norm=ops.init_norm(c),
        sr_proj=ops.init_linear(p.derive(4), c, c),
    )
    x = rng.normal(size=(n, c))
    mu, var = x.mean(axis=0), x.var(axis=0)
    xn = (x - mu) / np.sqrt(var + 1e-5) * attn.sr_norm.gain.data + attn.sr_norm.bias.data
    red = xn @ attn.sr_proj.weight.data + attn.sr_proj.bias.data
    q = x @ attn.query.weight.data + attn.query.bias.data
    k = red @ attn.key.weight.data + attn.key.bias.data
    v = red @ attn.value.weight.data + attn.value.bias.data
    d = c // heads
    merged = np.zeros((n, c))
    for h in range(heads):
        qh, kh, vh = (m[:, h * d : (h + 1) * d] for m in (q, k, v))
        for i in range(n):
            logits = qh[i] @ kh.T / np.sqrt(d)
            e = np.exp(logits - logits.max())
            merged[i, h * d : (h + 1) * d] = (e / e.sum()) @ vh
    want = merged @ attn.out.weight.data + attn.out.bias.data
    got = pf.srma_attention(attn, Tensor(x), (5, 5), heads, 1).data
    err = np.abs(got - want).max()
    return err < 1e-10, f"max |diff| {err:.2e}"


def _check_point_equivariance():
    from . import pointformer as pof
    from .profiles import desk_profile
    from .rng import Prng
    from .tensor import Tensor, no_grad

    prof = desk_profile()
    params = pof.init_pointformer(Prng(13), prof.point)
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(48, 3)) * 0.2
    with no_grad():
        base = pof.forward(params, prof.point, Tensor(pts)).data
        worst = 0.0
        for _ in range(5):
            perm = rng.permutation(48)
            out = pof.forward(params, prof.point, Tensor(pts[perm])).data
            worst = max(worst, float(np.abs(out - base[perm]).max()))
    return worst < 1e-10, f"max |diff| {worst:.2e}"


def _check_umeyama():
    from .pose import umeyama

    rng = np.random.default_rng(3)
    src = rng.normal(size=(100, 3))
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    dst = 0.37 * src @ r.T + np.array([0.1, -0.2, 0.8])
    pose = umeyama(src, dst)
    rot_err = np.abs(pose.rotation - r).max()
    mirror = umeyama(src, -src)
    ok = rot_err < 1e-9 and abs(pose.scale - 0.37) < 1e-9 and np.linalg.det(mirror.rotation) > 0
    return ok, f"rot err {rot_err:.2e}, mirror det {np.linalg.det(mirror.rotation):+.3f}"


def _check_ransac():
    from .pose import RansacConfig, ransac_umeyama

    good = 0
    for seed in range(5):
        rng = np.random.default_rng(500 + seed)
        src = rng.uniform(-0.5, 0.5, size=(200, 3))
        angle = rng.uniform(0, np.pi)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        kmat = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        r = np.eye(3) + np.sin(angle) * kmat + (1 - np.cos(angle)) * kmat @ kmat
        t, s = rng.normal(size=3), 0.3
        dst = s * src @ r.T + t
        idx = rng.choice(200, size=60, replace=False)
        dst[idx] = rng.uniform(-1, 1, size=(60, 3))
        pose, _ = ransac_umeyama(src, dst, RansacConfig(seed=seed))
        if np.abs(pose.rotation - r).max() < 1e-6 and abs(pose.scale - s) / s < 0.01:
            good += 1
    return good == 5, f"{good}/5 contaminated fits recovered"


def _check_loss_fixed_points():
    from .losses import chamfer, correspondence_loss, sparsity_reg, total_loss

    pts = np.random.default_rng(4).normal(size=(40, 3))
    ok1 = float(chamfer(pts, pts).data) == 0.0
    uniform = np.full((2, 256), 1.0 / 256)
    ok2 = abs(float(sparsity_reg(uniform).data) - np.log(256)) < 1e-9
    ok3 = float(sparsity_reg(np.eye(256)[:5]).data) == 0.0
    joint = float(correspondence_loss(np.array([[0.1, 0, 0]]), np.zeros((1, 3))).data)
    ok4 = abs(joint - 0.05) < 1e-12
    ok5 = abs(float(total_loss(1, 1, 1, 1).data) - 7.0001) < 1e-12
    return all((ok1, ok2, ok3, ok4, ok5)), "chamfer/entropy/smooth-L1/total all at closed forms"


def _check_iou3d():
    from .metrics import OrientedBox, iou3d

    a = OrientedBox(np.zeros(3), np.full(3, 0.5), np.eye(3))
    b = OrientedBox(np.array([0.5, 0, 0]), np.full(3, 0.5), np.eye(3))
    c = OrientedBox(np.array([9.0, 0, 0]), np.full(3, 0.5), np.eye(3))
    vals = (iou3d(a, a), iou3d(a, b), iou3d(a, c))
    ok = abs(vals[0] - 1) < 1e-9 and abs(vals[1] - 1 / 3) < 1e-9 and vals[2] == 0.0
    return ok, f"identical {vals[0]:.6f}, half {vals[1]:.6f}, disjoint {vals[2]:.6f}"


def _check_gradients():
    from . import ops
    from . import tensor as T
    from .gradcheck import grad_check
    from .rng import Prng
    from .tensor import Tensor

    p = ops.init_linear(Prng(14), 5, 4)
    x = Tensor(np.random.default_rng(5).normal(size=(6, 5)))
    target = np.random.default_rng(6).integers(0, 4, 6)
    onehot = np.eye(4)[target]

    def f():
        probs = T.softmax(ops.linear(p, x), axis=1)
        return T.mul(T.sum_(T.mul(Tensor(onehot), T.log(probs))), -1.0 / 6)

    err = grad_check(f, [p.weight, p.bias], entries_per_param=4)
    return err < 1e-6, f"rel err {err:.2e}"


def _check_renderer():
    from .rng import Prng
    from .synth import gen_instance, render_sample, sample_pose

    prng = Prng(15)
    inst = gen_instance("can", prng.derive("shape"), n_points=256)
    pose = sample_pose(prng.derive("pose"))
    sample = render_sample(inst, pose, 64, 120, prng.derive("render"))
    err = np.abs(pose.apply(sample.nocs) - sample.observed).max()
    again = render_sample(inst, pose, 64, 120, Prng(15).derive("render"))
    same = np.array_equal(sample.observed, again.observed) and np.array_equal(
        sample.image, again.image
    )
    return err < 1e-9 and same, f"self-consistency {err:.2e}, bit-identical {same}"


def _check_determinism():
    from . import pipeline
    from .profiles import desk_profile
    from .rng import Prng

    prof = desk_profile()
    a = pipeline.state_dict(pipeline.init_pipeline(Prng(77), prof))
    b = pipeline.state_dict(pipeline.init_pipeline(Prng(77), prof))
    same = all(np.array_equal(a[k], b[k]) for k in a)
    return same, f"{len(a)} tensors bit-identical: {same}"


CHECKS = (
    ("pixel-branch shape contract", _check_pixel_shapes),
    ("attention vs naive oracle", _check_attention_oracle),
    ("point-branch permutation equivariance", _check_point_equivariance),
    ("similarity fit exactness", _check_umeyama),
    ("robust fit under outliers", _check_ransac),
    ("loss fixed points", _check_loss_fixed_points),
    ("oriented-box IoU closed forms", _check_iou3d),
    ("gradient check", _check_gradients),
    ("renderer ground-truth consistency", _check_renderer),
    ("seeded init determinism", _check_determinism),
)


def run_selftest(log=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        log(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
