"""Gradient verification suite: finite-difference checks for every layer and
every loss, including the combined objective through the full model.

Everything runs in double precision. Inputs are drawn away from the
non-differentiable points (ReLU kinks, pooling ties, hinge corners) that
finite differences cannot probe; gradient correctness elsewhere is what the
suite certifies.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from . import model as M
from . import tensor as T
from .gradcheck import GradCheckReport, grad_check
from .tensor import Tensor

DEFAULT_TOL = 1e-4
DEFAULT_EPS = 1e-5


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _away_from_zero(x: np.ndarray, gap: float = 5e-3) -> np.ndarray:
    return np.where(np.abs(x) < gap, x + np.sign(x + 1e-12) * gap, x)


def _check_linear(rng, eps):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    probe = rng.normal(size=4)

    def f(x, w, b):
        return T.sum_all(T.mul(T.linear(x, w, b), Tensor(probe)))

    return grad_check(f, [x, w, b], epsilon=eps, name="linear")


def _check_conv(rng, eps, stride, padding):
    x = Tensor(rng.normal(size=(9, 3)), requires_grad=True)
    k = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    shape = T.conv1d(x, k, b, stride=stride, padding=padding).data.shape
    probe = rng.normal(size=shape)

    def f(x, k, b):
        return T.sum_all(T.mul(T.conv1d(x, k, b, stride=stride,
                                        padding=padding), Tensor(probe)))

    return grad_check(f, [x, k, b], epsilon=eps,
                      name=f"conv1d[{padding},stride={stride}]")


def _check_max_pool(rng, eps):
    x = rng.normal(size=(7, 3))
    while np.any(np.diff(np.sort(x, axis=0), axis=0) < 1e-3):
        x = rng.normal(size=(7, 3))
    xt = Tensor(x, requires_grad=True)
    probe = rng.normal(size=3)

    def f(xt):
        return T.sum_all(T.mul(T.max_pool_over_time(xt), Tensor(probe)))

    return grad_check(f, [xt], epsilon=eps, name="max_pool_over_time")


def _check_activation(rng, eps, kind):
    x = _away_from_zero(rng.normal(size=6))
    xt = Tensor(x, requires_grad=True)
    probe = rng.normal(size=6)
    op = {"relu": T.relu, "sigmoid": T.sigmoid, "softmax": T.softmax}[kind]

    def f(xt):
        return T.sum_all(T.mul(op(xt), Tensor(probe)))

    return grad_check(f, [xt], epsilon=eps, name=kind)


def _check_cosine(rng, eps):
    a = Tensor(rng.normal(size=5) + 0.3, requires_grad=True)
    b = Tensor(rng.normal(size=5) - 0.3, requires_grad=True)
    return grad_check(lambda a, b: T.cosine_distance(a, b), [a, b],
                      epsilon=eps, name="cosine_distance")


def _check_bce(rng, eps, soft):
    y_hat = Tensor(rng.uniform(0.05, 0.95, size=(3, 6)), requires_grad=True)
    targets = (rng.uniform(0, 1, size=(3, 6)) if soft
               else (rng.random((3, 6)) < 0.3).astype(float))

    def f(y_hat):
        return L.bce_bag_loss(y_hat, targets)

    return grad_check(f, [y_hat], epsilon=eps,
                      name="bce_bag_loss[soft]" if soft else "bce_bag_loss[multi-hot]")


def _check_tagger_ce(rng, eps):
    logits = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    target = rng.dirichlet(np.ones(5), size=3)

    def f(logits):
        p = T.clamp(T.softmax(logits), 1e-7, 1.0)
        return T.affine(T.sum_all(T.mul(Tensor(target), T.log(p))),
                        -1.0 / 3, 0.0)

    return grad_check(f, [logits], epsilon=eps, name="tagger_cross_entropy")


def _check_contrastive(rng, eps):
    batch, dim, n_neg = 4, 5, 2
    margin = 0.4
    while True:
        v = rng.normal(size=(batch, dim))
        s = rng.normal(size=(batch, dim))
        neg_v, neg_s = L.draw_negative_indices(batch, n_neg,
                                               np.random.default_rng(0))
        # Reject draws with a hinge close to its corner.
        corner = False
        for i in range(batch):
            d_pos = 1 - v[i] @ s[i] / (np.linalg.norm(v[i]) * np.linalg.norm(s[i]))
            for j in list(neg_v[i]) + list(neg_s[i]):
                d_neg_v = 1 - v[j] @ s[i] / (np.linalg.norm(v[j])
                                             * np.linalg.norm(s[i]))
                d_neg_s = 1 - v[i] @ s[j] / (np.linalg.norm(v[i])
                                             * np.linalg.norm(s[j]))
                if (abs(margin + d_pos - d_neg_v) < 1e-3
                        or abs(margin + d_pos - d_neg_s) < 1e-3):
                    corner = True
        if not corner:
            break
    vt = Tensor(v, requires_grad=True)
    st = Tensor(s, requires_grad=True)

    def f(vt, st):
        return L.contrastive_loss_fixed_negatives(vt, st, neg_v, neg_s, margin)

    return grad_check(f, [vt, st], epsilon=eps, name="contrastive_rep_loss")


def _tiny_model(rng_seed: int):
    cfg = M.SpeechModelConfig(
        d_feat=3, t_max=10, conv_channels=(3, 4), conv_kernels=(3, 3),
        conv_strides=(1, 2), conv_padding="same", embed_dim=4,
        head_hidden=(4,), n_vis=3, n_bow=3, d_vis_hidden=3)
    return M.init_params(cfg, rng_seed, dtype=np.float64)


def _grads_resolvable(fn, inputs, lo: float = 1e-6) -> bool:
    """True when no analytic gradient element sits in (0, lo).

    A gradient that small moves the objective by less than one double ulp
    under the finite-difference step, so the numeric side reads exactly
    zero and the relative-error floor flags a spurious mismatch. Exact
    zeros are fine; the unresolvable near-zeros are rejected.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    ok = True
    for t in inputs:
        if t.requires_grad and t.grad is not None:
            mags = np.abs(t.grad)
            if np.any((mags > 0) & (mags < lo)):
                ok = False
                break
    for t in inputs:
        t.grad = None
    return ok


def _cosine(a, b):
    return 1.0 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


def _model_kink_margin(params: M.SpeechModelParams,
                       proj: M.VisionProjectionParams | None,
                       frames_raw: np.ndarray,
                       feats_raw: np.ndarray | None) -> float:
    """Distance of the closest activation to a ReLU kink or pooling tie.

    Finite differences cannot cross these points; draws are rejected until
    every unit sits clear of them.
    """
    margins = []
    with T.no_grad():
        x = Tensor(frames_raw)
        for layer in params.conv:
            pre = T.conv1d(x, layer.kernels, layer.bias, stride=layer.stride,
                           padding=layer.padding)
            margins.append(float(np.abs(pre.data).min()))
            x = T.relu(pre)
        top2 = np.sort(x.data, axis=-2)[..., -2:, :]
        margins.append(float((top2[..., 1, :] - top2[..., 0, :]).min()))
        s = T.max_pool_over_time(x)
        for head in (params.vis_head, params.bow_head):
            h = s
            for dense in head[:-1]:
                pre = T.linear(h, dense.w, dense.b)
                margins.append(float(np.abs(pre.data).min()))
                h = T.relu(pre)
        if proj is not None and feats_raw is not None:
            h = Tensor(feats_raw)
            for dense in proj.layers:
                pre = T.linear(h, dense.w, dense.b)
                margins.append(float(np.abs(pre.data).min()))
                h = T.relu(pre)
    return min(margins)


def _check_combined_visual(rng, seed, eps):
    weights = L.LossWeights(vis=0.4, bow=0.2)
    margin = 0.4
    neg_v, neg_s = L.draw_negative_indices(3, 1, np.random.default_rng(1))
    attempt = 0
    while True:
        params, proj = _tiny_model(seed + 10_000 * (attempt // 50))
        attempt += 1
        frames_raw = rng.normal(size=(3, 10, 3)) * 0.8
        feats_raw = rng.normal(size=(3, 3)) + 0.5
        with T.no_grad():
            s = M.forward(Tensor(frames_raw), params).embedding.data
            v = M.project_vision(Tensor(feats_raw), proj).data
        if min(np.linalg.norm(v, axis=1).min(),
               np.linalg.norm(s, axis=1).min()) < 0.1:
            continue
        if _model_kink_margin(params, proj, frames_raw, feats_raw) < 1e-3:
            continue
        corner = False
        for i in range(3):
            d_pos = _cosine(v[i], s[i])
            for j in list(neg_v[i]) + list(neg_s[i]):
                if (abs(margin + d_pos - _cosine(v[j], s[i])) < 1e-3
                        or abs(margin + d_pos - _cosine(v[i], s[j])) < 1e-3):
                    corner = True
        if corner:
            continue

        frames = Tensor(frames_raw, requires_grad=True)
        feats = Tensor(feats_raw, requires_grad=True)
        y_vis = rng.dirichlet(np.ones(3), size=3)
        inputs = [frames, feats] + list(params.tensors().values()) \
            + list(proj.tensors().values())

        def f(*_):
            out = M.forward(frames, params)
            l_vis = L.bce_bag_loss(out.y_vis, y_vis)
            v_t = M.project_vision(feats, proj)
            l_rep = L.contrastive_loss_fixed_negatives(
                v_t, out.embedding, neg_v, neg_s, margin)
            return L.combined_loss(L.VISUAL_BATCH, weights, l_vis=l_vis,
                                   l_rep=l_rep)

        if _grads_resolvable(f, inputs):
            return grad_check(f, inputs, epsilon=eps,
                              name="combined_loss[visual-batch]")


def _check_combined_text(rng, seed, eps):
    weights = L.LossWeights(vis=0.0, bow=1.0)
    attempt = 0
    while True:
        params, _ = _tiny_model(seed + 500 + 10_000 * (attempt // 50))
        attempt += 1
        frames_raw = rng.normal(size=(2, 10, 3)) * 0.8
        if _model_kink_margin(params, None, frames_raw, None) < 1e-3:
            continue
        frames = Tensor(frames_raw, requires_grad=True)
        y_bow = (rng.random((2, 3)) < 0.5).astype(float)
        inputs = [frames] + list(params.tensors().values())

        def f(*_):
            out = M.forward(frames, params)
            return L.combined_loss(L.TEXT_BATCH, weights,
                                   l_bow=L.bce_bag_loss(out.y_bow, y_bow))

        if _grads_resolvable(f, inputs):
            return grad_check(f, inputs, epsilon=eps,
                              name="combined_loss[text-batch]")


def run_verification_suite(num_seeds: int = 20, epsilon: float = DEFAULT_EPS
                           ) -> list[GradCheckReport]:
    """One report per (case, seed), merged to the worst seed per case."""
    worst: dict[str, GradCheckReport] = {}
    for seed in range(num_seeds):
        rng = np.random.default_rng(9000 + seed)
        reports = [
            _check_linear(rng, epsilon),
            _check_conv(rng, epsilon, stride=1, padding="valid"),
            _check_conv(rng, epsilon, stride=2, padding="same"),
            _check_max_pool(rng, epsilon),
            _check_activation(rng, epsilon, "relu"),
            _check_activation(rng, epsilon, "sigmoid"),
            _check_activation(rng, epsilon, "softmax"),
            _check_cosine(rng, epsilon),
            _check_bce(rng, epsilon, soft=True),
            _check_bce(rng, epsilon, soft=False),
            _check_tagger_ce(rng, epsilon),
            _check_contrastive(rng, epsilon),
            _check_combined_visual(rng, seed, epsilon),
            _check_combined_text(rng, seed, epsilon),
        ]
        for report in reports:
            prev = worst.get(report.op)
            if prev is None or report.max_rel_error > prev.max_rel_error:
                merged = GradCheckReport(op=report.op,
                                         max_rel_error=report.max_rel_error,
                                         elements=(prev.elements if prev else 0)
                                         + report.elements,
                                         epsilon=report.epsilon)
                merged.elements = (prev.elements if prev else 0) + report.elements
                worst[report.op] = merged
            else:
                prev.elements += report.elements
    return list(worst.values())
