"""Acceptance criteria A1-A8. Each test prints one PASS/FAIL line, repeated in the summary.

A5 and A7 train the desk preset end to end (about 12 minutes each on one core) and
carry the ``slow`` marker. Set NOISY_SED_DIRECTIONAL=1 to also run the logged
three-seed noisy-student vs mean-teacher comparison.
"""
import os
import time

import numpy as np
import pytest

from noisy_sed import pipeline
from noisy_sed.config import desk_config
from noisy_sed.evaluation import SCENARIO_1, SCENARIO_2, ensemble_combine, event_f1, psds, select_topk
from noisy_sed.rcrnn import ModelConfig, StrongPrediction, describe, forward
from noisy_sed.tensor_core import (
    Tensor, avg_pool2d, batch_norm, bce, conv2d, dropout, glu, grad_check, gru, gru_bidirectional, ops,
)
from noisy_sed.tensor_core.nn import mse
from noisy_sed.training import (
    PSEUDO, STRONG, bce_mean, bce_soft, ema_update, init_params, interpolate_target, semi_supervised_loss,
)

from test_evaluation import (
    CRAFTED_HIGH, CRAFTED_LOW, CRAFTED_REF, DURATIONS, HAND_ORACLE, _with_emax, brute_force_tp,
    crafted_candidates, random_clip,
)
from test_rcrnn import TABLE_1, _full_gradcheck
from test_tensor_core import _gru_params, _project
from test_training import loop_clip_bce, loop_semi, random_batch


# -- A1 -------------------------------------------------------------------------

def test_a1_shape_contract(verdict):
    cfg = ModelConfig()
    x = np.random.default_rng(0).normal(size=(1, 625, 128))
    start = time.perf_counter()
    for seed in range(100):
        strong, weak = forward(init_params(cfg, np.random.default_rng(seed)), x)
        assert strong.shape[1:] == (156, 10) and weak.shape[1:] == (10,)
    elapsed = time.perf_counter() - start
    table_ok = describe(cfg) == TABLE_1
    verdict("A1", f"100 inits, layer table {'matches' if table_ok else 'differs'}, {elapsed:.1f}s (limit 60s)")
    assert table_ok
    assert elapsed < 60.0


# -- A2 -------------------------------------------------------------------------

def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * gap * 2, x)


def _shape(rng, lo=1, hi=4, ndim=None):
    return tuple(int(v) for v in rng.integers(lo, hi, size=ndim or int(rng.integers(1, 4))))


def _prim_cases(name, rng, seed):
    """(function, point) pairs for one random instance of primitive ``name``."""
    p = lambda out: _project(out, seed)  # noqa: E731
    if name in ("add", "sub", "mul", "div"):
        a0, b0 = rng.normal(size=(3, 4)), rng.uniform(0.5, 2.0, size=(1, 4))
        fn = getattr(ops, name)
        return [(lambda a: p(fn(a, b0)), a0), (lambda b: p(fn(a0, b)), b0)]
    if name in ("neg", "exp", "sigmoid", "tanh", "square"):
        return [(lambda a: p(getattr(ops, name)(a)), rng.normal(size=_shape(rng)))]
    if name == "log":
        return [(lambda a: p(ops.log(a)), rng.uniform(0.2, 3.0, size=_shape(rng)))]
    if name == "relu":
        return [(lambda a: p(ops.relu(a)), _away_from_zero(rng, _shape(rng)))]
    if name == "clip":
        x0 = rng.uniform(-2, 2, size=_shape(rng))
        x0[np.abs(np.abs(x0) - 1.0) < 0.05] = 0.3
        return [(lambda a: p(ops.clip(a, -1.0, 1.0)), x0)]
    if name == "matmul":
        a0, w0 = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        return [(lambda a: p(ops.matmul(a, w0)), a0), (lambda w: p(ops.matmul(a0, w)), w0)]
    if name in ("sum", "mean"):
        x0 = rng.normal(size=(2, 3, 4))
        axis = [None, 0, (1, 2)][seed % 3]
        return [(lambda a: p(getattr(ops, name)(a, axis=axis, keepdims=bool(seed % 2))), x0)]
    if name == "max":
        x0 = rng.permutation(24).reshape(2, 3, 4) * 0.1 + rng.uniform(0, 0.01, size=(2, 3, 4))
        return [(lambda a: p(ops.max(a, axis=seed % 3)), x0)]
    if name == "reshape":
        return [(lambda a: p(ops.reshape(a, (6, 4))), rng.normal(size=(2, 3, 4)))]
    if name == "transpose":
        return [(lambda a: p(ops.transpose(a, (2, 0, 1))), rng.normal(size=(2, 3, 4)))]
    if name == "getitem":
        return [(lambda a: p(ops.getitem(a, (slice(None), [0, 2, 2]))), rng.normal(size=(3, 4)))]
    if name == "concat":
        a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
        return [(lambda a: p(ops.concat([a, b0], axis=1)), a0), (lambda b: p(ops.concat([a0, b], axis=1)), b0)]
    if name == "conv2d":
        n, c, o = (int(v) for v in rng.integers(1, 4, size=3))
        kh, kw = int(rng.choice([1, 3, 5])), int(rng.choice([1, 3]))
        h, w = int(rng.integers(kh, kh + 4)), int(rng.integers(kw, kw + 4))
        stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        x0, k0, b0 = rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, kh, kw)), rng.normal(size=o)
        return [(lambda x: p(conv2d(x, k0, b0, stride)), x0), (lambda k: p(conv2d(x0, k, b0, stride)), k0),
                (lambda b: p(conv2d(x0, k0, b, stride)), b0)]
    if name == "avg_pool2d":
        window = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        return [(lambda x: p(avg_pool2d(x, window)), rng.normal(size=(2, 2) + _shape(rng, 1, 9, 2)))]
    if name == "glu":
        return [(lambda x: p(glu(x)), rng.normal(size=(2, 2 * int(rng.integers(1, 4)), 3, 2)))]
    if name == "batch_norm":
        c = int(rng.integers(1, 4))
        x0 = rng.normal(size=(int(rng.integers(2, 4)), c, 2, 3))
        g0, b0 = rng.normal(size=c), rng.normal(size=c)
        training = bool(seed % 2)

        def run(x=x0, g=g0, b=b0):
            return p(batch_norm(x, g, b, np.zeros(c), np.full(c, 1.5), training=training))
        return [(lambda x: run(x=x), x0), (lambda g: run(g=g), g0), (lambda b: run(b=b), b0)]
    if name == "dropout":
        return [(lambda x: p(dropout(x, 0.4, np.random.default_rng(seed), training=True)),
                 rng.normal(size=_shape(rng)))]
    if name in ("gru", "gru_bidirectional"):
        f, h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x0 = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 6)), f))
        pf, pb = _gru_params(rng, f, h), _gru_params(rng, f, h)
        if name == "gru":
            step = lambda x, q: p(gru(x, *q, reverse=bool(seed % 2)))  # noqa: E731
        else:
            step = lambda x, q: p(gru_bidirectional(x, q, pb))  # noqa: E731
        cases = [(lambda x: step(x, pf), x0)]
        for k in range(4):
            cases.append((lambda v, k=k: step(Tensor(x0), tuple(v if i == k else pf[i] for i in range(4))), pf[k]))
        return cases
    if name == "bce":
        t = rng.uniform(size=(3, 4))
        return [(lambda q: p(bce(q, t)), rng.uniform(0.05, 0.95, size=(3, 4)))]
    if name == "mse":
        b0 = rng.normal(size=(3, 4))
        return [(lambda a: mse(a, b0), rng.normal(size=(3, 4)))]
    raise KeyError(name)


PRIMITIVES = ["add", "sub", "mul", "div", "neg", "exp", "log", "sigmoid", "tanh", "square", "relu", "clip",
              "matmul", "sum", "mean", "max", "reshape", "transpose", "getitem", "concat", "conv2d", "avg_pool2d",
              "glu", "batch_norm", "dropout", "gru", "gru_bidirectional", "bce", "mse"]


def test_a2_gradient_fidelity(verdict):
    start = time.perf_counter()
    worst_prim = {}
    for name in PRIMITIVES:
        for seed in range(20):
            rng = np.random.default_rng(seed)
            for fn, point in _prim_cases(name, rng, seed):
                worst_prim[name] = max(worst_prim.get(name, 0.0), grad_check(fn, point))
    worst_net = max(_full_gradcheck(seed) for seed in range(20))
    elapsed = time.perf_counter() - start
    top = max(worst_prim, key=worst_prim.get)
    verdict("A2", f"{len(PRIMITIVES)} primitives x 20 (worst {top} {worst_prim[top]:.1e} < 1e-4), "
                  f"shrunken RCRNN x 20 (worst {worst_net:.1e} < 1e-3), {elapsed:.0f}s (limit 300s)")
    assert worst_prim[top] < 1e-4
    assert worst_net < 1e-3
    assert elapsed < 300.0


# -- A3 -------------------------------------------------------------------------

def test_a3_loss_equivalences(verdict):
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        pred, kinds, labels, beta = random_batch(rng)
        got = float(semi_supervised_loss(Tensor(pred), kinds, labels, beta).data)
        worst = max(worst, abs(got - loop_semi(pred, kinds, labels, beta)))
        hard = (rng.uniform(size=pred[0].shape) > 0.5).astype(float)
        worst = max(worst, abs(float(bce_mean(Tensor(pred[0]), hard).data) - loop_clip_bce(pred[0], hard)))
        soft = rng.uniform(size=pred[0].shape)
        worst = max(worst, abs(float(bce_soft(Tensor(pred[0]), soft).data) - loop_clip_bce(pred[0], soft)))
    rng = np.random.default_rng(7)
    y = rng.uniform(0.01, 0.99, size=(5, 4))
    b = (y > 0.5).astype(float)
    exact_target = interpolate_target(y, b, 0.0).tobytes() == b.tobytes()
    teacher_loss = float(semi_supervised_loss(Tensor(y[None]), [PSEUDO], [b], 0.0).data)
    exact_loss = teacher_loss == float(semi_supervised_loss(Tensor(y[None]), [STRONG], [b], 0.5).data)
    hand = float(interpolate_target(np.array([0.8]), np.array([1.0]), 0.5)[0])
    verdict("A3", f"1000 batches worst |diff| {worst:.1e} (limit 1e-10), beta=0 exact "
                  f"{exact_target and exact_loss}, ybar(0.5, 0.8, 1) = {hand!r}")
    assert worst < 1e-10
    assert exact_target and exact_loss
    assert abs(hand - 0.9) < 1e-15


# -- A4 -------------------------------------------------------------------------

def test_a4_metric_oracles(verdict):
    rng = np.random.default_rng(0)
    agree = 0
    for _ in range(100):
        clips = [f"c{i}" for i in range(3)]
        ref = {c: random_clip(rng, int(rng.integers(0, 7))) for c in clips}
        est = {c: random_clip(rng, int(rng.integers(0, 7))) for c in clips}
        agree += event_f1(ref, est).tp == sum(brute_force_tp(ref[c], est[c]) for c in clips)
    perfect = [psds(CRAFTED_REF, [CRAFTED_REF] * 3, DURATIONS, 2, s) for s in (SCENARIO_1, SCENARIO_2)]
    empty = [psds(CRAFTED_REF, [{}] * 3, DURATIONS, 2, s) for s in (SCENARIO_1, SCENARIO_2)]
    hand_err = max(abs(psds(CRAFTED_REF, [CRAFTED_LOW, CRAFTED_HIGH], DURATIONS, 2, _with_emax(p, e)) - v)
                   for p, e, v in HAND_ORACLE)
    verdict("A4", f"F1 vs brute force {agree}/100, PSDS perfect {perfect}, empty {empty}, "
                  f"hand oracle max err {hand_err:.1e}")
    assert agree == 100
    assert perfect == [1.0, 1.0] and empty == [0.0, 0.0]
    assert hand_err < 1e-9


# -- A5 / A7 ----------------------------------------------------------------------

def _desk_run(base, seed=0):
    start = time.perf_counter()
    summary = pipeline.run_pipeline(desk_config(base, seed=seed))
    return summary, time.perf_counter() - start


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("desk_a")
    summary, seconds = _desk_run(base)
    return base, summary, seconds


@pytest.mark.slow
def test_a5_desk_pipeline(desk_run, verdict):
    _, s, seconds = desk_run
    first, best = s["mt_loss_first"], s["mt_loss_min"]
    reduction = 1.0 - best / first
    rounds = [r["round"] for r in s["ns_rounds"]]
    changed = s["ns_rounds"][-1]["pseudo_changed_fraction"]
    f1 = s["ns_report"]["event_f1"]
    verdict("A5", f"stage-1 loss {first:.3f} -> {best:.3f} ({reduction:.0%}, need >= 50%), rounds {rounds}, "
                  f"round-1 pseudo labels changed {changed:.2%}, final F1 {f1:.3f} (need >= 0.6), "
                  f"mean-teacher F1 {s['mt_report']['event_f1']:.3f}, {seconds / 60:.1f} min on "
                  f"{os.cpu_count()} core(s) (limit 30)")
    assert reduction >= 0.5
    assert rounds == [0, 1]
    assert changed > 0.0
    assert f1 >= 0.6
    assert seconds < 30 * 60


@pytest.mark.slow
def test_a7_rerun_is_byte_identical(desk_run, tmp_path_factory, verdict):
    base_a, _, _ = desk_run
    base_b = tmp_path_factory.mktemp("desk_b")
    _desk_run(base_b)
    files_a = sorted(p.relative_to(base_a) for p in base_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(base_b) for p in base_b.rglob("*") if p.is_file())
    differing = [str(r) for r in files_a if r in files_b and (base_a / r).read_bytes() != (base_b / r).read_bytes()]
    n_ckpt = sum(r.suffix == ".ckpt" for r in files_a)
    n_report = sum(r.parts[0] == "reports" for r in files_a)
    verdict("A7", f"{len(files_a)} files ({n_ckpt} checkpoints, {n_report} reports), "
                  f"{len(differing)} differ, file sets equal {files_a == files_b}")
    assert files_a == files_b
    assert differing == []


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("NOISY_SED_DIRECTIONAL") != "1", reason="set NOISY_SED_DIRECTIONAL=1")
def test_a5_directional_seeds(desk_run, tmp_path_factory, capsys):
    # logged only: noisy student vs mean teacher over three training seeds
    rows = [desk_run[1]]
    for seed in (1, 2):
        rows.append(_desk_run(tmp_path_factory.mktemp(f"desk_seed{seed}"), seed)[0])
    lines = []
    for seed, s in enumerate(rows):
        mt, ns = s["mt_report"]["event_f1"], s["ns_report"]["event_f1"]
        lines.append(f"seed {seed}: mean-teacher {mt:.3f}, noisy-student {ns:.3f}, "
                     f"{'holds' if ns >= mt - 0.02 else 'violated'}")
    with capsys.disabled():
        print("\nA5 directional (non-gating)\n  " + "\n  ".join(lines))


# -- A6 -------------------------------------------------------------------------

def test_a6_ema_exactness(verdict):
    cfg = ModelConfig(n_frames=8, n_mels=8, n_classes=2, stem_channels=(2,), res_channels=(2,),
                      cbam_reduction=2, gru_hidden=2)
    student = init_params(cfg, np.random.default_rng(0))
    worst = 0.0
    for alpha in (0.9, 0.99, 0.999):
        teacher = init_params(cfg, np.random.default_rng(1))
        t0 = {k: v.copy() for k, v in teacher.values.items()}
        for n in range(1, 1001):
            teacher = ema_update(teacher, student, alpha)
            for k, s in student.values.items():
                gap = np.abs(np.abs(teacher.values[k] - s) - alpha ** n * np.abs(t0[k] - s))
                worst = max(worst, float(gap.max()) if gap.size else 0.0)
    verdict("A6", f"alpha in (0.9, 0.99, 0.999), n <= 1000, worst deviation {worst:.1e} (limit 1e-12)")
    assert worst <= 1e-12


# -- A8 -------------------------------------------------------------------------

def test_a8_ensemble_identities(verdict):
    rng = np.random.default_rng(0)
    single = StrongPrediction(rng.uniform(size=(156, 10)), rng.uniform(size=(1, 10)))
    mean_of_one = ensemble_combine([single])
    identical = (mean_of_one.strong.tobytes() == single.strong.tobytes()
                 and mean_of_one.weak.tobytes() == single.weak.tobytes())
    picked = [(c.fold, c.beta_index) for c in select_topk(crafted_candidates(), 10)]
    expected = [(3, 0), (3, 2), (0, 1), (0, 2), (1, 0), (4, 4), (1, 2), (1, 3), (3, 4), (0, 4)]
    top5 = [(c.fold, c.beta_index) for c in select_topk(crafted_candidates(), 5)]
    verdict("A8", f"mean-of-one bit-identical {identical}, top-10 {'matches' if picked == expected else picked}")
    assert identical
    assert picked == expected
    assert top5 == expected[:5]
