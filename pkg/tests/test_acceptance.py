"""Acceptance scorecard: eleven pass/fail checks over the assembled pipeline.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one printed
verdict line per criterion. The two full training smoke runs are shared
session fixtures, so the suite performs exactly two 500-iteration runs.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

import stargan_desk.dataset as ds
import stargan_desk.facepipe as fp
import stargan_desk.losses as lo
import stargan_desk.networks as nw
import stargan_desk.trainer as tr
from stargan_desk import autodiff as ad
from _gradcheck import assert_grad_matches, away_from

pytestmark = pytest.mark.slow

SMOKE_SEED = 77
CORPUS_SEED = 123
SMOKE_ITERATIONS = 500


def verdict(num, name, ok, detail=""):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared fixtures

@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The 14-identity synthetic sprite corpus used by the smoke criteria."""
    out = tmp_path_factory.mktemp("acceptance_corpus")
    manifest = ds.synth_sprites(14, 3, 32, CORPUS_SEED, out)
    return manifest


@pytest.fixture(scope="session")
def smoke(corpus, tmp_path_factory):
    """Two identically-seeded 500-iteration training runs on a 90/10 split.

    Returns everything the smoke criteria need: the runs' output
    directories, update counters, wall time, the trained generator, and
    the held-out test split.
    """
    train_m, test_m = tr.split_dataset(corpus, ratio=0.9, seed=CORPUS_SEED)
    config = tr.TrainConfig(
        batch_size=8,
        n_critic=5,
        total_iterations=SMOKE_ITERATIONS,
        seed=SMOKE_SEED,
        image_size=32,
        conv_dim=16,
        repeat_num=2,
        log_every=1,
        checkpoint_every=SMOKE_ITERATIONS,
        sample_every=SMOKE_ITERATIONS,
    )
    base = tmp_path_factory.mktemp("acceptance_runs")
    runs = []
    counters = []
    elapsed = []
    generator = None
    for name in ("run1", "run2"):
        g, d = tr.build_networks(config)
        counts = {}
        start = time.perf_counter()
        tr.run(config, train_m, g, d, base / name, echo=False, counters=counts)
        elapsed.append(time.perf_counter() - start)
        runs.append(base / name)
        counters.append(counts)
        generator = g
    return SimpleNamespace(
        config=config,
        train_manifest=train_m,
        test_manifest=test_m,
        runs=runs,
        counters=counters,
        elapsed=elapsed,
        generator=generator,
    )


def read_rows(log_path):
    """Iteration-keyed loss rows parsed back out of a training log."""
    rows = []
    for line in log_path.read_text().splitlines():
        kind, iteration, _, report = tr.parse_log_line(line)
        if kind == "d":
            rows.append({"iteration": iteration, **report.populated()})
        else:
            rows[-1].update(report.populated())
    return rows


# ---------------------------------------------------------------------------
# criterion 1: exact parameter counts

class TestCriterion01:
    def test_parameter_counts(self):
        start = time.perf_counter()
        g = nw.Generator(nw.GeneratorConfig())
        d = nw.Discriminator(nw.DiscriminatorConfig())
        g_total, d_total = nw.count_params(g), nw.count_params(d)
        took = time.perf_counter() - start
        ok = g_total == 8_436_800 and d_total == 44_735_424 and took < 1.0
        verdict(1, "parameter counts", ok, f"G={g_total} D={d_total} in {took:.2f}s")


# ---------------------------------------------------------------------------
# criterion 2: finite-difference sweep over every differentiable op

def rand_shape(rng, max_ndim=4, max_dim=4):
    return tuple(int(rng.integers(1, max_dim + 1)) for _ in range(int(rng.integers(1, max_ndim + 1))))


def broadcast_partner(rng, shape):
    """A shape that broadcasts against ``shape`` (trailing-axis aligned)."""
    other = [1 if rng.random() < 0.4 else dim for dim in shape]
    if len(other) > 1 and rng.random() < 0.5:
        other = other[int(rng.integers(1, len(other))):]
    return tuple(other) or (1,)


def scalarized(apply_op, arrays, rng):
    """Wrap an op application into a scalar objective with fixed weights."""
    with ad.no_grad():
        probe = apply_op([ad.Tensor(a) for a in arrays])
    w = ad.Tensor(rng.normal(size=probe.shape))

    def f(tensors):
        return ad.tsum(apply_op(tensors) * w)

    return f, arrays


def case_binary(op, denom_safe=False):
    def make(rng):
        shape = rand_shape(rng)
        a = rng.normal(size=shape)
        bshape = broadcast_partner(rng, shape)
        if denom_safe:
            b = np.where(rng.random(size=bshape) < 0.5, -1.0, 1.0) * rng.uniform(0.4, 2.0, size=bshape)
        else:
            b = rng.normal(size=bshape)
        return scalarized(lambda ts: op(ts[0], ts[1]), [a, b], rng)

    return make


def case_unary(op, sampler):
    def make(rng):
        shape = rand_shape(rng)
        return scalarized(lambda ts: op(ts[0]), [sampler(rng, shape)], rng)

    return make


def case_reduction(op):
    def make(rng):
        shape = rand_shape(rng, max_ndim=3)
        ndim = len(shape)
        choice = rng.random()
        if choice < 0.34:
            axis = None
        elif choice < 0.67:
            axis = int(rng.integers(0, ndim))
        else:
            k = int(rng.integers(1, ndim + 1))
            axis = tuple(sorted(rng.choice(ndim, size=k, replace=False).tolist()))
        keepdims = bool(rng.random() < 0.5)
        a = rng.normal(size=shape)
        return scalarized(lambda ts: op(ts[0], axis=axis, keepdims=keepdims), [a], rng)

    return make


def case_broadcast_to(rng):
    target = rand_shape(rng)
    src = tuple(1 if rng.random() < 0.5 else dim for dim in target)
    a = rng.normal(size=src)
    return scalarized(lambda ts: ad.broadcast_to(ts[0], target), [a], rng)


def case_reshape(rng):
    shape = rand_shape(rng)
    size = int(np.prod(shape))
    new = (size,) if rng.random() < 0.5 else (1, size)
    a = rng.normal(size=shape)
    return scalarized(lambda ts: ad.reshape(ts[0], new), [a], rng)


def case_transpose(rng):
    shape = rand_shape(rng, max_ndim=4)
    perm = tuple(rng.permutation(len(shape)).tolist())
    a = rng.normal(size=shape)
    return scalarized(lambda ts: ad.transpose(ts[0], perm), [a], rng)


def case_concat(rng):
    shape = list(rand_shape(rng, max_ndim=3))
    axis = int(rng.integers(0, len(shape)))
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        s = list(shape)
        s[axis] = int(rng.integers(1, 4))
        parts.append(rng.normal(size=tuple(s)))
    return scalarized(lambda ts: ad.concat(ts, axis), parts, rng)


def case_narrow(rng):
    shape = rand_shape(rng, max_ndim=3)
    axis = int(rng.integers(0, len(shape)))
    start = int(rng.integers(0, shape[axis]))
    stop = int(rng.integers(start + 1, shape[axis] + 1))
    a = rng.normal(size=shape)
    return scalarized(lambda ts: ad.narrow(ts[0], axis, start, stop), [a], rng)


def case_pad_slice(rng):
    shape = rand_shape(rng, max_ndim=3)
    axis = int(rng.integers(0, len(shape)))
    extra = int(rng.integers(1, 4))
    target = list(shape)
    target[axis] += extra
    start = int(rng.integers(0, extra + 1))
    a = rng.normal(size=shape)
    return scalarized(lambda ts: ad.pad_slice(ts[0], tuple(target), axis, start), [a], rng)


def case_matmul(rng):
    m, k, n = (int(rng.integers(1, 5)) for _ in range(3))
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    return scalarized(lambda ts: ad.matmul(ts[0], ts[1]), [a, b], rng)


def conv_geometry(rng):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    return n, c, h, w, kh, kw, stride, padding


def case_im2col(rng):
    n, c, h, w, kh, kw, stride, padding = conv_geometry(rng)
    a = rng.normal(size=(n, c, h, w))
    return scalarized(lambda ts: ad.im2col(ts[0], kh, kw, stride, padding), [a], rng)


def case_col2im(rng):
    n, c, h, w, kh, kw, stride, padding = conv_geometry(rng)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = rng.normal(size=(n, ho * wo, c * kh * kw))
    return scalarized(lambda ts: ad.col2im(ts[0], (c, h, w), kh, kw, stride, padding), [cols], rng)


def case_conv2d(rng):
    n, c, h, w, kh, kw, stride, padding = conv_geometry(rng)
    f = int(rng.integers(1, 3))
    x = rng.normal(size=(n, c, h, w))
    weight = rng.normal(size=(f, c, kh, kw))
    if rng.random() < 0.5:
        bias = rng.normal(size=(f,))
        return scalarized(
            lambda ts: ad.conv2d(ts[0], ts[1], ts[2], stride=stride, padding=padding),
            [x, weight, bias],
            rng,
        )
    return scalarized(
        lambda ts: ad.conv2d(ts[0], ts[1], stride=stride, padding=padding), [x, weight], rng
    )


def case_conv_transpose2d(rng):
    while True:
        n, c, h, w, kh, kw, stride, padding = conv_geometry(rng)
        if (h - 1) * stride - 2 * padding + kh >= 1 and (w - 1) * stride - 2 * padding + kw >= 1:
            break
    f = int(rng.integers(1, 3))
    x = rng.normal(size=(n, c, h, w))
    weight = rng.normal(size=(c, f, kh, kw))
    if rng.random() < 0.5:
        bias = rng.normal(size=(f,))
        return scalarized(
            lambda ts: ad.conv_transpose2d(ts[0], ts[1], ts[2], stride=stride, padding=padding),
            [x, weight, bias],
            rng,
        )
    return scalarized(
        lambda ts: ad.conv_transpose2d(ts[0], ts[1], stride=stride, padding=padding), [x, weight], rng
    )


def case_instance_norm(rng):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    x = rng.normal(size=(n, c, h, w))
    gamma = rng.uniform(0.5, 1.5, size=(c,))
    beta = rng.normal(size=(c,))
    return scalarized(lambda ts: ad.instance_norm(ts[0], ts[1], ts[2]), [x, gamma, beta], rng)


def case_softmax_cross_entropy(rng):
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 8))
    logits = rng.normal(size=(n, k))
    targets = rng.integers(0, k, size=n)

    def f(tensors):
        return ad.softmax_cross_entropy(tensors[0], targets)

    return f, [logits]


def case_l1_distance(rng):
    shape = rand_shape(rng)
    a = rng.normal(size=shape)
    gap = away_from(rng, shape, margin=0.05)
    return (lambda ts: ad.l1_distance(ts[0], ts[1])), [a, a + gap]


SMOOTH = 1e-6
KINKED = 1e-4

OP_SWEEP = [
    ("add", case_binary(ad.add), SMOOTH),
    ("sub", case_binary(ad.sub), SMOOTH),
    ("mul", case_binary(ad.mul), SMOOTH),
    ("div", case_binary(ad.div, denom_safe=True), SMOOTH),
    ("neg", case_unary(ad.neg, lambda r, s: r.normal(size=s)), SMOOTH),
    ("power", case_unary(lambda t: ad.power(t, 3), lambda r, s: r.normal(size=s)), SMOOTH),
    ("exp", case_unary(ad.exp, lambda r, s: r.uniform(-1.5, 1.5, size=s)), SMOOTH),
    ("log", case_unary(ad.log, lambda r, s: r.uniform(0.2, 3.0, size=s)), SMOOTH),
    ("sqrt", case_unary(ad.sqrt, lambda r, s: r.uniform(0.2, 3.0, size=s)), SMOOTH),
    ("tanh", case_unary(ad.tanh, lambda r, s: r.normal(size=s)), SMOOTH),
    ("sigmoid", case_unary(ad.sigmoid, lambda r, s: r.normal(size=s)), SMOOTH),
    ("absolute", case_unary(ad.absolute, lambda r, s: away_from(r, s, margin=0.01)), KINKED),
    ("leaky_relu", case_unary(lambda t: ad.leaky_relu(t, 0.01), lambda r, s: away_from(r, s, margin=0.01)), KINKED),
    ("relu", case_unary(ad.relu, lambda r, s: away_from(r, s, margin=0.01)), KINKED),
    ("tsum", case_reduction(ad.tsum), SMOOTH),
    ("mean", case_reduction(ad.mean), SMOOTH),
    ("broadcast_to", case_broadcast_to, SMOOTH),
    ("reshape", case_reshape, SMOOTH),
    ("transpose", case_transpose, SMOOTH),
    ("concat", case_concat, SMOOTH),
    ("narrow", case_narrow, SMOOTH),
    ("pad_slice", case_pad_slice, SMOOTH),
    ("matmul", case_matmul, SMOOTH),
    ("im2col", case_im2col, SMOOTH),
    ("col2im", case_col2im, SMOOTH),
    ("conv2d", case_conv2d, SMOOTH),
    ("conv_transpose2d", case_conv_transpose2d, SMOOTH),
    ("instance_norm", case_instance_norm, SMOOTH),
    ("softmax_cross_entropy", case_softmax_cross_entropy, SMOOTH),
    ("l1_distance", case_l1_distance, KINKED),
]


class TestCriterion02:
    def test_gradient_sweep_over_all_ops(self):
        start = time.perf_counter()
        failures = []
        for index, (name, make_case, tol) in enumerate(OP_SWEEP):
            rng = np.random.Generator(np.random.PCG64(9000 + index))
            for case in range(20):
                f, arrays = make_case(rng)
                try:
                    assert_grad_matches(f, arrays, tol=tol)
                except AssertionError as e:
                    failures.append(f"{name}[{case}]: {e}")
                    break
        took = time.perf_counter() - start
        ok = not failures and took < 60.0
        detail = f"{len(OP_SWEEP)} ops x 20 shapes in {took:.1f}s"
        if failures:
            detail = "; ".join(failures[:3])
        verdict(2, "gradient-check sweep", ok, detail)


# ---------------------------------------------------------------------------
# criterion 3: parameter-gradient of the penalty term vs finite differences

class TwoConvCritic:
    """Minimal smooth two-convolution critic for second-order checking."""

    def __init__(self, arrays):
        self.w1 = ad.Tensor(arrays[0], requires_grad=True)
        self.b1 = ad.Tensor(arrays[1], requires_grad=True)
        self.w2 = ad.Tensor(arrays[2], requires_grad=True)

    def forward(self, x):
        h = ad.tanh(ad.conv2d(x, self.w1, self.b1, stride=1, padding=1))
        return ad.conv2d(h, self.w2, stride=2, padding=0), None

    def params(self):
        return [self.w1, self.b1, self.w2]


class TestCriterion03:
    def test_penalty_parameter_gradients(self):
        start = time.perf_counter()
        data_rng = np.random.Generator(np.random.PCG64(31))
        x_real = data_rng.normal(size=(1, 1, 8, 8))
        x_fake = data_rng.normal(size=(1, 1, 8, 8))
        arrays = [
            data_rng.normal(scale=0.6, size=(4, 1, 3, 3)),
            data_rng.normal(scale=0.2, size=(4,)),
            data_rng.normal(scale=0.6, size=(1, 4, 3, 3)),
        ]

        def penalty_of(arr_list):
            critic = TwoConvCritic(arr_list)
            rng = np.random.Generator(np.random.PCG64(55))
            return lo.gradient_penalty(critic, x_real, x_fake, rng), critic

        value, critic = penalty_of(arrays)
        grads = ad.grad(value, critic.params())

        step = 1e-5
        worst = 0.0
        for idx in range(len(arrays)):
            numeric = np.zeros_like(arrays[idx])
            flat_in = arrays[idx].reshape(-1)
            flat_out = numeric.reshape(-1)
            for i in range(flat_in.size):
                keep = flat_in[i]
                flat_in[i] = keep + step
                hi = penalty_of(arrays)[0].item()
                flat_in[i] = keep - step
                lo_val = penalty_of(arrays)[0].item()
                flat_in[i] = keep
                flat_out[i] = (hi - lo_val) / (2.0 * step)
            err = np.abs(grads[idx].data - numeric)
            bound = np.maximum(1.0, np.abs(numeric))
            worst = max(worst, float(np.max(err / bound)))
        took = time.perf_counter() - start
        ok = worst < 1e-4 and took < 30.0
        verdict(3, "second-order penalty check", ok, f"worst rel err {worst:.2e} in {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion 4: analytic anchors

class UnitNormLinearCritic:
    """Critic whose input-gradient norm is exactly 1 for every sample."""

    def __init__(self, feature_shape, rng):
        u = rng.normal(size=feature_shape)
        self.u = ad.Tensor(u / np.sqrt(np.sum(u * u)))

    def forward(self, x):
        n = x.shape[0]
        flat = ad.reshape(x, (n, self.u.size))
        weighted = flat * ad.broadcast_to(ad.reshape(self.u, (1, self.u.size)), (n, self.u.size))
        return ad.reshape(ad.tsum(weighted, axis=1), (n, 1)), None


class TestCriterion04:
    def test_analytic_anchors(self):
        half = np.full((16,), 0.5)
        value = lo.gan_value(half, half).item()
        gan_err = abs(value - (-2.0 * math.log(2.0)))

        rng = np.random.Generator(np.random.PCG64(4))
        critic = UnitNormLinearCritic((2, 6, 6), rng)
        x_real = rng.normal(size=(5, 2, 6, 6))
        x_fake = rng.normal(size=(5, 2, 6, 6))
        gp = lo.gradient_penalty(critic, x_real, x_fake, rng).item()

        uniform = lo.cls_loss(np.zeros((9, 7)), np.arange(9) % 7).item()
        cls_err = abs(uniform - math.log(7.0))

        ok = gan_err < 1e-12 and abs(gp) < 1e-10 and cls_err < 1e-12
        verdict(4, "analytic loss anchors", ok,
                f"gan err {gan_err:.1e}, gp {gp:.1e}, cls err {cls_err:.1e}")


# ---------------------------------------------------------------------------
# criteria 5 + 6: training smoke behavior and update schedule

class TestCriterion05:
    def test_training_smoke(self, smoke):
        rows = read_rows(smoke.runs[0] / "train.log")
        finite = all(math.isfinite(v) for row in rows for k, v in row.items() if k != "iteration")

        rec = {row["iteration"]: row["g_loss_rec"] for row in rows}
        early = float(np.mean([rec[i] for i in range(1, 51)]))
        late = float(np.mean([rec[i] for i in range(SMOKE_ITERATIONS - 49, SMOKE_ITERATIONS + 1)]))
        halved = late <= 0.5 * early

        x, _ = ds.load_batch(smoke.test_manifest, [0], smoke.config.image_size)
        outputs = []
        with ad.no_grad():
            for domain in range(7):
                labels = np.zeros((1, 7))
                labels[0, domain] = 1.0
                outputs.append(smoke.generator.forward(x, ad.Tensor(labels)).data[0])
        diffs = [
            float(np.mean(np.abs(outputs[i] - outputs[j])))
            for i in range(7)
            for j in range(i + 1, 7)
        ]
        distinct = min(diffs) > 0.01

        in_budget = max(smoke.elapsed) <= 15 * 60
        ok = finite and halved and distinct and in_budget
        verdict(
            5,
            "training smoke",
            ok,
            f"finite={finite}, rec {early:.3f}->{late:.3f} (ratio {late / early:.2f}), "
            f"min pair diff {min(diffs):.4f}, {max(smoke.elapsed) / 60:.1f} min",
        )


class TestCriterion06:
    def test_update_schedule(self, smoke):
        ok = all(
            c["g_updates"] == SMOKE_ITERATIONS and c["d_updates"] == 5 * c["g_updates"]
            for c in smoke.counters
        )
        verdict(6, "5:1 update schedule", ok, str(smoke.counters[0]))


# ---------------------------------------------------------------------------
# criterion 7: NMS against a direct quadratic reference

def overlap_ratio(a, b, mode):
    ix1, iy1 = max(a.x1, b.x1), max(a.y1, b.y1)
    ix2, iy2 = min(a.x2, b.x2), min(a.y2, b.y2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if mode == "union":
        return inter / (a.area + b.area - inter)
    return inter / min(a.area, b.area)


def quadratic_nms(candidates, threshold, mode):
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    kept = []
    for i in order:
        if all(overlap_ratio(candidates[j].bbox, candidates[i].bbox, mode) <= threshold for j in kept):
            kept.append(i)
    return [candidates[i] for i in kept]


class TestCriterion07:
    def test_nms_oracle_equivalence(self):
        start = time.perf_counter()
        rng = np.random.Generator(np.random.PCG64(7))
        mismatches = 0
        for trial in range(1000):
            n = int(rng.integers(0, 21))
            candidates = []
            for _ in range(n):
                x1, y1 = rng.uniform(0, 100, size=2)
                w, h = rng.uniform(1, 40, size=2)
                candidates.append(fp.Candidate(fp.BBox(x1, y1, x1 + w, y1 + h), float(rng.uniform(0, 1))))
            threshold = float(rng.uniform(0.15, 0.85))
            mode = "union" if trial % 2 == 0 else "min"
            got = fp.nms(candidates, threshold, mode=mode)
            want = quadratic_nms(candidates, threshold, mode)
            if got != want:
                mismatches += 1
        took = time.perf_counter() - start
        ok = mismatches == 0 and took < 10.0
        verdict(7, "NMS oracle equivalence", ok, f"1000 sets, {mismatches} mismatches, {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion 8: similarity alignment recovery

class TestCriterion08:
    def test_alignment_recovery(self):
        start = time.perf_counter()
        template = fp.canonical_template(64).as_array()
        rng = np.random.Generator(np.random.PCG64(8))
        image = rng.uniform(0, 255, size=(48, 48, 3))
        worst = 0.0
        for _ in range(200):
            theta = rng.uniform(-np.pi / 4, np.pi / 4)
            scale = rng.uniform(0.5, 2.0)
            tx, ty = rng.uniform(-10, 10, size=2)
            c, s = scale * np.cos(theta), scale * np.sin(theta)
            moved = np.stack(
                [c * template[:, 0] - s * template[:, 1] + tx,
                 s * template[:, 0] + c * template[:, 1] + ty],
                axis=1,
            )
            matrix, translation = fp.solve_similarity(moved, template)
            recovered = moved @ matrix.T + translation
            rmse = float(np.sqrt(np.mean((recovered - template) ** 2)))
            worst = max(worst, rmse)
            aligned = fp.align_face(image, fp.Landmarks5.from_array(moved), out_size=64)
            assert aligned.shape == (64, 64, 3)
        took = time.perf_counter() - start
        ok = worst < 1e-6 and took < 10.0
        verdict(8, "alignment recovery", ok, f"worst RMSE {worst:.2e} over 200 transforms, {took:.1f}s")


# ---------------------------------------------------------------------------
# criterion 9: identity-level split contract

class TestCriterion09:
    def test_split_contract(self, corpus):
        n_identities = len(corpus.identities())
        ok = True
        for seed in range(100):
            train_m, test_m = tr.split_dataset(corpus, ratio=0.9, seed=seed)
            train_ids = set(train_m.identities())
            test_ids = set(test_m.identities())
            if train_ids & test_ids:
                ok = False
                break
            if len(train_ids) + len(test_ids) != n_identities:
                ok = False
                break
            if abs(len(train_ids) - 0.9 * n_identities) > 1.0:
                ok = False
                break
        verdict(9, "split contract", ok, f"{n_identities} identities x 100 seeds")


# ---------------------------------------------------------------------------
# criterion 10: emitted log lines round-trip exactly

class TestCriterion10:
    def test_log_format_round_trip(self, smoke):
        lines = (smoke.runs[0] / "train.log").read_text().splitlines()
        ok = len(lines) == 2 * SMOKE_ITERATIONS
        for line in lines:
            kind, iteration, total, report = tr.parse_log_line(line)
            if kind == "d":
                rebuilt = tr.format_d_line(iteration, total, report)
            else:
                rebuilt = tr.format_g_line(report)
            if rebuilt != line:
                ok = False
                break
        verdict(10, "log-format fidelity", ok, f"{len(lines)} lines round-tripped")


# ---------------------------------------------------------------------------
# criterion 11: bitwise determinism across the two smoke runs

class TestCriterion11:
    def test_bitwise_determinism(self, smoke):
        name = f"checkpoint_{SMOKE_ITERATIONS:06d}.ckpt"
        ckpt_equal = (smoke.runs[0] / name).read_bytes() == (smoke.runs[1] / name).read_bytes()
        grid = f"samples/sample_{SMOKE_ITERATIONS:06d}.png"
        grid_equal = (smoke.runs[0] / grid).read_bytes() == (smoke.runs[1] / grid).read_bytes()
        ok = ckpt_equal and grid_equal
        verdict(11, "bitwise determinism", ok, f"checkpoint={ckpt_equal}, grid={grid_equal}")
