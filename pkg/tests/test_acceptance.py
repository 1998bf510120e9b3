"""Acceptance suite: one test per shipping criterion.

Each test is a self-contained pass/fail check of one promised behavior,
at the stated tolerance and runtime budget. The heavy training runs are
shared through module-scoped fixtures; their wall time is recorded and
charged against the budget of the criterion that needs them.

Run `pytest -v tests/test_acceptance.py` for one line per criterion.
"""

import io
import json
import math
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from langdepth import autodiff as ad
from langdepth import cli
from langdepth.autodiff import Tensor
from langdepth.checkpoint import load_checkpoint, save_checkpoint
from langdepth.dataset import generate_dataset, read_dataset, write_dataset
from langdepth.losses import kl_loss, si_loss
from langdepth.metrics import compute_metrics
from langdepth.model import image_branch, init_parameters
from langdepth.optim import TEXT_STEP, cosine_lr, schedule_select
from langdepth.text import tokenize
from langdepth.trainer import (
    EPS_SALT,
    TrainConfig,
    _model_config,
    _stack_batch,
    evaluate,
    fit,
    infer_text,
    run_caption_ablation,
    run_ratio_sweep,
    train_step_image,
    train_step_text,
)
from langdepth.optim import Adam
from langdepth.verify import DEFAULT_SEEDS, check_caption_loss, check_image_loss

TIMINGS: dict[str, float] = {}


def _timed(key):
    class _T:
        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, *exc):
            TIMINGS[key] = time.perf_counter() - self.t0
            return False
    return _T()


# ------------------------------------------------------------------ fixtures


@pytest.fixture(scope="module")
def bench():
    """The scale-ambiguity benchmark: 4000 train / 500 val / 500 test."""
    train, vocab = generate_dataset(0, 4000)
    val, _ = generate_dataset(1, 500)
    test, _ = generate_dataset(2, 500)
    return train, vocab, val, test


@pytest.fixture(scope="module")
def main_fit(bench):
    """Default-config training run (caption ratio p=0.01, seed 0)."""
    train, vocab, val, _ = bench
    with _timed("main_fit"):
        result = fit(TrainConfig(), train, vocab, val)
    assert result.best is not None
    return result


@pytest.fixture(scope="module")
def ablation_run(bench):
    """The caption-blind twin of the default run."""
    train, vocab, val, _ = bench
    with _timed("ablation"):
        result, _ = run_caption_ablation(TrainConfig(), train, vocab, val)
    assert result.best is not None
    return result


@pytest.fixture(scope="module")
def sweep_run(bench, main_fit):
    """Caption-ratio sweep, reusing the default run for p=0.01."""
    train, vocab, val, test = bench
    with _timed("sweep"):
        out = run_ratio_sweep(TrainConfig(), [0.0, 0.01, 0.5, 1.0],
                              train, vocab, val, eval_samples=test,
                              reuse={0.01: main_fit})
    return out


# ---------------------------------------------------------------- criteria


def test_criterion_1_loss_oracles():
    """Closed-form loss values in 64-bit arithmetic, under a second."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)

    # constant log error of 1 per pixel: L_SI = 1 - gamma
    target = rng.uniform(0.5, 8.0, (3, 8, 8))
    mask = np.ones(target.shape, dtype=bool)
    pred = Tensor(np.e * target)  # float64
    loss = si_loss(pred, target, mask, gamma=0.85)
    assert abs(float(loss.data) - 0.15) <= 1e-12

    # gamma = 1 is blind to any global multiplier
    for c in rng.uniform(0.1, 10.0, 8):
        scaled = si_loss(Tensor(c * target), target, mask, gamma=1.0)
        assert abs(float(scaled.data)) <= 1e-12

    # standard-normal KL corner values
    zeros = Tensor(np.zeros(5))
    ones = Tensor(np.ones(5))
    assert abs(float(kl_loss(zeros, ones).data) - 0.0) <= 1e-12
    assert abs(float(kl_loss(ones, ones).data) - 0.5) <= 1e-12

    assert time.perf_counter() - t0 < 1.0


def test_criterion_2_gradient_checks():
    """Both objectives agree with central differences at three seeds."""
    t0 = time.perf_counter()
    for seed in DEFAULT_SEEDS:
        cap = check_caption_loss(seed=seed, h=1e-6, tolerance=1e-5)
        assert cap.passed, f"caption loss seed {seed}: {cap.errors}"
        assert max(cap.errors.values()) <= 1e-5

        img = check_image_loss(seed=seed, h=1e-6, tolerance=1e-5)
        assert img.passed, f"image loss seed {seed}: {img.errors}"
        assert max(img.errors.values()) <= 1e-5
        # every caption-head parameter sits behind detach in this branch
        frozen = {k: v for k, v in img.errors.items() if k.startswith("text.")}
        assert frozen and all(v == 0.0 for v in frozen.values())

    # the caption-side gradients really are identically zero, not just small
    cfg = TrainConfig(latent_dim=4, text_dim=8)
    samples, vocab = generate_dataset(3, 4)
    params = init_parameters(_model_config(cfg, samples[0]), len(vocab), 0,
                             dtype=np.float64)
    images, tokens, targets, masks = _stack_batch(samples)
    features = params.embedder.embed_batch(tokens)
    depth, eps_grid, _ = image_branch(images, features, params)
    params.zero_grads()
    ad.tsum(depth).backward()
    for name, tensor in params.group("text").items():
        if tensor.grad is not None:
            assert not tensor.grad.any(), f"leaked gradient into text.{name}"

    assert time.perf_counter() - t0 < 120.0


def _brute_force_metrics(pred, target, mask):
    """Independent per-pixel loop; no shared code with the library version."""
    ae = se = l10 = sle = 0.0
    d1 = d2 = d3 = 0
    n = 0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            if not mask[i][j]:
                continue
            y = float(pred[i][j])
            t = float(target[i][j])
            n += 1
            ae += abs(t - y) / t
            se += (t - y) ** 2
            l10 += abs(math.log10(y) - math.log10(t))
            sle += (math.log(y) - math.log(t)) ** 2
            r = max(y / t, t / y)
            d1 += r < 1.25
            d2 += r < 1.25 ** 2
            d3 += r < 1.25 ** 3
    return {
        "abs_rel": ae / n,
        "rmse": math.sqrt(se / n),
        "log10": l10 / n,
        "rmse_log": math.sqrt(sle / n),
        "delta1": d1 / n,
        "delta2": d2 / n,
        "delta3": d3 / n,
    }


def test_criterion_3_metric_oracle_equivalence():
    """Seven metrics match a brute-force loop on 100 random masked maps."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    for trial in range(100):
        h = int(rng.integers(2, 12))
        w = int(rng.integers(2, 12))
        pred = rng.uniform(0.3, 9.0, (h, w))
        target = rng.uniform(0.3, 9.0, (h, w))
        # occasionally make pixels agree so the deltas see both outcomes
        agree = rng.random((h, w)) < 0.3
        pred[agree] = target[agree] * rng.uniform(0.9, 1.1, agree.sum())
        mask = rng.random((h, w)) < 0.8
        mask.flat[int(rng.integers(0, h * w))] = True

        report = compute_metrics(pred, target, mask).to_dict()
        oracle = _brute_force_metrics(pred, target, mask)
        for key, want in oracle.items():
            got = report[key]
            rel = abs(got - want) / max(abs(want), 1e-12)
            assert rel <= 1e-9, f"trial {trial} {key}: {got} vs {want}"
        assert report["delta1"] <= report["delta2"] <= report["delta3"]

    assert time.perf_counter() - t0 < 5.0


def test_criterion_4_freeze_and_alternation():
    """1000 steps at p=0.01: 10 caption steps, strict group freezing."""
    t0 = time.perf_counter()
    cfg = TrainConfig(p=0.01, batch_size=16, latent_dim=8, text_dim=16)
    samples, vocab = generate_dataset(5, 320)
    params = init_parameters(_model_config(cfg, samples[0]), len(vocab),
                             cfg.seed)
    opt = Adam()
    batches = [samples[i:i + 16] for i in range(0, 320, 16)]

    def group_bytes(name):
        group = params.group(name)
        return b"".join(group[k].data.tobytes() for k in sorted(group))

    total_steps = 1000
    text_steps = 0
    decoder_changes = 0
    for step in range(total_steps):
        images, tokens, targets, masks = _stack_batch(
            batches[step % len(batches)])
        features = params.embedder.embed_batch(tokens)
        lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end)
        branch = schedule_select(step, cfg.p)
        before = {name: group_bytes(name)
                  for name in ("text", "sampler", "decoder")}
        if branch == TEXT_STEP:
            eps = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, EPS_SALT, step])
            ).standard_normal((len(tokens), cfg.latent_dim)).astype(np.float32)
            train_step_text(params, opt, features, targets, masks, cfg,
                            lr, eps)
            text_steps += 1
            assert group_bytes("sampler") == before["sampler"], \
                f"caption step {step} touched the image sampler"
        else:
            train_step_image(params, opt, images, features, targets, masks,
                             cfg, lr)
            assert group_bytes("text") == before["text"], \
                f"image step {step} touched the caption head"
        decoder_changes += group_bytes("decoder") != before["decoder"]

    assert text_steps == 10
    assert decoder_changes >= 0.99 * total_steps
    assert time.perf_counter() - t0 < 300.0


def test_criterion_5_scale_grounding(bench, main_fit, ablation_run):
    """Captions recover metric scale; the caption-blind twin cannot."""
    _, _, _, test = bench
    with _timed("c5_eval"):
        params, _, _ = main_fit.best.restore()
        report = evaluate(params, test)
        ab_params, _, _ = ablation_run.best.restore()
        ab_report = evaluate(ab_params, test)

    assert report.abs_rel <= 0.08, f"caption model AbsRel {report.abs_rel}"
    assert report.delta1 >= 0.90, f"caption model delta1 {report.delta1}"
    assert ab_report.abs_rel >= 0.20, f"ablated AbsRel {ab_report.abs_rel}"
    assert ablation_run.nonzero_caption_rows == 0

    spent = TIMINGS["main_fit"] + TIMINGS["ablation"] + TIMINGS["c5_eval"]
    assert spent <= 900.0, f"criterion 5 took {spent:.0f}s"


def test_criterion_6_ratio_sweep_trend(sweep_run):
    """Rare caption steps beat frequent ones; p=1% is as good as none."""
    abs_rel = {p: sweep_run[p]["metrics"].abs_rel
               for p in (0.0, 0.01, 0.5, 1.0)}
    assert abs_rel[0.5] - abs_rel[0.01] >= 0.02, abs_rel
    assert abs_rel[1.0] - abs_rel[0.5] >= 0.02, abs_rel
    assert abs_rel[0.01] <= abs_rel[0.0] + 0.01, abs_rel

    spent = TIMINGS["main_fit"] + TIMINGS["sweep"]
    assert spent <= 2700.0, f"criterion 6 took {spent:.0f}s"


def test_criterion_7_generative_mode(bench, main_fit):
    """Caption-only sampling keeps ambiguity and orders scene scales."""
    t0 = time.perf_counter()
    _, vocab, _, _ = bench
    params, _, _ = main_fit.best.restore()

    large = tokenize("a large room with a chair", vocab)
    small = tokenize("a small room with a chair", vocab)
    d_large, _, sigma = infer_text(large, params, 64, seed=0)
    d_small, _, _ = infer_text(small, params, 64, seed=0)

    assert d_large.shape[0] == 64
    varied = float((d_large.std(axis=0) > 0).mean())
    assert varied >= 0.10, f"only {varied:.1%} of pixels vary across samples"
    assert (sigma > 0).all()

    ratio = float(d_large.mean()) / float(d_small.mean())
    assert 1.7 <= ratio <= 2.3, f"large/small mean-depth ratio {ratio}"
    assert time.perf_counter() - t0 < 60.0


def test_criterion_8_reproducibility_and_formats(tmp_path):
    """Same seed, same bits: logs, files, and echoed-config repeats."""
    t0 = time.perf_counter()
    cfg = TrainConfig(p=0.1, batch_size=16, epochs=3, latent_dim=8,
                      text_dim=16, seed=4)
    samples, vocab = generate_dataset(9, 160)
    train, val = samples[:128], samples[128:]

    # identical seeds give bit-identical epoch logs
    first = fit(cfg, train, vocab, val)
    second = fit(cfg, train, vocab, val)
    assert first.log_lines == second.log_lines
    assert first.log_lines and all(
        line == json.dumps(json.loads(line), sort_keys=True)
        for line in first.log_lines)

    # dataset files round-trip bit-exactly
    d1, d2 = tmp_path / "a.wdph", tmp_path / "b.wdph"
    write_dataset(d1, samples, vocab)
    back, vocab_back, _ = read_dataset(d1)
    write_dataset(d2, back, vocab_back)
    assert d1.read_bytes() == d2.read_bytes()

    # checkpoint files round-trip bit-exactly
    c1, c2 = tmp_path / "a.wdck", tmp_path / "b.wdck"
    save_checkpoint(c1, first.best)
    save_checkpoint(c2, load_checkpoint(c1))
    assert c1.read_bytes() == c2.read_bytes()

    # re-running from the echoed config reproduces the metrics bit-exactly
    data_path, val_path = tmp_path / "t.wdph", tmp_path / "v.wdph"
    write_dataset(data_path, train, vocab)
    write_dataset(val_path, val, vocab)
    run_a = tmp_path / "run_a"
    run_b = tmp_path / "run_b"
    for d in (run_a, run_b):
        d.mkdir()
    args = ["train", "--data", str(data_path), "--val", str(val_path),
            "--epochs", "2", "--batch", "16", "--p", "0.1",
            "--latent-dim", "8", "--seed", "4"]
    buf = io.StringIO()
    with redirect_stdout(buf):
        assert cli.main(args + ["--out-ckpt", str(run_a / "m.wdck")]) == 0
    echo = buf.getvalue().strip().splitlines()[0]
    (run_a / "echo.json").write_text(echo)

    buf2 = io.StringIO()
    with redirect_stdout(buf2):
        assert cli.main(["train", "--config", str(run_a / "echo.json"),
                         "--out-ckpt", str(run_b / "m.wdck")]) == 0
    assert (run_a / "m.wdck").read_bytes() == (run_b / "m.wdck").read_bytes()

    for run in (run_a, run_b):
        buf3 = io.StringIO()
        with redirect_stdout(buf3):
            assert cli.main(["eval", "--ckpt", str(run / "m.wdck"),
                             "--data", str(val_path),
                             "--report", str(run / "rep.json")]) == 0
    assert (run_a / "rep.json").read_bytes() == (run_b / "rep.json").read_bytes()

    assert time.perf_counter() - t0 < 600.0
