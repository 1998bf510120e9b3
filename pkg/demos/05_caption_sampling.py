"""Generative mode: depth maps sampled from a caption alone.

A caption induces a latent Gaussian, so decoding many draws shows what
the model considers plausible for those words: the metric scale is
pinned by "small"/"large" while the residual spread reflects genuine
layout ambiguity (where exactly the furniture sits).
"""

import numpy as np

from langdepth.dataset import generate_dataset
from langdepth.text import tokenize
from langdepth.trainer import TrainConfig, fit, infer_text


def main():
    train, vocab = generate_dataset(0, 640)
    val, _ = generate_dataset(1, 128)
    cfg = TrainConfig(epochs=6, p=0.05, latent_dim=8, text_dim=16)
    print("training a small model first (about a minute)...")
    result = fit(cfg, train, vocab, val)
    params, _, _ = result.best.restore()
    print(f"  done; best val AbsRel {result.best_abs_rel:.4f}")
    print()

    captions = [
        "a small room with a chair",
        "a large room with a chair",
        "a small room with a table and a lamp",
        "a large room with a table and a lamp",
    ]
    print(f"{'caption':<38} {'mean depth':>10} {'pixel spread':>13}")
    means = {}
    for caption in captions:
        depths, mu, sigma = infer_text(tokenize(caption, vocab), params,
                                       n_samples=64, seed=0)
        spread = depths.std(axis=0)
        means[caption] = depths.mean()
        print(f"{caption:<38} {depths.mean():>9.2f}m "
              f"{(spread > 0).mean():>12.1%}")
    print()
    ratio = means[captions[1]] / means[captions[0]]
    print(f"large/small mean-depth ratio: {ratio:.2f}")
    print("The scenes differ by exactly 2x; a model this small stops")
    print("short of the full separation, while the full-size defaults")
    print("reach about 2.0 (see the acceptance suite). The nonzero")
    print("pixel spread is the point: different draws place the")
    print("furniture differently, as a one-to-many mapping should.")


if __name__ == "__main__":
    main()
