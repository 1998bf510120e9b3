"""A small end-to-end training run: fit, log, evaluate, save, reload.

Uses a reduced dataset and epoch count so it finishes in about a minute;
the full-size defaults live in TrainConfig and the command-line tool.
"""

import tempfile
from pathlib import Path

from langdepth.checkpoint import load_checkpoint, save_checkpoint
from langdepth.dataset import generate_dataset
from langdepth.trainer import TrainConfig, evaluate, fit

def main():
    train, vocab = generate_dataset(0, 640)
    val, _ = generate_dataset(1, 128)
    test, _ = generate_dataset(2, 128)

    cfg = TrainConfig(epochs=6, p=0.05, latent_dim=8, text_dim=16)
    print(f"training on {len(train)} scenes, validating on {len(val)}:")
    result = fit(cfg, train, vocab, val,
                 log_fn=lambda line: print(" ", line))

    print()
    print(f"caption steps {result.text_steps}, image steps "
          f"{result.image_steps}, best epoch {result.best_epoch} "
          f"(val AbsRel {result.best_abs_rel:.4f})")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.wdck"
        save_checkpoint(path, result.best)
        print(f"checkpoint: {path.stat().st_size} bytes on disk")
        params, _, _ = load_checkpoint(path).restore()

    report = evaluate(params, test)
    print("held-out metrics from the reloaded checkpoint:")
    for key, value in report.to_dict().items():
        print(f"  {key:>9}: {value:.4f}" if key != "n_pixels"
              else f"  {key:>9}: {value}")


if __name__ == "__main__":
    main()
