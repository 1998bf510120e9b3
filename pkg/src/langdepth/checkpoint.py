"""Training checkpoints in the WDCK container.

Layout, all little-endian: magic "WDCK", version u16, global step u64, a
JSON configuration echo (u32 byte length + UTF-8), the array count u32,
then each array as (u16 name length + name, u8 ndim, u32 per dim,
float32 data). Arrays cover every trainable parameter plus the Adam
moments and per-parameter step counts, so a load resumes training
bit-exactly. The JSON echo carries the training configuration, the model
geometry and the vocabulary, which is everything needed to rebuild the
model without the original dataset.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, HeaderFormatError, TruncatedRecordError
from .model import ModelConfig, ParameterSet, init_parameters
from .optim import Adam
from .text import Vocabulary

MAGIC = b"WDCK"
VERSION = 1


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    step: int
    config: dict

    @classmethod
    def capture(cls, params: ParameterSet, opt: Adam, step: int,
                train_config: dict, vocab: Vocabulary) -> "Checkpoint":
        arrays = params.arrays()
        arrays.update(opt.state_arrays())
        cfg = params.config
        config = {
            "train": dict(train_config),
            "model": {
                "image_channels": cfg.image_channels,
                "image_height": cfg.image_height,
                "image_width": cfg.image_width,
                "text_dim": cfg.text_dim,
                "latent_dim": cfg.latent_dim,
                "text_hidden": list(cfg.text_hidden),
                "encoder_channels": list(cfg.encoder_channels),
                "decoder_channels": list(cfg.decoder_channels),
            },
            "vocab": list(vocab.tokens),
        }
        return cls(arrays=arrays, step=step, config=config)

    def restore(self):
        """Rebuild (params, opt, vocab) from this checkpoint."""
        m = self.config["model"]
        model_cfg = ModelConfig(
            image_channels=m["image_channels"],
            image_height=m["image_height"],
            image_width=m["image_width"],
            text_dim=m["text_dim"],
            latent_dim=m["latent_dim"],
            text_hidden=tuple(m["text_hidden"]),
            encoder_channels=tuple(m["encoder_channels"]),
            decoder_channels=tuple(m["decoder_channels"]),
        )
        vocab = Vocabulary(tokens=tuple(self.config["vocab"]))
        seed = int(self.config["train"].get("seed", 0))
        params = init_parameters(model_cfg, len(vocab), seed)
        param_arrays = {k: v for k, v in self.arrays.items()
                        if not k.startswith("adam.")}
        params.load_arrays(param_arrays)
        opt = Adam()
        opt.load_state_arrays({k: v for k, v in self.arrays.items()
                               if k.startswith("adam.")})
        return params, opt, vocab


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    config_raw = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HQ", VERSION, ckpt.step))
        f.write(struct.pack("<I", len(config_raw)))
        f.write(config_raw)
        f.write(struct.pack("<I", len(ckpt.arrays)))
        for name in sorted(ckpt.arrays):
            arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
            raw_name = name.encode("utf-8")
            if arr.ndim > 255:
                raise ContractError(f"array '{name}' has too many dims")
            f.write(struct.pack("<H", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def _read_exact(f, n: int, context: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise TruncatedRecordError(f"checkpoint ended inside {context}")
    return raw


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4 or head != MAGIC:
            raise HeaderFormatError(f"bad magic {head!r}, expected {MAGIC!r}")
        version, step = struct.unpack("<HQ", _read_exact(f, 10, "header"))
        if version != VERSION:
            raise HeaderFormatError(f"unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4, "header"))
        config = json.loads(_read_exact(f, config_len, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "header"))
        arrays = {}
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, f"array {i}"))
            name = _read_exact(f, name_len, f"array {i} name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, f"array '{name}'"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, f"array '{name}' dims"))[0]
                for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, 4 * n_items, f"array '{name}' data")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise HeaderFormatError("trailing bytes after the last array")
    return Checkpoint(arrays=arrays, step=step, config=config)
