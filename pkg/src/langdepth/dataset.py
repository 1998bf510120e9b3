"""Dataset records and the WDPH container format.

One record is (caption token ids, float32 image, float32 depth, u8
validity mask). The container is little-endian: magic "WDPH", version u16,
record count u32, channels/height/width u16 each, then the vocabulary
(u16 entry count, each entry a u16 byte length plus UTF-8 bytes, in id
order), then the records. Caption ids are u16 with a u16 length prefix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractError,
    CountMismatchError,
    HeaderFormatError,
    TruncatedRecordError,
)
from .scene import GeneratorConfig, caption_words, render, sample_scene
from .text import Vocabulary, build_vocabulary

MAGIC = b"WDPH"
VERSION = 1


@dataclass
class Sample:
    image: np.ndarray   # (channels, height, width) float32
    tokens: list[int]   # caption token ids
    depth: np.ndarray   # (height, width) float32
    mask: np.ndarray    # (height, width) bool


@dataclass(frozen=True)
class DatasetHeader:
    count: int
    channels: int
    height: int
    width: int
    vocab_size: int


def generate_dataset(seed: int, count: int,
                     config: GeneratorConfig = GeneratorConfig()):
    """Pure function of (seed, count, config): scenes, rendered and captioned.

    Record i comes from scene seed (seed, i), so prefixes of a longer
    dataset match a shorter one. Masks are all-true; hole handling is
    exercised by constructing masks directly.
    """
    vocab = build_vocabulary()
    camera = config.camera
    samples = []
    for i in range(count):
        scene = sample_scene([seed, i], config=config)
        image, depth = render(scene, camera)
        ids = [vocab.id_of(w) for w in caption_words(scene)]
        mask = np.ones(depth.shape, dtype=bool)
        samples.append(Sample(image=image, tokens=ids, depth=depth, mask=mask))
    return samples, vocab


def write_dataset(path, samples: list[Sample], vocab: Vocabulary) -> None:
    if not samples:
        raise ContractError("refusing to write an empty dataset")
    c, h, w = samples[0].image.shape
    vocab_size = len(vocab)
    if vocab_size > 0xFFFF:
        raise ContractError("vocabulary too large for u16 ids")
    for s in samples:
        if s.image.shape != (c, h, w) or s.depth.shape != (h, w) \
                or s.mask.shape != (h, w):
            raise ContractError("all samples must share one geometry")
        if len(s.tokens) > 0xFFFF:
            raise ContractError("caption too long for a u16 length")
        if any(t < 0 or t >= vocab_size for t in s.tokens):
            raise ContractError("caption token id outside the vocabulary")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HIHHHH", VERSION, len(samples), c, h, w, vocab_size))
        for token in vocab.tokens:
            raw = token.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        for s in samples:
            f.write(struct.pack("<H", len(s.tokens)))
            f.write(np.asarray(s.tokens, dtype="<u2").tobytes())
            f.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.depth, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())


def _read_exact(f, n: int, context: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise TruncatedRecordError(f"file ended inside {context}")
    return raw


def read_dataset(path):
    """Read a WDPH file back into (samples, vocab, header).

    Raises HeaderFormatError for a bad magic/version, TruncatedRecordError
    when a record body ends early, and CountMismatchError when the number
    of records on disk disagrees with the header.
    """
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) < 4 or head != MAGIC:
            raise HeaderFormatError(f"bad magic {head!r}, expected {MAGIC!r}")
        raw = f.read(14)
        if len(raw) < 14:
            raise HeaderFormatError("header too short")
        version, count, c, h, w, vocab_size = struct.unpack("<HIHHHH", raw)
        if version != VERSION:
            raise HeaderFormatError(f"unsupported version {version}")

        tokens = []
        for i in range(vocab_size):
            (tlen,) = struct.unpack("<H", _read_exact(f, 2, f"vocab entry {i}"))
            tokens.append(_read_exact(f, tlen, f"vocab entry {i}").decode("utf-8"))
        vocab = Vocabulary(tokens=tuple(tokens))

        image_bytes = 4 * c * h * w
        plane_bytes = 4 * h * w
        samples = []
        for i in range(count):
            lead = f.read(2)
            if len(lead) == 0:
                raise CountMismatchError(
                    f"header promised {count} records, found {i}"
                )
            if len(lead) < 2:
                raise TruncatedRecordError(f"file ended inside record {i}")
            (n_tok,) = struct.unpack("<H", lead)
            tok_raw = _read_exact(f, 2 * n_tok, f"record {i} caption")
            tokens_i = np.frombuffer(tok_raw, dtype="<u2").astype(int).tolist()
            img = np.frombuffer(_read_exact(f, image_bytes, f"record {i} image"),
                                dtype="<f4").reshape(c, h, w).copy()
            dep = np.frombuffer(_read_exact(f, plane_bytes, f"record {i} depth"),
                                dtype="<f4").reshape(h, w).copy()
            msk = np.frombuffer(_read_exact(f, h * w, f"record {i} mask"),
                                dtype=np.uint8).reshape(h, w).astype(bool)
            samples.append(Sample(image=img, tokens=tokens_i, depth=dep, mask=msk))

        if f.read(1):
            raise CountMismatchError(
                f"trailing bytes after the {count} records promised by the header"
            )

    header = DatasetHeader(count=count, channels=c, height=h, width=w,
                           vocab_size=vocab_size)
    return samples, vocab, header
