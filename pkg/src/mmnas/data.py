"""Synthetic paired-modality benchmark with planted cross-modal structure,
plus the MMNF on-disk feature format and deterministic splitting.

Generation model: each sample draws a latent factor u ~ N(0, I). A feature
layer named in the signal plan becomes  X = U A + noise / snr  with
unit-norm columns of A (so per-coordinate signal variance is 1); every
other layer is pure N(0, 1) noise. Labels are thresholded linear readouts
of the latent with staggered thresholds, so positive rates range from
common to rare. Features pass through float32 once at creation, making the
float32 file payload bit-exact under round-trip.

Text token sequences are a deterministic per-sample proxy (they are not
stored in MMNF, which holds features and labels only): both the generator
and the loader synthesize tokens from the sample index alone.

MMNF layout, all integers little-endian:

  magic  b"MMNF" | version u32 | num_samples u32 | num_modalities u32
  per modality: layer_count u32, then one u32 dim per layer
  num_labels u32 (0 means unlabeled)
  payload: per modality, per layer, a float32 block (num_samples x dim,
  row-major), then a u8 label block (num_samples x num_labels) if labeled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .contrastive import MultimodalSample
from .util import (
    TAG_DATA_LABELS,
    TAG_DATA_LATENT,
    TAG_DATA_MAPS,
    TAG_DATA_NOISE,
    TAG_DATA_TOKENS,
    TAG_SPLIT,
    seeded_rng,
)

MMNF_MAGIC = b"MMNF"
MMNF_VERSION = 1
_TOKEN_STREAM_KEY = 0x4D4D4E46  # fixed: tokens depend only on the sample index


class DataError(ValueError):
    pass


class FormatError(DataError):
    """Malformed or truncated MMNF payload."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_samples: int = 2000
    image_layer_dims: tuple = (32, 32)
    text_layer_dims: tuple = (32, 32)
    num_labels: int = 8
    latent_dim: int = 4
    signal_plan: tuple = (("image:0", 10.0), ("text:1", 10.0))
    text_len: int = 16
    vocab_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_layer_dims", tuple(int(d) for d in self.image_layer_dims))
        object.__setattr__(self, "text_layer_dims", tuple(int(d) for d in self.text_layer_dims))
        object.__setattr__(
            self, "signal_plan", tuple((str(s), float(snr)) for s, snr in self.signal_plan)
        )
        if self.num_samples < 1:
            raise DataError("num_samples must be >= 1")
        if self.num_labels < 1:
            raise DataError("num_labels must be >= 1")
        if self.latent_dim < 1:
            raise DataError("latent_dim must be >= 1")
        if not self.image_layer_dims or not self.text_layer_dims:
            raise DataError("both modalities need at least one layer")
        if any(d < 1 for d in self.image_layer_dims + self.text_layer_dims):
            raise DataError("layer dims must be >= 1")
        if self.text_len < 1 or self.vocab_size < 2:
            raise DataError("text_len >= 1 and vocab_size >= 2 required")
        sources = self.sources()
        planted_modalities = set()
        for src, snr in self.signal_plan:
            if src not in sources:
                raise DataError(f"signal plan names unknown source {src!r}")
            if snr <= 0:
                raise DataError("signal-to-noise ratio must be > 0")
            planted_modalities.add(src.split(":", 1)[0])
        if planted_modalities != {"image", "text"}:
            raise DataError("signal plan needs at least one planted layer per modality")

    def sources(self) -> list:
        out = [f"image:{l}" for l in range(len(self.image_layer_dims))]
        out += [f"text:{l}" for l in range(len(self.text_layer_dims))]
        return out

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "image_layer_dims": list(self.image_layer_dims),
            "text_layer_dims": list(self.text_layer_dims),
            "num_labels": self.num_labels,
            "latent_dim": self.latent_dim,
            "signal_plan": [[s, snr] for s, snr in self.signal_plan],
            "text_len": self.text_len,
            "vocab_size": self.vocab_size,
            "seed": self.seed,
        }


def proxy_tokens(sample_id: int, text_len: int, vocab_size: int) -> np.ndarray:
    """Deterministic token sequence for a sample; MASK id is never emitted."""
    rng = seeded_rng(_TOKEN_STREAM_KEY, TAG_DATA_TOKENS, sample_id)
    return rng.integers(0, vocab_size - 1, size=text_len, dtype=np.int64)


class Dataset:
    """In-memory paired dataset; feature arrays are read-only float64."""

    def __init__(self, samples: list, image_dims: tuple, text_dims: tuple, num_labels: int):
        self.samples = samples
        self.image_dims = tuple(image_dims)
        self.text_dims = tuple(text_dims)
        self.num_labels = int(num_labels)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labeled(self) -> bool:
        return self.num_labels > 0 and all(s.label is not None for s in self.samples)

    def features_per_modality(self) -> tuple:
        return (self.image_dims, self.text_dims)

    def labels_matrix(self) -> np.ndarray:
        if not self.labeled:
            raise DataError("dataset has no labels")
        return np.stack([s.label for s in self.samples]).astype(np.float64)

    def subset(self, indices, strip_labels: bool = False) -> "Dataset":
        picked = []
        for i in indices:
            s = self.samples[int(i)]
            picked.append(
                MultimodalSample(
                    sample_id=s.sample_id,
                    image_features=s.image_features,
                    text_features=s.text_features,
                    text_tokens=s.text_tokens,
                    label=None if strip_labels else s.label,
                )
            )
        return Dataset(
            picked,
            self.image_dims,
            self.text_dims,
            0 if strip_labels else self.num_labels,
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw the planted dataset; deterministic in spec.seed."""
    n = spec.num_samples
    rng_latent = seeded_rng(spec.seed, TAG_DATA_LATENT)
    rng_maps = seeded_rng(spec.seed, TAG_DATA_MAPS)
    rng_noise = seeded_rng(spec.seed, TAG_DATA_NOISE)
    rng_labels = seeded_rng(spec.seed, TAG_DATA_LABELS)

    latent = rng_latent.standard_normal((n, spec.latent_dim))
    snr_by_source = dict(spec.signal_plan)
    blocks = {}
    for src in spec.sources():
        modality, layer = src.split(":", 1)
        dims = spec.image_layer_dims if modality == "image" else spec.text_layer_dims
        d = dims[int(layer)]
        if src in snr_by_source:
            a = rng_maps.standard_normal((spec.latent_dim, d))
            a /= np.linalg.norm(a, axis=0, keepdims=True)
            x = latent @ a + rng_noise.standard_normal((n, d)) / snr_by_source[src]
        else:
            x = rng_noise.standard_normal((n, d))
        # one pass through float32 so the on-disk payload round-trips exactly
        blocks[src] = x.astype(np.float32).astype(np.float64)

    w_lab = rng_labels.standard_normal((spec.latent_dim, spec.num_labels))
    w_lab /= np.linalg.norm(w_lab, axis=0, keepdims=True)
    thresholds = np.linspace(-0.5, 1.5, spec.num_labels)
    labels = (latent @ w_lab > thresholds).astype(np.uint8)

    samples = []
    for i in range(n):
        samples.append(
            MultimodalSample(
                sample_id=i,
                image_features=[
                    _freeze(blocks[f"image:{l}"][i].copy()) for l in range(len(spec.image_layer_dims))
                ],
                text_features=[
                    _freeze(blocks[f"text:{l}"][i].copy()) for l in range(len(spec.text_layer_dims))
                ],
                text_tokens=_freeze(proxy_tokens(i, spec.text_len, spec.vocab_size)),
                label=_freeze(labels[i].copy()),
            )
        )
    return Dataset(samples, spec.image_layer_dims, spec.text_layer_dims, spec.num_labels)


# ---------------------------------------------------------------------------
# MMNF read/write
# ---------------------------------------------------------------------------

def save(dataset: Dataset, path, text_len: int = 16, vocab_size: int = 1000) -> None:
    """Write features (float32) and labels (u8) in MMNF layout."""
    n = len(dataset)
    per_modality = [dataset.image_dims, dataset.text_dims]
    header = bytearray()
    header += MMNF_MAGIC
    header += struct.pack("<III", MMNF_VERSION, n, len(per_modality))
    for dims in per_modality:
        header += struct.pack("<I", len(dims))
        header += struct.pack(f"<{len(dims)}I", *dims)
    num_labels = dataset.num_labels if dataset.labeled else 0
    header += struct.pack("<I", num_labels)

    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for m, dims in enumerate(per_modality):
            feats = [s.image_features if m == 0 else s.text_features for s in dataset.samples]
            for l in range(len(dims)):
                block = np.stack([f[l] for f in feats]).astype("<f4")
                fh.write(block.tobytes())
        if num_labels:
            fh.write(np.stack([s.label for s in dataset.samples]).astype(np.uint8).tobytes())


def load(path, text_len: int = 16, vocab_size: int = 1000, expect_dims: tuple | None = None) -> Dataset:
    """Parse an MMNF file; rejects wrong magic/version and any length drift."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def need(offset, count, what):
        if offset + count > len(raw):
            raise FormatError(
                f"truncated file: need {count} bytes for {what} at offset {offset}, have {len(raw) - offset}"
            )

    need(0, 4, "magic")
    if raw[:4] != MMNF_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MMNF_MAGIC!r}")
    need(4, 12, "header")
    version, n, num_modalities = struct.unpack_from("<III", raw, 4)
    if version != MMNF_VERSION:
        raise FormatError(f"unsupported version {version}")
    if num_modalities != 2:
        raise FormatError(f"expected 2 modalities (image, text), found {num_modalities}")
    off = 16
    per_modality = []
    for _ in range(num_modalities):
        need(off, 4, "layer count")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        need(off, 4 * count, "layer dims")
        dims = struct.unpack_from(f"<{count}I", raw, off)
        off += 4 * count
        if count == 0 or any(d == 0 for d in dims):
            raise FormatError("zero layer count or zero dim in header")
        per_modality.append(tuple(dims))
    need(off, 4, "label count")
    (num_labels,) = struct.unpack_from("<I", raw, off)
    off += 4

    expected_payload = sum(4 * n * d for dims in per_modality for d in dims) + n * num_labels
    if len(raw) - off != expected_payload:
        raise FormatError(
            f"payload length mismatch at offset {off}: header implies {expected_payload} bytes, "
            f"found {len(raw) - off}"
        )
    if expect_dims is not None and tuple(per_modality) != tuple(tuple(d) for d in expect_dims):
        raise FormatError(
            f"feature dims {per_modality} do not match the expected configuration {expect_dims}"
        )

    blocks = []
    for dims in per_modality:
        layer_blocks = []
        for d in dims:
            count = n * d
            arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(n, d)
            off += 4 * count
            layer_blocks.append(arr.astype(np.float64))
        blocks.append(layer_blocks)
    labels = None
    if num_labels:
        labels = np.frombuffer(raw, dtype=np.uint8, count=n * num_labels, offset=off).reshape(
            n, num_labels
        )
        off += n * num_labels

    for layer_blocks in blocks:
        for arr in layer_blocks:
            if not np.all(np.isfinite(arr)):
                raise FormatError("non-finite feature values (corrupt payload)")

    samples = []
    for i in range(n):
        samples.append(
            MultimodalSample(
                sample_id=i,
                image_features=[_freeze(b[i].copy()) for b in blocks[0]],
                text_features=[_freeze(b[i].copy()) for b in blocks[1]],
                text_tokens=_freeze(proxy_tokens(i, text_len, vocab_size)),
                label=_freeze(labels[i].copy()) if labels is not None else None,
            )
        )
    return Dataset(samples, per_modality[0], per_modality[1], num_labels)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass
class SplitSet:
    search_train: Dataset
    search_valid: Dataset
    labeled_train: Dataset
    test: Dataset


def split(dataset: Dataset, r: float, seed: int) -> SplitSet:
    """Disjoint deterministic splits under the labeled budget floor(n * r).

    The labeled budget is split 90/10 into classifier-training and test
    samples; the unlabeled complement is split 80/20 into the search train
    and valid phases with labels stripped.
    """
    if not 0.0 < r <= 1.0:
        raise DataError(f"labeled ratio must lie in (0, 1], got {r}")
    n = len(dataset)
    if n < 1:
        raise DataError("cannot split an empty dataset")
    rng = seeded_rng(seed, TAG_SPLIT)
    perm = rng.permutation(n)
    labeled_total = int(np.floor(n * r))
    unlabeled = perm[: n - labeled_total]
    labeled = perm[n - labeled_total :]
    n_test = int(np.floor(0.1 * labeled_total))
    test_idx = labeled[:n_test]
    labeled_train_idx = labeled[n_test:]
    n_train = int(np.floor(0.8 * len(unlabeled)))
    return SplitSet(
        search_train=dataset.subset(unlabeled[:n_train], strip_labels=True),
        search_valid=dataset.subset(unlabeled[n_train:], strip_labels=True),
        labeled_train=dataset.subset(labeled_train_idx),
        test=dataset.subset(test_idx),
    )


# ---------------------------------------------------------------------------
# planted-structure audit
# ---------------------------------------------------------------------------

def _mean_abs_crosscorr(x: np.ndarray, y: np.ndarray) -> float:
    xs = (x - x.mean(axis=0)) / np.maximum(x.std(axis=0), 1e-12)
    ys = (y - y.mean(axis=0)) / np.maximum(y.std(axis=0), 1e-12)
    corr = xs.T @ ys / x.shape[0]
    return float(np.mean(np.abs(corr)))


def audit(dataset: Dataset, spec: SyntheticSpec) -> dict:
    """Cross-modal correlation audit: planted pairs must dominate the rest.

    Returns per-pair statistics, the planted/non-planted margin, and the
    dominance verdict. The statistic per (image layer, text layer) pair is
    the mean absolute coordinate-wise Pearson correlation.
    """
    planted = {src for src, _ in spec.signal_plan}
    img_blocks = {
        l: np.stack([s.image_features[l] for s in dataset.samples])
        for l in range(len(dataset.image_dims))
    }
    txt_blocks = {
        l: np.stack([s.text_features[l] for s in dataset.samples])
        for l in range(len(dataset.text_dims))
    }
    pair_stats = {}
    planted_vals, other_vals = [], []
    for li in img_blocks:
        for lt in txt_blocks:
            stat = _mean_abs_crosscorr(img_blocks[li], txt_blocks[lt])
            key = f"image:{li}|text:{lt}"
            is_planted = f"image:{li}" in planted and f"text:{lt}" in planted
            pair_stats[key] = {"mean_abs_corr": stat, "planted": is_planted}
            (planted_vals if is_planted else other_vals).append(stat)
    min_planted = min(planted_vals)
    max_other = max(other_vals) if other_vals else 0.0
    return {
        "pairs": pair_stats,
        "min_planted": min_planted,
        "max_non_planted": max_other,
        "gap_ratio": min_planted / max(max_other, 1e-12),
        "planted_dominates": bool(min_planted > max_other),
        "num_samples": len(dataset),
    }
