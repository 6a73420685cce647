"""Feature files, dataset ingestion, batching and the synthetic generator.

One utterance is stored as an MFLF file: 25 precomputed layer-feature
matrices of shape T x S (encoder output, 23 intermediate transformer layers,
last layer), little-endian throughout:

    magic      4 bytes  b"MFLF"
    version    u32      1
    num_layers u32      25
    T          u32
    S          u32
    label      u8       0 = spoof, 1 = bonafide, 255 = unlabeled
    id_len     u32
    id         id_len bytes, UTF-8
    payload    num_layers*T*S float32, layer-major then row-major

A split lives at <root>/<split>/<id>.mflf with a manifest
<root>/<split>/manifest.tsv (columns id, label, path; path relative to the
manifest's directory). Features are stored at 32-bit precision and promoted
exactly to 64-bit on load; in-memory records keep the 32-bit values so that
training on generated records matches training on written-then-read files.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .moe_fusion import NUM_INPUT_LAYERS

MAGIC = b"MFLF"
FORMAT_VERSION = 1
LABEL_SPOOF, LABEL_BONAFIDE, LABEL_NONE = 0, 1, 255
LABEL_NAMES = {LABEL_SPOOF: "spoof", LABEL_BONAFIDE: "bonafide", LABEL_NONE: "unlabeled"}
LABEL_VALUES = {name: value for value, name in LABEL_NAMES.items()}

_HEADER = struct.Struct("<4sIIIIBI")  # magic, version, num_layers, T, S, label, id_len


class FeatureFormatError(ValueError):
    """Malformed MFLF bytes or inconsistent layer shapes."""


class IngestionError(ValueError):
    """A dataset split violates its contracts (mixed shapes, bad manifest)."""


@dataclass
class FeatureRecord:
    """One utterance: id, label and its 25 layer-feature matrices (25, T, S)."""

    utt_id: str
    label: int
    layers: np.ndarray

    @property
    def frames(self):
        return self.layers.shape[1]

    @property
    def feature_dim(self):
        return self.layers.shape[2]


@dataclass
class LayerFeatureBatch:
    """Stacked batch: 25 arrays of shape (B, T, S), labels and ids."""

    layers: list
    labels: np.ndarray
    ids: list

    @property
    def size(self):
        return len(self.ids)


def write_feature_file(path, layers, label, utt_id):
    """Write one utterance. layers is (25, T, S) array-like, finite floats."""
    layers = np.asarray(layers)
    if layers.ndim != 3 or layers.shape[0] != NUM_INPUT_LAYERS:
        raise FeatureFormatError(
            f"expected ({NUM_INPUT_LAYERS}, T, S) layers, got shape {layers.shape}"
        )
    if int(label) not in LABEL_NAMES:
        raise FeatureFormatError(f"label must be one of {sorted(LABEL_NAMES)}, got {label}")
    payload = np.ascontiguousarray(layers, dtype="<f4")
    if not np.isfinite(payload).all():
        raise FeatureFormatError("feature payload contains non-finite values")
    id_bytes = utt_id.encode("utf-8")
    _, t, s = layers.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, NUM_INPUT_LAYERS, t, s, int(label), len(id_bytes)))
        f.write(id_bytes)
        f.write(payload.tobytes())


def read_feature_file(path):
    """Read one MFLF file into a FeatureRecord (layers kept at f32 values)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, num_layers, t, s, label, id_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if num_layers != NUM_INPUT_LAYERS:
        raise FeatureFormatError(f"{path}: expected {NUM_INPUT_LAYERS} layers, got {num_layers}")
    if label not in LABEL_NAMES:
        raise FeatureFormatError(f"{path}: bad label byte {label}")
    offset = _HEADER.size
    utt_id = raw[offset : offset + id_len].decode("utf-8")
    offset += id_len
    expected = num_layers * t * s * 4
    actual = len(raw) - offset
    if actual != expected:
        raise FeatureFormatError(f"{path}: payload is {actual} bytes, expected {expected}")
    payload = np.frombuffer(raw, dtype="<f4", count=num_layers * t * s, offset=offset)
    if not np.isfinite(payload).all():
        raise FeatureFormatError(f"{path}: payload contains non-finite values")
    layers = payload.reshape(num_layers, t, s).astype(np.float32)
    return FeatureRecord(utt_id=utt_id, label=int(label), layers=layers)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale stand-in for real feature dumps.

    Every layer of every utterance is i.i.d. Normal(0, sigma^2). Bonafide
    utterances get a +delta/2 mean shift on the informative layers, spoof a
    -delta/2 shift; the last layer (the gate input) always carries the shift
    so routing has signal.
    """

    n_per_class: int
    frames: int = 201
    feature_dim: int = 1024
    delta: float = 4.0
    sigma: float = 1.0
    informative_layers: tuple = (3, 7)
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise IngestionError("n_per_class must be positive")
        if self.sigma <= 0:
            raise IngestionError(f"sigma must be > 0, got {self.sigma}")
        if self.delta < 0:
            raise IngestionError(f"delta must be >= 0, got {self.delta}")
        layers = tuple(self.informative_layers)
        if not layers:
            raise IngestionError("informative layer set must not be empty")
        if any(not 0 <= i < NUM_INPUT_LAYERS - 1 for i in layers):
            raise IngestionError(f"informative layers must lie in 0..23, got {layers}")


def generate_synthetic(spec):
    """Seeded, reproducible list of FeatureRecords (bonafide block, then spoof)."""
    rng = np.random.default_rng(spec.seed)
    shifted = set(spec.informative_layers) | {NUM_INPUT_LAYERS - 1}
    records = []
    for label, name in ((LABEL_BONAFIDE, "bona"), (LABEL_SPOOF, "spoof")):
        sign = 1.0 if label == LABEL_BONAFIDE else -1.0
        for idx in range(spec.n_per_class):
            layers = rng.normal(0.0, spec.sigma, size=(NUM_INPUT_LAYERS, spec.frames, spec.feature_dim))
            for li in shifted:
                layers[li] += sign * spec.delta / 2.0
            records.append(
                FeatureRecord(
                    utt_id=f"{name}-{idx:05d}",
                    label=label,
                    layers=layers.astype(np.float32),
                )
            )
    return records


# ---------------------------------------------------------------------------
# on-disk splits
# ---------------------------------------------------------------------------


def write_split(records, root, split):
    """Write records under <root>/<split>/ plus a manifest.tsv."""
    split_dir = Path(root) / split
    split_dir.mkdir(parents=True, exist_ok=True)
    lines = ["id\tlabel\tpath\n"]
    for rec in records:
        fname = f"{rec.utt_id}.mflf"
        write_feature_file(split_dir / fname, rec.layers, rec.label, rec.utt_id)
        lines.append(f"{rec.utt_id}\t{LABEL_NAMES[rec.label]}\t{fname}\n")
    (split_dir / "manifest.tsv").write_text("".join(lines), encoding="utf-8")
    return split_dir


def load_split(root, split):
    """Load a split via its manifest (or by globbing *.mflf when absent)."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise IngestionError(f"split directory not found: {split_dir}")
    manifest = split_dir / "manifest.tsv"
    records = []
    if manifest.exists():
        with open(manifest, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#") or (lineno == 1 and line.startswith("id\t")):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise IngestionError(f"{manifest}:{lineno}: expected 3 fields")
                utt_id, label_name, rel = parts
                if label_name not in LABEL_VALUES:
                    raise IngestionError(f"{manifest}:{lineno}: unknown label {label_name!r}")
                rec = read_feature_file(split_dir / rel)
                if rec.utt_id != utt_id or rec.label != LABEL_VALUES[label_name]:
                    raise IngestionError(
                        f"{manifest}:{lineno}: file disagrees with manifest "
                        f"({rec.utt_id!r}/{LABEL_NAMES[rec.label]} vs {utt_id!r}/{label_name})"
                    )
                records.append(rec)
    else:
        for path in sorted(split_dir.glob("*.mflf")):
            records.append(read_feature_file(path))
    if not records:
        raise IngestionError(f"no feature files in {split_dir}")
    shapes = {(r.frames, r.feature_dim) for r in records}
    if len(shapes) != 1:
        raise IngestionError(f"mixed feature shapes across files: {sorted(shapes)}")
    return records


def make_batches(records, batch_size, seed):
    """Seeded shuffle, then fixed-size batches (final partial batch kept).

    Layer arrays are stacked per batch and promoted to float64. Every record
    appears exactly once.
    """
    if not records:
        raise IngestionError("cannot batch an empty dataset")
    if batch_size < 1:
        raise IngestionError("batch_size must be positive")
    shapes = {(r.frames, r.feature_dim) for r in records}
    if len(shapes) != 1:
        raise IngestionError(f"mixed feature shapes across records: {sorted(shapes)}")
    order = np.random.default_rng(seed).permutation(len(records))
    batches = []
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        stacked = np.stack([r.layers for r in chunk]).astype(np.float64)  # (B, 25, T, S)
        batches.append(
            LayerFeatureBatch(
                layers=[np.ascontiguousarray(stacked[:, li]) for li in range(NUM_INPUT_LAYERS)],
                labels=np.array([r.label for r in chunk], dtype=np.intp),
                ids=[r.utt_id for r in chunk],
            )
        )
    return batches
