"""Speech Commands v1 ingestion: labels, official splits, silence crops, batching."""

from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusLayoutError, DataError
from .features import FeatureCache, FeatureConfig, load_wav, log_mel

log = logging.getLogger(__name__)

CLASSES = ("silence", "unknown", "yes", "no", "up", "down", "left", "right", "on", "off",
           "stop", "go")
TARGET_WORDS = CLASSES[2:]
SILENCE, UNKNOWN = 0, 1
SPLITS = ("train", "valid", "test")
NOISE_DIR = "_background_noise_"
ZERO_SOURCE = "__zeros__"
# disjoint slices of every noise file feed the train / valid / test silence crops
SILENCE_REGIONS = {"train": (0.0, 0.8), "valid": (0.8, 0.9), "test": (0.9, 1.0)}
SILENCE_SEEDS = {"train": 0, "valid": 1, "test": 2}
ZERO_FRACTION = 0.1


def label_for_word(word: str) -> int:
    return CLASSES.index(word) if word in TARGET_WORDS else UNKNOWN


@dataclass(frozen=True)
class Entry:
    """One utterance or silence crop.

    ``source`` is a corpus-relative wav path, or ``"<noise path>:<offset>"``
    for a one-second crop of a background-noise file.
    """

    source: str
    label: int
    split: str

    @property
    def is_crop(self) -> bool:
        return ":" in self.source


class Manifest:
    def __init__(self, root, entries: Sequence[Entry]):
        self.root = Path(root)
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> List[Entry]:
        return [e for e in self.entries if e.split == name]

    def class_counts(self, split: str) -> np.ndarray:
        counts = np.zeros(len(CLASSES), dtype=np.int64)
        for e in self.split(split):
            counts[e.label] += 1
        return counts

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# root\t{self.root}\n")
            for e in self.entries:
                fh.write(f"{e.source}\t{e.label}\t{e.split}\n")

    @classmethod
    def load(cls, path, root=None) -> "Manifest":
        entries, stored_root = [], None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].strip().split("\t")
                    if parts[0] == "root" and len(parts) == 2:
                        stored_root = parts[1]
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected path<TAB>label<TAB>split")
                source, label, split = parts
                if split not in SPLITS:
                    raise DataError(f"{path}:{lineno}: unknown split {split!r}")
                try:
                    label = int(label)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: label must be an integer") from None
                if not 0 <= label < len(CLASSES):
                    raise DataError(f"{path}:{lineno}: label {label} out of range")
                entries.append(Entry(source, label, split))
        root = root or stored_root
        if root is None:
            raise DataError(f"{path}: no corpus root recorded; pass root explicitly")
        missing = sorted({e.source.rsplit(":", 1)[0] if e.is_crop else e.source for e in entries}
                         - {ZERO_SOURCE})
        missing = [m for m in missing if not (Path(root) / m).exists()]
        if missing:
            raise DataError(f"{path}: {len(missing)} referenced files missing under {root}, "
                            f"e.g. {missing[0]}")
        return cls(root, entries)


def _read_list(path: Path) -> set:
    return {ln.strip() for ln in path.read_text().splitlines() if ln.strip()}


def _wav_length(path: Path) -> int:
    with wave.open(str(path), "rb") as w:
        return w.getnframes()


def generate_silence(root, noise_files: Sequence[str], count: int, seed: int,
                     split: str = "train", region: Tuple[float, float] = (0.0, 1.0),
                     n_samples: int = 16000) -> List[Entry]:
    """Seeded one-second crop descriptors drawn from background-noise files.

    Offsets are uniform within ``region`` (fractions of each file's length).
    A tenth of the entries are all-zero silence. Files whose region is
    shorter than one crop are skipped with a warning.
    """
    if count <= 0:
        raise ValueError("silence count must be positive")
    root = Path(root)
    usable = []
    for rel in sorted(noise_files):
        n = _wav_length(root / rel)
        lo, hi = int(region[0] * n), int(region[1] * n)
        if hi - lo < n_samples:
            log.warning("skipping noise file %s: region shorter than one crop", rel)
            continue
        usable.append((rel, lo, hi))
    rng = np.random.default_rng(seed)
    n_zero = int(round(ZERO_FRACTION * count))
    if not usable:
        if n_zero < count:
            raise DataError("no background-noise file long enough for silence crops")
    entries = [Entry(f"{ZERO_SOURCE}:0", SILENCE, split) for _ in range(n_zero)]
    for _ in range(count - n_zero):
        rel, lo, hi = usable[rng.integers(len(usable))]
        offset = int(rng.integers(lo, hi - n_samples + 1))
        entries.append(Entry(f"{rel}:{offset}", SILENCE, split))
    order = rng.permutation(len(entries))
    return [entries[i] for i in order]


def build_manifest(root, seed: int = 0, silence_counts: Optional[Dict[str, int]] = None) -> Manifest:
    """Index a Speech Commands v1 directory tree into a 12-class manifest.

    Silence entries per split default to the mean per-target-word count of
    that split.
    """
    root = Path(root)
    val_list, test_list = root / "validation_list.txt", root / "testing_list.txt"
    for p in (val_list, test_list, root / NOISE_DIR):
        if not p.exists():
            raise CorpusLayoutError(f"corpus layout: missing {p}")
    missing = [w for w in TARGET_WORDS if not (root / w).is_dir()]
    if missing:
        raise CorpusLayoutError(f"corpus layout: missing word directories {missing}")
    valid, test = _read_list(val_list), _read_list(test_list)

    entries = []
    words = sorted(d.name for d in root.iterdir() if d.is_dir() and not d.name.startswith("_"))
    for word in words:
        label = label_for_word(word)
        for wav in sorted((root / word).glob("*.wav")):
            rel = f"{word}/{wav.name}"
            split = "test" if rel in test else "valid" if rel in valid else "train"
            entries.append(Entry(rel, label, split))

    noise = sorted(f"{NOISE_DIR}/{p.name}" for p in (root / NOISE_DIR).glob("*.wav"))
    manifest = Manifest(root, entries)
    for split in SPLITS:
        if silence_counts and split in silence_counts:
            count = silence_counts[split]
        else:
            counts = manifest.class_counts(split)[2:]
            count = max(1, int(round(counts.mean())))
        if count:
            entries.extend(generate_silence(root, noise, count, seed * 7919 + SILENCE_SEEDS[split],
                                            split, SILENCE_REGIONS[split]))
    return Manifest(root, entries)


def sampler_weights(entries: Sequence[Entry]) -> np.ndarray:
    """Per-entry weights proportional to 1 / (size of the entry's class)."""
    labels = np.array([e.label for e in entries], dtype=np.int64)
    counts = np.bincount(labels, minlength=len(CLASSES))
    return 1.0 / counts[labels]


class FeatureStore:
    """Turns manifest entries into feature maps, memoized in memory and optionally on disk."""

    def __init__(self, root, cfg: FeatureConfig = FeatureConfig(), cache_dir=None,
                 memory: bool = True):
        self.root = Path(root)
        self.cfg = cfg
        self.disk = FeatureCache(cache_dir) if cache_dir else None
        self.memory = {} if memory else None
        self._noise = {}

    def samples(self, entry: Entry) -> np.ndarray:
        if entry.is_crop:
            src, offset = entry.source.rsplit(":", 1)
            n = self.cfg.n_samples
            if src == ZERO_SOURCE:
                return np.zeros(n)
            if src not in self._noise:
                self._noise[src] = load_wav(self.root / src, self.cfg.sample_rate)
            offset = int(offset)
            return self._noise[src][offset:offset + n]
        return load_wav(self.root / entry.source, self.cfg.sample_rate)

    def __call__(self, entry: Entry) -> np.ndarray:
        key = entry.source
        if self.memory is not None and key in self.memory:
            return self.memory[key]
        compute = lambda: log_mel(self.samples(entry), self.cfg)  # noqa: E731
        fmap = self.disk.get(key, compute) if self.disk else compute()
        if self.memory is not None:
            self.memory[key] = fmap
        return fmap


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def make_batches(manifest: Manifest, split: str, batch_size: int, weights=None, seed: int = 0,
                 epoch: int = 0, store: Optional[FeatureStore] = None,
                 steps: Optional[int] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(features [B, 1, T, F], labels [B])``.

    The train split is drawn with replacement under ``weights`` (class-balanced
    by default), ``ceil(n / batch_size)`` batches per epoch; the order is a
    pure function of ``(seed, epoch)``. Other splits visit every entry once,
    in manifest order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"split {split!r} is empty")
    store = store or FeatureStore(manifest.root)
    if split == "train":
        w = sampler_weights(entries) if weights is None else np.asarray(weights, dtype=np.float64)
        rng = np.random.default_rng([seed, epoch])
        n_steps = steps if steps is not None else steps_per_epoch(len(entries), batch_size)
        order = rng.choice(len(entries), size=n_steps * batch_size, replace=True, p=w / w.sum())
        chunks = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    else:
        idx = np.arange(len(entries))
        chunks = [idx[i:i + batch_size] for i in range(0, idx.size, batch_size)]
    for chunk in chunks:
        x = np.stack([store(entries[i]) for i in chunk])
        y = np.array([entries[i].label for i in chunk], dtype=np.int64)
        yield x, y
