"""Manifests, feature loading, minibatching and the synthetic desk-scale corpus."""
from dataclasses import asdict, dataclass, fields
import json
import os
from pathlib import Path
import zlib

import numpy as np

from . import ssem
from .errors import DataError, ManifestError, SpecError
from .frontend import FrontendConfig, extract_mfcc, read_wav

SPLITS = ("train", "val", "test")
AUDIO_SUFFIXES = (".wav",)
# both models' length preconditions: 30 erased + 2 x 6 frames
MIN_FRAMES = 42


def subseed(seed, name):
    """Independent named stream derived from the run seed."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def rng_for(seed, name):
    return np.random.default_rng(subseed(seed, name))


@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    image_id: str
    split: str
    source: str
    image_features: str = None

    @property
    def is_audio(self):
        return Path(self.source).suffix.lower() in AUDIO_SUFFIXES


_FIELDS = {f.name for f in fields(ManifestEntry)}
_REQUIRED = {"utterance_id", "speaker_id", "image_id", "split", "source"}


def load_manifest(path, check_files=True):
    """Read a JSON-lines manifest. Relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    seen = {}
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{where}: not valid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise ManifestError(f"{where}: expected an object")
        missing = _REQUIRED - record.keys()
        if missing:
            raise ManifestError(f"{where}: missing field(s) {sorted(missing)}")
        unknown = record.keys() - _FIELDS
        if unknown:
            raise ManifestError(f"{where}: unknown field(s) {sorted(unknown)}")
        entry = ManifestEntry(**{k: (None if v is None else str(v)) for k, v in record.items()})
        if entry.split not in SPLITS:
            raise ManifestError(f"{where}: unknown split {entry.split!r}")
        if entry.utterance_id in seen:
            raise ManifestError(
                f"{where}: duplicate utterance_id {entry.utterance_id!r} (first on line {seen[entry.utterance_id]})"
            )
        seen[entry.utterance_id] = lineno
        entry.source = str(base / entry.source)
        if entry.image_features is not None:
            entry.image_features = str(base / entry.image_features)
        if check_files:
            for p in (entry.source, entry.image_features):
                if p is not None and not os.path.exists(p):
                    raise ManifestError(f"{where}: file not found: {p}")
        entries.append(entry)
    return entries


def write_manifest(entries, path):
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w") as fh:
        for e in entries:
            record = {k: v for k, v in asdict(e).items() if v is not None}
            for key in ("source", "image_features"):
                if key in record:
                    record[key] = os.path.relpath(Path(record[key]).resolve(), base)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def select_split(entries, split):
    return [e for e in entries if e.split == split]


def load_features(entry, frontend=FrontendConfig()):
    """Feature matrix for one entry; audio sources are featurized on the fly."""
    if entry.is_audio:
        return extract_mfcc(read_wav(entry.source, frontend.sample_rate), frontend)
    return ssem.read_features(entry.source)


def load_image_features(entries):
    rows = [ssem.read_matrix(e.image_features).reshape(-1) if e.image_features else None for e in entries]
    if any(r is None for r in rows):
        raise DataError("some entries have no image_features path")
    return np.stack(rows)


def numeric_ids(ids):
    """Integer ids; non-numeric ids are numbered by first appearance."""
    try:
        return np.array([int(i) for i in ids], dtype=np.int64)
    except ValueError:
        order = {}
        return np.array([order.setdefault(i, len(order)) for i in ids], dtype=np.int64)


# ------------------------------------------------------------------ batching

def batcher(speakers, batch_size, speaker_blocked=False, seed=0):
    """Index batches covering every item once.

    ``speakers`` lists one speaker id per item. The order is a seeded
    permutation; in speaker-blocked mode items are shuffled within speaker
    groups and every batch holds a single speaker. A trailing batch of a
    single item is folded into the previous batch of the same group so that
    contrastive batches always have at least two members.
    """
    n = len(speakers)
    if n == 0:
        raise DataError("cannot batch an empty entry list")
    rng = np.random.default_rng(seed)
    if not speaker_blocked:
        groups = [rng.permutation(n)]
    else:
        labels = np.asarray(speakers, dtype=object).astype(str)
        groups = [rng.permutation(np.flatnonzero(labels == s)) for s in sorted(set(labels))]
    batches = []
    for group in groups:
        chunks = [group[i : i + batch_size] for i in range(0, len(group), batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            last = chunks.pop()
            chunks[-1] = np.concatenate([chunks[-1], last])
        batches.extend(chunks)
    order = rng.permutation(len(batches))
    return [[int(i) for i in batches[j]] for j in order]


# ------------------------------------------------------------------ synthetic corpus

@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 40
    paraphrases_per_class: int = 5
    train_paraphrases_per_class: int = 10
    vocab_size: int = 30
    min_words: int = 4
    max_words: int = 7
    min_frames_per_word: int = 12
    max_frames_per_word: int = 20
    noise_std: float = 0.3
    num_speakers: int = 4
    speaker_shift_std: float = 0.5
    order_jitter: float = 0.3
    image_dim: int = 64
    image_noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("noise_std", "speaker_shift_std", "order_jitter", "image_noise_std", "seed"):
                if v < 0:
                    raise SpecError(f"{f.name} must be non-negative")
            elif v <= 0:
                raise SpecError(f"{f.name} must be positive")
        if self.paraphrases_per_class < 2:
            raise SpecError("paraphrases_per_class must be at least 2")
        if self.min_words > self.max_words or self.min_frames_per_word > self.max_frames_per_word:
            raise SpecError("min must not exceed max")
        if self.max_words > self.vocab_size:
            raise SpecError("max_words exceeds vocab_size")
        if self.min_words * self.min_frames_per_word < MIN_FRAMES:
            raise SpecError(
                f"shortest utterance would have {self.min_words * self.min_frames_per_word} frames; "
                f"need at least {MIN_FRAMES}"
            )


@dataclass
class SyntheticCorpus:
    spec: SynthSpec
    features: list
    utterance_ids: list
    speaker_ids: list
    image_ids: list
    splits: list
    word_orders: list
    image_vectors: dict

    def indices(self, split):
        return [i for i, s in enumerate(self.splits) if s == split]

    def subset(self, split):
        idx = self.indices(split)
        return ([self.features[i] for i in idx], [self.image_ids[i] for i in idx],
                [self.speaker_ids[i] for i in idx])

    def image_matrix(self, split):
        return np.stack([self.image_vectors[self.image_ids[i]] for i in self.indices(split)])


def synthesize(spec=SynthSpec()):
    """Build the corpus in memory.

    Each word has a fixed duration and a fixed ``duration x 13`` template.
    Each class (pseudo-image) owns a word sequence; a paraphrase realizes it
    with adjacent-word swaps (probability ``order_jitter`` per position),
    concatenates the templates, then adds Gaussian frame noise and its
    speaker's constant offset. Image vectors are the normalized sum of
    per-word meaning vectors plus small noise.
    """
    seed = spec.seed
    lex = rng_for(seed, "lexicon")
    durations = lex.integers(spec.min_frames_per_word, spec.max_frames_per_word + 1, spec.vocab_size)
    templates = [lex.standard_normal((d, 13)) for d in durations]
    meanings = lex.standard_normal((spec.vocab_size, spec.image_dim))

    cls_rng = rng_for(seed, "classes")
    class_words = []
    for _ in range(spec.num_classes):
        k = cls_rng.integers(spec.min_words, spec.max_words + 1)
        class_words.append(cls_rng.choice(spec.vocab_size, size=k, replace=False))

    img_rng = rng_for(seed, "images")
    image_vectors = {}
    for c, words in enumerate(class_words):
        v = meanings[words].sum(axis=0)
        v = v / np.linalg.norm(v) + spec.image_noise_std * img_rng.standard_normal(spec.image_dim)
        image_vectors[f"img{c:04d}"] = v

    spk_rng = rng_for(seed, "speakers")
    offsets = spec.speaker_shift_std * spk_rng.standard_normal((spec.num_speakers, 13))

    utt_rng = rng_for(seed, "utterances")
    corpus = SyntheticCorpus(spec, [], [], [], [], [], [], image_vectors)
    for split, per_class in (("train", spec.train_paraphrases_per_class), ("val", spec.paraphrases_per_class)):
        for c, words in enumerate(class_words):
            for p in range(per_class):
                order = list(words)
                for i in range(len(order) - 1):
                    if utt_rng.random() < spec.order_jitter:
                        order[i], order[i + 1] = order[i + 1], order[i]
                speaker = int(utt_rng.integers(spec.num_speakers))
                frames = np.concatenate([templates[w] for w in order])
                frames = frames + spec.noise_std * utt_rng.standard_normal(frames.shape) + offsets[speaker]
                corpus.features.append(frames)
                corpus.utterance_ids.append(f"{split}-c{c:04d}-p{p:02d}")
                corpus.speaker_ids.append(f"spk{speaker}")
                corpus.image_ids.append(f"img{c:04d}")
                corpus.splits.append(split)
                corpus.word_orders.append(tuple(int(w) for w in order))
    return corpus


def generate_synthetic(spec, out_dir):
    """Write ``features/``, ``images/`` and ``manifest`` under ``out_dir``.

    Returns the manifest entries.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    corpus = synthesize(spec)
    for image_id, vec in corpus.image_vectors.items():
        ssem.write_matrix(vec[None, :], out / "images" / f"{image_id}.ssem")
    entries = []
    for i, uid in enumerate(corpus.utterance_ids):
        feat_path = out / "features" / f"{uid}.ssem"
        ssem.write_features(corpus.features[i], feat_path)
        entries.append(ManifestEntry(
            utterance_id=uid, speaker_id=corpus.speaker_ids[i], image_id=corpus.image_ids[i],
            split=corpus.splits[i], source=str(feat_path),
            image_features=str(out / "images" / f"{corpus.image_ids[i]}.ssem"),
        ))
    write_manifest(entries, out / "manifest")
    with open(out / "synth_spec.json", "w") as fh:
        json.dump(asdict(spec), fh, sort_keys=True, indent=1)
    return entries
