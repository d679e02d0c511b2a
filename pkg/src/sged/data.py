"""
Conversations, speaker bookkeeping, JSONL ingestion and a synthetic generator.

Utterance positions are 1-based throughout, matching the usual notation
``u_1 .. u_N``. ``psi[i-1]`` holds the position of the most recent earlier
utterance by the same speaker (or ``None`` for a speaker's first turn), and
``windows[i-1]`` the inclusive range ``psi .. i-1`` of "local" utterances.

JSONL format, one dialogue per line::

    {"id": "d01", "utterances": [{"speaker": "A", "label": "joy",
                                  "features": [0.1, ...], "text": "hi"}]}

``text`` is optional. The label vocabulary file has one label per line; line
order defines label ids.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .tensor import make_rng

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or inconsistent conversation data."""


class EmptyDatasetError(DataError):
    pass


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    features: tuple[float, ...]
    gold_label: int
    text: Optional[str] = None


def _psi(speakers: Sequence[str]) -> tuple[Optional[int], ...]:
    last: dict[str, int] = {}
    out = []
    for i, s in enumerate(speakers, start=1):
        out.append(last.get(s))
        last[s] = i
    return tuple(out)


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]
    psi: tuple[Optional[int], ...] = field(init=False, repr=False, compare=False)
    windows: tuple[Optional[range], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.utterances:
            raise DataError(f"conversation {self.id!r} has no utterances")
        object.__setattr__(self, "utterances", tuple(self.utterances))
        psi = _psi([u.speaker for u in self.utterances])
        object.__setattr__(self, "psi", psi)
        object.__setattr__(
            self, "windows", tuple(None if p is None else range(p, i) for i, p in enumerate(psi, start=1))
        )
        if self.n_speakers == 1 and len(self.utterances) > 1:
            log.warning("conversation %s has a single speaker", self.id)

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def speakers(self) -> list[str]:
        return [u.speaker for u in self.utterances]

    @property
    def n_speakers(self) -> int:
        return len(set(self.speakers))

    @property
    def labels(self) -> list[int]:
        return [u.gold_label for u in self.utterances]

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        return np.array([u.features for u in self.utterances], dtype=np.float64)


def _check_position(conv: Conversation, i: int) -> None:
    if not 1 <= i <= len(conv):
        raise IndexError(f"utterance position {i} out of range 1..{len(conv)}")


def last_same_speaker(conv: Conversation, i: int) -> Optional[int]:
    """Largest ``j < i`` spoken by the same speaker as ``u_i``, else ``None``."""
    _check_position(conv, i)
    return conv.psi[i - 1]


def local_window(conv: Conversation, i: int) -> Optional[range]:
    """Positions ``psi(u_i) .. i-1`` (inclusive), or ``None`` when psi is absent."""
    _check_position(conv, i)
    return conv.windows[i - 1]


@dataclass(frozen=True)
class Dataset:
    conversations: tuple[Conversation, ...]
    label_vocab: tuple[str, ...]
    feature_dim: int
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "conversations", tuple(self.conversations))
        object.__setattr__(self, "label_vocab", tuple(self.label_vocab))
        L = len(self.label_vocab)
        for conv in self.conversations:
            for u in conv.utterances:
                if len(u.features) != self.feature_dim:
                    raise DataError(
                        f"{conv.id}: utterance {u.index} has {len(u.features)} features, expected {self.feature_dim}"
                    )
                if not 0 <= u.gold_label < L:
                    raise DataError(f"{conv.id}: utterance {u.index} label id {u.gold_label} outside vocab")

    def __len__(self) -> int:
        return len(self.conversations)

    @property
    def n_labels(self) -> int:
        return len(self.label_vocab)

    @property
    def n_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)

    def stats(self) -> dict:
        hist = {name: 0 for name in self.label_vocab}
        for c in self.conversations:
            for u in c.utterances:
                hist[self.label_vocab[u.gold_label]] += 1
        return {
            "split": self.split,
            "conversations": len(self.conversations),
            "utterances": self.n_utterances,
            "label_histogram": hist,
        }

    def by_id(self, conv_id: str) -> Conversation:
        for c in self.conversations:
            if c.id == conv_id:
                return c
        raise KeyError(f"no dialogue with id {conv_id!r} in {self.split} split")


# ---------------------------------------------------------------------------
# IO


def read_vocab(path: str | Path) -> tuple[str, ...]:
    names = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if not names:
        raise DataError(f"{path}: label vocabulary is empty")
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate labels in vocabulary")
    return tuple(names)


def write_vocab(path: str | Path, vocab: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{v}\n" for v in vocab), encoding="utf-8")


def _record_to_conversation(rec, lineno: int, vocab_index: Optional[dict], grow: Optional[list]) -> Conversation:
    if not isinstance(rec, dict) or "utterances" not in rec or "id" not in rec:
        raise DataError(f"line {lineno}: expected an object with 'id' and 'utterances'")
    utts = []
    for k, u in enumerate(rec["utterances"], start=1):
        try:
            speaker, label, feats = str(u["speaker"]), str(u["label"]), u["features"]
        except (KeyError, TypeError):
            raise DataError(f"line {lineno}: utterance {k} needs 'speaker', 'label' and 'features'") from None
        if vocab_index is not None and label not in vocab_index:
            if grow is None:
                raise DataError(f"line {lineno}: unknown label {label!r}")
            vocab_index[label] = len(grow)
            grow.append(label)
        utts.append(
            Utterance(k, speaker, tuple(float(x) for x in feats), vocab_index[label], u.get("text"))
        )
    try:
        return Conversation(str(rec["id"]), tuple(utts))
    except DataError as e:
        raise DataError(f"line {lineno}: {e}") from None


def parse_jsonl(path: str | Path, label_vocab: Optional[Sequence[str]] = None, split: str = "train") -> Dataset:
    """Load one split.

    With ``label_vocab`` given, labels outside it are an error; without it the
    vocabulary is built in order of first appearance.
    """
    vocab = list(label_vocab) if label_vocab is not None else []
    index = {name: i for i, name in enumerate(vocab)}
    grow = None if label_vocab is not None else vocab
    convs = []
    feature_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {lineno}: malformed JSON ({e.msg})") from None
            conv = _record_to_conversation(rec, lineno, index, grow)
            for u in conv.utterances:
                if feature_dim is None:
                    feature_dim = len(u.features)
                elif len(u.features) != feature_dim:
                    raise DataError(
                        f"{path}: line {lineno}: utterance {u.index} has {len(u.features)} features, "
                        f"expected {feature_dim}"
                    )
            convs.append(conv)
    if not convs:
        raise EmptyDatasetError(f"{path}: no conversations")
    return Dataset(tuple(convs), tuple(vocab), feature_dim, split)


def conversation_to_record(conv: Conversation, vocab: Sequence[str]) -> dict:
    utts = []
    for u in conv.utterances:
        rec = {"speaker": u.speaker, "label": vocab[u.gold_label], "features": list(u.features)}
        if u.text is not None:
            rec["text"] = u.text
        utts.append(rec)
    return {"id": conv.id, "utterances": utts}


def write_jsonl(path: str | Path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in dataset.conversations:
            fh.write(json.dumps(conversation_to_record(conv, dataset.label_vocab)))
            fh.write("\n")


def carve_validation(train: Dataset, last_n: int = 20) -> tuple[Dataset, Dataset]:
    """Split off the last ``last_n`` training conversations as a validation set."""
    if not 0 < last_n < len(train):
        raise DataError(f"cannot carve {last_n} validation dialogues from {len(train)}")
    keep, held = train.conversations[:-last_n], train.conversations[-last_n:]
    return (
        Dataset(keep, train.label_vocab, train.feature_dim, train.split),
        Dataset(held, train.label_vocab, train.feature_dim, "val"),
    )


def load_splits(data_dir: str | Path, val_from_train: int = 0) -> dict[str, Dataset]:
    """Read ``labels.txt`` plus whichever of train/val/test JSONL files exist."""
    root = Path(data_dir)
    vocab_path = root / "labels.txt"
    if not vocab_path.exists():
        raise FileNotFoundError(f"{vocab_path} not found (one label per line)")
    vocab = read_vocab(vocab_path)
    out = {}
    for split in ("train", "val", "test"):
        p = root / f"{split}.jsonl"
        if p.exists():
            out[split] = parse_jsonl(p, vocab, split)
    if val_from_train and "train" in out:
        out["train"], out["val"] = carve_validation(out["train"], val_from_train)
    return out


# ---------------------------------------------------------------------------
# synthetic conversations


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for :func:`generate_synthetic`.

    Each speaker carries a hidden mood. On every turn the speaker keeps its
    own mood with probability ``p_inertia``, copies the mood of the latest
    utterance by someone else with probability ``p_influence``, and otherwise
    draws a fresh mood. The emitted label is the mood, swapped for a different
    random label with probability ``noise_eps``. Features are the label's
    one-hot prototype plus N(0, sigma^2) noise.
    """

    n_dialogues: int = 100
    length_range: tuple[int, int] = (6, 12)
    n_speakers_range: tuple[int, int] = (2, 3)
    n_labels: int = 4
    p_inertia: float = 0.6
    p_influence: float = 0.2
    noise_eps: float = 0.05
    feature_dim: int = 32
    feature_noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        probs = {"p_inertia": self.p_inertia, "p_influence": self.p_influence, "noise_eps": self.noise_eps}
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise ValueError(f"{name}={p} is not a probability")
        if self.p_inertia + self.p_influence > 1.0 + 1e-12:
            raise ValueError(f"p_inertia + p_influence = {self.p_inertia + self.p_influence} exceeds 1")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad length range {self.length_range}")
        slo, shi = self.n_speakers_range
        if not 1 <= slo <= shi:
            raise ValueError(f"bad speaker range {self.n_speakers_range}")
        if self.n_labels < 2:
            raise ValueError("need at least 2 labels")
        if self.feature_dim < 1 or self.feature_noise_sigma < 0 or self.n_dialogues < 0:
            raise ValueError("feature_dim must be >= 1, sigma and n_dialogues >= 0")


def synthetic_vocab(n_labels: int) -> tuple[str, ...]:
    return tuple(f"emo{k}" for k in range(n_labels))


def _speaker_turns(rng: np.random.Generator, n: int, n_speakers: int) -> list[int]:
    # no speaker takes two turns in a row when there is anyone else to talk
    turns = [int(rng.integers(n_speakers))]
    for _ in range(n - 1):
        if n_speakers == 1:
            turns.append(0)
            continue
        nxt = int(rng.integers(n_speakers - 1))
        turns.append(nxt if nxt < turns[-1] else nxt + 1)
    return turns


def generate_synthetic(spec: SyntheticSpec, split: str = "train", id_prefix: str = "d") -> Dataset:
    rng = make_rng(spec.seed)
    L, d = spec.n_labels, spec.feature_dim
    convs = []
    width = max(2, len(str(spec.n_dialogues)))
    for k in range(spec.n_dialogues):
        n = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        s = int(rng.integers(spec.n_speakers_range[0], spec.n_speakers_range[1] + 1))
        turns = _speaker_turns(rng, n, s)
        mood = [int(m) for m in rng.integers(L, size=s)]
        history: list[tuple[int, int]] = []  # (speaker, mood) per emitted turn
        utts = []
        for i, spk in enumerate(turns, start=1):
            r = rng.random()
            if r < spec.p_inertia:
                pass
            elif r < spec.p_inertia + spec.p_influence:
                other = next((m for who, m in reversed(history) if who != spk), None)
                if other is not None:
                    mood[spk] = other
            else:
                mood[spk] = int(rng.integers(L))
            history.append((spk, mood[spk]))
            label = mood[spk]
            if rng.random() < spec.noise_eps:
                label = (label + 1 + int(rng.integers(L - 1))) % L
            feats = rng.normal(0.0, spec.feature_noise_sigma, size=d)
            feats[label % d] += 1.0
            utts.append(Utterance(i, f"s{spk}", tuple(float(x) for x in feats), label))
        convs.append(Conversation(f"{id_prefix}{k + 1:0{width}d}", tuple(utts)))
    return Dataset(tuple(convs), synthetic_vocab(L), d, split)
