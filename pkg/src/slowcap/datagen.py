"""Synthetic captioned-shapes corpus.

Each scene holds 1-5 colored shapes on a gray canvas. Every image gets three
references of clearly different length (terse, sized, verbose) so that the
trained captioner faces both the across-image and the within-image length
variance that makes decode length hard to bound in advance.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

CANVAS = 32
BACKGROUND = (0.5, 0.5, 0.5)
KINDS = ("circle", "square", "triangle")
# mid-range channel values keep pixels away from the tanh saturation region
COLORS = {
    "red": (0.8, 0.2, 0.2),
    "green": (0.2, 0.7, 0.25),
    "blue": (0.2, 0.3, 0.8),
    "yellow": (0.85, 0.8, 0.2),
    "purple": (0.6, 0.25, 0.7),
    "orange": (0.9, 0.55, 0.15),
    "white": (0.9, 0.9, 0.9),
    "black": (0.1, 0.1, 0.1),
}
SIZES = {3: "small", 4: "small", 5: "medium", 6: "large", 7: "large"}
NUMBERS = {2: "two", 3: "three", 4: "four", 5: "five"}
MAX_SHAPES = 5
MIN_FREQUENCY = 5
DEFAULT_MAX_LEN = 60

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
RESERVED = (PAD, SOS, EOS, UNK)


@dataclass(frozen=True)
class Shape:
    kind: str
    color: str
    cx: int
    cy: int
    size: int  # half-extent in pixels


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    shapes: tuple = ()
    canvas: int = CANVAS

    def __post_init__(self):
        if len(self.shapes) > MAX_SHAPES:
            raise ValueError(f"at most {MAX_SHAPES} shapes per scene")
        for s in self.shapes:
            if s.kind not in KINDS or s.color not in COLORS:
                raise ValueError(f"unknown shape {s}")
            if not (s.size <= s.cx <= self.canvas - s.size and s.size <= s.cy <= self.canvas - s.size):
                raise ValueError(f"{s} does not fit inside a {self.canvas}px canvas")


@dataclass
class Vocabulary:
    tokens: list
    min_frequency: int = MIN_FREQUENCY

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        for t in RESERVED:
            if t not in self.index:
                raise ValueError(f"vocabulary lacks reserved token {t}")

    @classmethod
    def build(cls, captions, min_frequency=MIN_FREQUENCY):
        counts = Counter(tok for cap in captions for tok in cap)
        kept = sorted(t for t, c in counts.items() if c >= min_frequency and t not in RESERVED)
        return cls(list(RESERVED) + kept, min_frequency)

    def __len__(self):
        return len(self.tokens)

    @property
    def pad(self):
        return self.index[PAD]

    @property
    def sos(self):
        return self.index[SOS]

    @property
    def eos(self):
        return self.index[EOS]

    @property
    def unk(self):
        return self.index[UNK]

    def encode(self, words):
        """Word list -> ids framed by SOS ... EOS; unknown words map to UNK."""
        return [self.sos] + [self.index.get(w, self.unk) for w in words] + [self.eos]

    def decode(self, ids):
        """Ids -> words, dropping reserved markers and stopping at EOS."""
        words = []
        for i in ids:
            if i == self.eos:
                break
            if i in (self.sos, self.pad):
                continue
            words.append(self.tokens[i])
        return words


@dataclass
class CaptionedExample:
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    captions: list  # list of word lists
    scene: SceneSpec = field(repr=False, default=None)


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    vocab: Vocabulary
    seed: int


# -- rendering -----------------------------------------------------------------


def _shape_mask(shape, canvas):
    ys, xs = np.mgrid[0:canvas, 0:canvas] + 0.5
    dx, dy = xs - shape.cx, ys - shape.cy
    r = shape.size
    if shape.kind == "circle":
        return dx * dx + dy * dy <= r * r
    if shape.kind == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    # upward isosceles triangle: apex at (cx, cy - r), base on y = cy + r
    t = (dy + r) / (2.0 * r)
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= t * r)


def render(scene: SceneSpec) -> np.ndarray:
    """Rasterize a scene to a (3, canvas, canvas) float64 image; later shapes paint over earlier ones."""
    img = np.empty((3, scene.canvas, scene.canvas))
    img[:] = np.asarray(BACKGROUND)[:, None, None]
    for s in scene.shapes:
        mask = _shape_mask(s, scene.canvas)
        for c, v in enumerate(COLORS[s.color]):
            img[c][mask] = v
    return img


def random_scene(rng, seed=0, canvas=CANVAS) -> SceneSpec:
    n = int(rng.integers(1, MAX_SHAPES + 1))
    shapes = []
    for _ in range(n):
        size = int(rng.integers(3, 8))
        shapes.append(
            Shape(
                kind=KINDS[rng.integers(len(KINDS))],
                color=list(COLORS)[rng.integers(len(COLORS))],
                cx=int(rng.integers(size, canvas - size + 1)),
                cy=int(rng.integers(size, canvas - size + 1)),
                size=size,
            )
        )
    return SceneSpec(seed=seed, shapes=tuple(shapes), canvas=canvas)


# -- captions --------------------------------------------------------------------


def _place(coord, canvas, names):
    return names[min(int(3 * coord / canvas), 2)]


def _join(items, final_sep="and", sep=None):
    words = []
    for i, item in enumerate(items):
        if i:
            words.append(final_sep if (sep is None or i == len(items) - 1) else sep)
        words.extend(item)
    return words


def caption_grammar(scene: SceneSpec, max_len=DEFAULT_MAX_LEN):
    """Return [terse, sized, verbose] references for a scene.

    terse   : "a red circle and a blue square ."              4k tokens
    sized   : "a small red circle and a large blue square ."   5k tokens
    verbose : "there are two shapes : a small red circle in the top left ,
               ... and a large blue square in the bottom right ."  9k + 5 tokens
              (single shape: "there is a ... ." with 11 tokens)
    All references are clipped to max_len - 2 words.
    """
    shapes = scene.shapes
    if not shapes:
        return [["nothing", "."]]
    terse = _join([["a", s.color, s.kind] for s in shapes]) + ["."]
    sized = _join([["a", SIZES[s.size], s.color, s.kind] for s in shapes]) + ["."]
    located = [
        [
            "a",
            SIZES[s.size],
            s.color,
            s.kind,
            "in",
            "the",
            _place(s.cy, scene.canvas, ("top", "middle", "bottom")),
            _place(s.cx, scene.canvas, ("left", "center", "right")),
        ]
        for s in shapes
    ]
    if len(shapes) == 1:
        verbose = ["there", "is"] + located[0] + ["."]
    else:
        head = ["there", "are", NUMBERS[len(shapes)], "shapes", ":"]
        verbose = head + _join(located, sep=",") + ["."]
    limit = max_len - 2
    return [cap[:limit] for cap in (terse, sized, verbose)]


# -- corpus -------------------------------------------------------------------------


def make_example(seed, split_id, index, canvas=CANVAS):
    rng = np.random.default_rng([seed, split_id, index])
    scene = random_scene(rng, seed=seed, canvas=canvas)
    return CaptionedExample(image=render(scene), captions=caption_grammar(scene), scene=scene)


def generate_dataset(seed, n_train, n_val, n_test, min_frequency=MIN_FREQUENCY) -> Dataset:
    """Deterministic train/val/test splits plus a vocabulary built on train.

    Each example draws from its own generator seeded by (seed, split, index),
    so examples are independent of how many others are generated.
    """
    for name, n in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if n <= 0:
            raise ValueError(f"{name} must be positive, got {n}")
    splits = [[make_example(seed, sid, i) for i in range(n)] for sid, n in enumerate((n_train, n_val, n_test))]
    vocab = Vocabulary.build((c for ex in splits[0] for c in ex.captions), min_frequency)
    return Dataset(*splits, vocab=vocab, seed=seed)


def caption_lengths(examples):
    return [len(c) for ex in examples for c in ex.captions]


# -- files --------------------------------------------------------------------------
# <split>.jsonl holds one record per example (captions, scene, image offset);
# <split>.f64 is the raw little-endian float64 image sidecar; manifest.json
# records seed, counts and vocabulary.

SPLITS = ("train", "val", "test")


def save_dataset(ds: Dataset, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SPLITS:
        examples = getattr(ds, name)
        with open(out / f"{name}.f64", "wb") as fh:
            for ex in examples:
                fh.write(np.ascontiguousarray(ex.image, dtype="<f8").tobytes())
        with open(out / f"{name}.jsonl", "w") as fh:
            for i, ex in enumerate(examples):
                record = {
                    "index": i,
                    "image_shape": list(ex.image.shape),
                    "captions": [" ".join(c) for c in ex.captions],
                    "scene": asdict(ex.scene) if ex.scene is not None else None,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        written += [out / f"{name}.f64", out / f"{name}.jsonl"]
    manifest = {
        "format": 1,
        "seed": ds.seed,
        "counts": {name: len(getattr(ds, name)) for name in SPLITS},
        "vocabulary": ds.vocab.tokens,
        "min_frequency": ds.vocab.min_frequency,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(out / "manifest.json")
    return written


def _scene_from_dict(d):
    if d is None:
        return None
    return SceneSpec(seed=d["seed"], shapes=tuple(Shape(**s) for s in d["shapes"]), canvas=d["canvas"])


def load_split(data_dir, name):
    data_dir = Path(data_dir)
    raw = np.fromfile(data_dir / f"{name}.f64", dtype="<f8")
    examples = []
    offset = 0
    with open(data_dir / f"{name}.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            shape = tuple(rec["image_shape"])
            n = int(np.prod(shape))
            if offset + n > raw.size:
                raise CheckpointError(f"{name}.f64 is shorter than its index implies")
            image = raw[offset : offset + n].reshape(shape).astype(np.float64)
            offset += n
            examples.append(
                CaptionedExample(
                    image=image,
                    captions=[c.split() for c in rec["captions"]],
                    scene=_scene_from_dict(rec["scene"]),
                )
            )
    if offset != raw.size:
        raise CheckpointError(f"{name}.f64 has {raw.size - offset} trailing values")
    return examples


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    vocab = Vocabulary(manifest["vocabulary"], manifest["min_frequency"])
    splits = [load_split(data_dir, name) for name in SPLITS]
    return Dataset(*splits, vocab=vocab, seed=manifest["seed"])
