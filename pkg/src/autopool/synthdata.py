"""Seeded synthetic multi-label event-detection bags.

Each bag is a clip of ``bag_duration`` seconds sampled at ``frame_rate``
frames per second.  For every class a Poisson number of events is drawn and
placed uniformly inside the clip; frames whose midpoint falls inside an
event are active.  Features are Gaussian noise plus, on each active frame,
the class template scaled by its gain.  Weak labels follow a minimum
active-fraction rule.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidConfigError, InvalidInputError

SPLITS = ("train", "validation", "test")
DATASET_FORMAT = "autopool-dataset"


@dataclass(frozen=True)
class DurationDist:
    kind: str
    lo: float
    hi: float | None = None

    @classmethod
    def fixed(cls, seconds):
        return cls("fixed", float(seconds))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", float(lo), float(hi))

    @classmethod
    def parse(cls, text):
        """``fixed:2.0`` or ``uniform:0.5:3.0``."""
        parts = str(text).strip().split(":")
        try:
            if parts[0] == "fixed" and len(parts) == 2:
                return cls.fixed(parts[1])
            if parts[0] == "uniform" and len(parts) == 3:
                return cls.uniform(parts[1], parts[2])
        except ValueError:
            pass
        raise InvalidConfigError(f"cannot parse duration distribution {text!r}")

    @property
    def max_duration(self):
        return self.lo if self.kind == "fixed" else self.hi

    def sample(self, rng):
        if self.kind == "fixed":
            return self.lo
        return rng.uniform(self.lo, self.hi)

    def __str__(self):
        if self.kind == "fixed":
            return f"fixed:{self.lo!r}"
        return f"uniform:{self.lo!r}:{self.hi!r}"


@dataclass
class ClassProfile:
    name: str
    event_rate: float
    duration: DurationDist
    feature_template: np.ndarray
    template_gain: float = 1.0


@dataclass
class SynthConfig:
    profiles: list
    num_bags: dict = field(default_factory=lambda: {"train": 100, "validation": 20, "test": 20})
    bag_duration: float = 10.0
    frame_rate: float = 2.7
    noise_sigma: float = 1.0
    weak_label_min_active: float = 0.10
    seed: int = 0

    @property
    def feature_dim(self):
        return len(self.profiles[0].feature_template)

    @property
    def n_frames(self):
        return int(round(self.frame_rate * self.bag_duration))

    @property
    def class_names(self):
        return [p.name for p in self.profiles]

    def validate(self):
        if not self.profiles:
            raise InvalidConfigError("at least one class profile is required")
        if self.frame_rate <= 0 or self.bag_duration <= 0 or self.n_frames < 1:
            raise InvalidConfigError("frame_rate * bag_duration must give at least one frame")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be >= 0")
        if not 0.0 <= self.weak_label_min_active <= 1.0:
            raise InvalidConfigError("weak_label_min_active must lie in [0, 1]")
        dims = {len(p.feature_template) for p in self.profiles}
        if len(dims) != 1 or 0 in dims:
            raise InvalidConfigError("all feature templates must share one positive length")
        if len({p.name for p in self.profiles}) != len(self.profiles):
            raise InvalidConfigError("class names must be unique")
        for p in self.profiles:
            if p.event_rate < 0:
                raise InvalidConfigError(f"{p.name}: event_rate must be >= 0")
            if p.template_gain <= 0:
                raise InvalidConfigError(f"{p.name}: template_gain must be > 0")
            d = p.duration
            if d.lo <= 0 or d.max_duration > self.bag_duration or (d.hi is not None and d.hi < d.lo):
                raise InvalidConfigError(
                    f"{p.name}: durations must lie in (0, bag_duration = {self.bag_duration}]")
        for split in SPLITS:
            if self.num_bags.get(split, 0) < 0:
                raise InvalidConfigError(f"num_bags[{split}] must be >= 0")

    def to_dict(self):
        return {
            "bag_duration": self.bag_duration,
            "frame_rate": self.frame_rate,
            "noise_sigma": self.noise_sigma,
            "weak_label_min_active": self.weak_label_min_active,
            "seed": self.seed,
            "num_bags": {s: int(self.num_bags.get(s, 0)) for s in SPLITS},
            "profiles": [
                {"name": p.name, "event_rate": p.event_rate, "duration": str(p.duration),
                 "template_gain": p.template_gain,
                 "feature_template": [float(v) for v in p.feature_template]}
                for p in self.profiles
            ],
        }

    @classmethod
    def from_dict(cls, d):
        profiles = [ClassProfile(p["name"], float(p["event_rate"]), DurationDist.parse(p["duration"]),
                                 np.asarray(p["feature_template"], dtype=np.float64),
                                 float(p["template_gain"])) for p in d["profiles"]]
        return cls(profiles, dict(d["num_bags"]), float(d["bag_duration"]), float(d["frame_rate"]),
                   float(d["noise_sigma"]), float(d["weak_label_min_active"]), int(d["seed"]))


@dataclass
class Bag:
    features: np.ndarray
    weak_labels: np.ndarray
    strong_labels: np.ndarray | None
    bag_id: str

    @property
    def size(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    splits: dict
    class_names: list
    frame_rate: float
    bag_duration: float
    config: dict = field(default_factory=dict)

    def __getitem__(self, split):
        return self.splits[split]


def orthogonal_templates(n_classes, dim, seed):
    """Rows of a seeded random orthogonal matrix (requires ``n_classes <= dim``)."""
    if n_classes > dim:
        raise InvalidConfigError("orthogonal templates need feature_dim >= number of classes")
    q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, dim)))
    return q[:n_classes].copy()


def weak_from_strong(strong, min_active):
    """Weak label per class: at least one active frame and active fraction >= min_active."""
    strong = np.asarray(strong)
    return ((strong.sum(axis=0) > 0) & (strong.mean(axis=0) >= min_active)).astype(np.int8)


def _generate_bag(config, rng, bag_id):
    m, n_classes = config.n_frames, len(config.profiles)
    mids = (np.arange(m) + 0.5) / config.frame_rate
    strong = np.zeros((m, n_classes), dtype=np.int8)
    for c, prof in enumerate(config.profiles):
        for _ in range(rng.poisson(prof.event_rate)):
            dur = prof.duration.sample(rng)
            onset = rng.uniform(0.0, config.bag_duration - dur)
            offset = min(onset + dur, config.bag_duration)
            strong[(mids >= onset) & (mids < offset), c] = 1
    features = rng.normal(0.0, config.noise_sigma, size=(m, config.feature_dim)) if config.noise_sigma > 0 \
        else np.zeros((m, config.feature_dim))
    for c, prof in enumerate(config.profiles):
        features += strong[:, c:c + 1] * (prof.template_gain * prof.feature_template)
    return Bag(features, weak_from_strong(strong, config.weak_label_min_active), strong, bag_id)


def generate(config):
    """Generate train/validation/test splits; each split has its own sub-seed."""
    config.validate()
    seeds = np.random.SeedSequence(config.seed).spawn(len(SPLITS))
    splits = {}
    for split, ss in zip(SPLITS, seeds):
        rng = np.random.default_rng(ss)
        splits[split] = [_generate_bag(config, rng, f"{split}-{i:05d}")
                         for i in range(int(config.num_bags.get(split, 0)))]
    return Dataset(splits, config.class_names, config.frame_rate, config.bag_duration,
                   config.to_dict())


def _runs(column):
    padded = np.concatenate([[0], column.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return edges[1::2] - edges[::2]


def summarize_durations(bags, class_names, frame_rate):
    """Mean/min/max contiguous-event duration (seconds) per class.

    Classes without any event map to an empty dict.
    """
    out = {}
    for c, name in enumerate(class_names):
        lengths = []
        for bag in bags:
            if bag.strong_labels is None:
                raise InvalidInputError(f"bag {bag.bag_id} has no strong labels")
            lengths.extend(_runs(bag.strong_labels[:, c]))
        if not lengths:
            out[name] = {}
            continue
        secs = np.asarray(lengths) / frame_rate
        out[name] = {"count": len(lengths), "mean": float(secs.mean()),
                     "min": float(secs.min()), "max": float(secs.max())}
    return out


# -- presets -----------------------------------------------------------------

def sparse_short(seed=0, num_bags=(2000, 500, 500), n_classes=5, feature_dim=10,
                 noise_sigma=1.0, gain=2.0, event_rate=0.7):
    """Short events (at most 30% of a 10 s clip), like clipped urban soundscapes."""
    templates = orthogonal_templates(n_classes, feature_dim, seed + 7919)
    profiles = [ClassProfile(f"short{c}", event_rate, DurationDist.uniform(1.0, 3.0), templates[c], gain)
                for c in range(n_classes)]
    return SynthConfig(profiles, dict(zip(SPLITS, num_bags)), 10.0, 2.7, noise_sigma, 0.10, seed)


def dense_long(seed=0, num_bags=(2000, 500, 500), n_classes=5, feature_dim=10,
               noise_sigma=1.0, gain=2.0, event_rate=0.7):
    """Long events covering 40% up to all of the clip."""
    templates = orthogonal_templates(n_classes, feature_dim, seed + 7919)
    profiles = [ClassProfile(f"long{c}", event_rate, DurationDist.uniform(4.0, 10.0), templates[c], gain)
                for c in range(n_classes)]
    return SynthConfig(profiles, dict(zip(SPLITS, num_bags)), 10.0, 2.7, noise_sigma, 0.10, seed)


PRESETS = {"sparse-short": sparse_short, "dense-long": dense_long}


# -- files -------------------------------------------------------------------

def _bag_to_json(bag):
    return json.dumps({
        "bag_id": bag.bag_id,
        "shape": list(bag.features.shape),
        "features": [float(v) for v in bag.features.ravel()],
        "weak_labels": [int(v) for v in bag.weak_labels],
        "strong_labels": None if bag.strong_labels is None
        else [int(v) for v in bag.strong_labels.ravel()],
    })


def _bag_from_json(line, n_classes):
    d = json.loads(line)
    m, dim = d["shape"]
    strong = None if d["strong_labels"] is None else \
        np.asarray(d["strong_labels"], dtype=np.int8).reshape(m, n_classes)
    return Bag(np.asarray(d["features"], dtype=np.float64).reshape(m, dim),
               np.asarray(d["weak_labels"], dtype=np.int8), strong, d["bag_id"])


def write_dataset(directory, dataset):
    """One JSON-lines file per split plus a ``dataset.json`` sidecar manifest."""
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for split, bags in dataset.splits.items():
        paths[split] = os.path.join(directory, f"{split}.jsonl")
        with open(paths[split], "w") as fh:
            for bag in bags:
                fh.write(_bag_to_json(bag))
                fh.write("\n")
    manifest = {
        "format": DATASET_FORMAT,
        "version": 1,
        "class_names": dataset.class_names,
        "frame_rate": dataset.frame_rate,
        "bag_duration": dataset.bag_duration,
        "seed": dataset.config.get("seed"),
        "config": dataset.config,
        "files": {s: f"{s}.jsonl" for s in dataset.splits},
        "splits": {s: [b.bag_id for b in bags] for s, bags in dataset.splits.items()},
    }
    paths["manifest"] = os.path.join(directory, "dataset.json")
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return paths


def read_dataset(directory):
    with open(os.path.join(directory, "dataset.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise InvalidInputError(f"{directory} does not hold an autopool dataset")
    n_classes = len(manifest["class_names"])
    splits = {}
    for split, fname in manifest["files"].items():
        with open(os.path.join(directory, fname)) as fh:
            splits[split] = [_bag_from_json(line, n_classes) for line in fh if line.strip()]
    return Dataset(splits, manifest["class_names"], manifest["frame_rate"],
                   manifest["bag_duration"], manifest.get("config", {}))

