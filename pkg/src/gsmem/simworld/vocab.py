"""Label vocabulary, aliases, semantic tags and the synthetic embedding table."""
from __future__ import annotations

import hashlib

import numpy as np
from scipy.linalg import hadamard

# label -> semantic tags; 64 canonical labels
LABEL_TAGS: dict[str, tuple[str, ...]] = {
    "wall": ("structure",),
    "floor": ("structure",),
    "chair": ("furniture", "seating"),
    "sofa": ("furniture", "seating"),
    "stool": ("furniture", "seating"),
    "bench": ("furniture", "seating"),
    "armchair": ("furniture", "seating"),
    "table": ("furniture", "surface"),
    "desk": ("furniture", "surface", "office"),
    "nightstand": ("furniture", "surface", "bedroom"),
    "bed": ("furniture", "bedroom"),
    "pillow": ("bedroom", "soft"),
    "blanket": ("bedroom", "soft"),
    "wardrobe": ("furniture", "storage", "bedroom"),
    "cabinet": ("furniture", "storage"),
    "bookshelf": ("furniture", "storage", "office"),
    "drawer": ("storage",),
    "box": ("storage",),
    "basket": ("storage",),
    "suitcase": ("storage", "travel"),
    "backpack": ("storage", "travel"),
    "refrigerator": ("appliance", "kitchen"),
    "oven": ("appliance", "kitchen"),
    "microwave": ("appliance", "kitchen"),
    "dishwasher": ("appliance", "kitchen"),
    "toaster": ("appliance", "kitchen"),
    "kettle": ("appliance", "kitchen"),
    "sink": ("kitchen", "bathroom"),
    "stove": ("appliance", "kitchen"),
    "mug": ("kitchenware", "kitchen"),
    "bowl": ("kitchenware", "kitchen"),
    "plate": ("kitchenware", "kitchen"),
    "bottle": ("kitchenware",),
    "vase": ("decor",),
    "lamp": ("decor", "lighting"),
    "clock": ("decor",),
    "painting": ("decor",),
    "mirror": ("decor", "bathroom"),
    "rug": ("decor", "soft"),
    "curtain": ("decor", "soft"),
    "plant": ("decor", "plant"),
    "flowerpot": ("decor", "plant"),
    "television": ("electronics",),
    "laptop": ("electronics", "office"),
    "monitor": ("electronics", "office"),
    "printer": ("electronics", "office"),
    "speaker": ("electronics",),
    "keyboard": ("electronics", "office"),
    "toilet": ("bathroom",),
    "bathtub": ("bathroom",),
    "towel": ("bathroom", "soft"),
    "shower": ("bathroom",),
    "washer": ("appliance", "laundry"),
    "dryer": ("appliance", "laundry"),
    "trashcan": ("utility",),
    "bucket": ("utility",),
    "ladder": ("utility",),
    "fan": ("appliance",),
    "heater": ("appliance",),
    "guitar": ("toy", "music"),
    "piano": ("music", "furniture"),
    "ball": ("toy",),
    "teddybear": ("toy", "soft"),
    "globe": ("decor", "office"),
}

ALIASES: dict[str, str] = {
    "couch": "sofa",
    "tv": "television",
    "fridge": "refrigerator",
    "cup": "mug",
    "trash can": "trashcan",
    "garbage can": "trashcan",
    "bin": "trashcan",
    "teddy bear": "teddybear",
    "plant pot": "flowerpot",
    "washing machine": "washer",
    "bookcase": "bookshelf",
    "computer": "laptop",
    "carpet": "rug",
}

VOCABULARY: tuple[str, ...] = tuple(LABEL_TAGS)

COLOR_NAMES: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.12, 0.12),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.92, 0.85, 0.15),
    "orange": (0.95, 0.55, 0.1),
    "purple": (0.55, 0.2, 0.7),
    "cyan": (0.1, 0.8, 0.85),
    "pink": (0.95, 0.5, 0.7),
    "black": (0.08, 0.08, 0.08),
    "brown": (0.45, 0.28, 0.12),
    "white": (0.95, 0.95, 0.95),
    "teal": (0.0, 0.5, 0.5),
}


def canonical(label: str) -> str:
    key = " ".join(label.lower().strip().split())
    return ALIASES.get(key, key)


def tags_of(label: str) -> tuple[str, ...]:
    return LABEL_TAGS.get(canonical(label), ())


def _label_seed(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


class EmbeddingTable:
    """Deterministic label -> unit vector map.

    Vocabulary labels take rows of two mutually unbiased orthonormal bases
    (identity and normalized Hadamard), so any two distinct vocabulary labels
    have |cos| <= 1/sqrt(dim). The whole table is then rotated by a fixed
    orthogonal matrix. Labels outside the vocabulary get hash-seeded vectors.
    """

    def __init__(self, dim: int = 32, seed: int = 7):
        if dim & (dim - 1):
            raise ValueError("embedding dimension must be a power of two")
        self.dim = dim
        basis = np.concatenate([np.eye(dim), hadamard(dim) / np.sqrt(dim)])
        q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, dim)))
        rot = q * np.sign(np.diag(r))
        rows = basis @ rot.T
        self._table = {label: rows[i] for i, label in enumerate(VOCABULARY[: len(rows)])}

    def __call__(self, label: str) -> np.ndarray:
        key = canonical(label)
        v = self._table.get(key)
        if v is None:
            v = np.random.default_rng(_label_seed(key)).normal(size=self.dim)
            v = v / np.linalg.norm(v)
        return v.copy()
