"""Synthetic rooms of colored boxes, templated referring expressions and the
on-disk dataset layout (``manifest.json`` + ``scenes/scene_<k>.json``)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import SceneCloud
from .model import CATEGORIES, COMPONENTS, Expression

FORMAT_VERSION = 1
MAX_TOKENS = 80

CLASSES = ("chair", "table", "cabinet", "lamp", "sofa", "bin")
PLURALS = {c: c + "s" for c in CLASSES}
SHADES = ("dark", "light")
# base hue per class; shade scales toward black or white
CLASS_RGB = {
    "chair": (0.85, 0.20, 0.20),
    "table": (0.20, 0.70, 0.25),
    "cabinet": (0.20, 0.30, 0.85),
    "lamp": (0.90, 0.80, 0.15),
    "sofa": (0.60, 0.20, 0.75),
    "bin": (0.15, 0.70, 0.75),
}
CLASS_SIZE = {  # width, depth, height in meters
    "chair": (0.5, 0.5, 0.9),
    "table": (1.0, 0.7, 0.75),
    "cabinet": (0.6, 0.5, 1.2),
    "lamp": (0.3, 0.3, 1.5),
    "sofa": (1.4, 0.8, 0.8),
    "bin": (0.35, 0.35, 0.45),
}
FLOOR_RGB = (0.5, 0.5, 0.5)

VOCABULARY = (
    ("<unk>", "the", "a", "find", "all", "every", "it", "is", "that", "object", ",", ".")
    + CLASSES
    + tuple(PLURALS[c] for c in CLASSES)
    + SHADES
    + ("near", "next", "to", "beside", "by", "one")
)
TOKEN_ID = {w: i for i, w in enumerate(VOCABULARY)}


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    num_scenes: int = 8
    instances_per_scene: tuple[int, int] = (4, 5)
    classes: tuple[str, ...] = CLASSES
    points_per_instance: tuple[int, int] = (60, 100)
    floor_points: int = 160
    room_extent: float = 4.0
    superpoint_pitch: float = 0.5
    floor_pitch: float = 2.0
    samples_per_scene: int = 5
    num_samples: int | None = None  # total; None means num_scenes * samples_per_scene
    category_mix: dict = field(default_factory=lambda: {c: 0.2 for c in CATEGORIES})
    val_fraction: float = 0.0
    color_noise: float = 0.03
    max_place_tries: int = 500

    def __post_init__(self):
        self.instances_per_scene = tuple(self.instances_per_scene)
        self.points_per_instance = tuple(self.points_per_instance)
        self.classes = tuple(self.classes)
        self.validate()

    def validate(self) -> None:
        lo, hi = self.instances_per_scene
        if not 3 <= lo <= hi:
            raise ValueError("instances_per_scene needs 3 <= lo <= hi")
        if hi > len(self.classes) + 1:
            raise ValueError("more instances requested than the class list can support")
        if self.num_scenes < 1 or self.samples_per_scene < 1 or self.floor_points < 1:
            raise ValueError("counts must be positive")
        if min(self.points_per_instance) < 1 or self.points_per_instance[0] > self.points_per_instance[1]:
            raise ValueError("bad points_per_instance range")
        unknown = set(self.classes) - set(CLASSES)
        if unknown:
            raise ValueError(f"classes outside the vocabulary: {sorted(unknown)}")
        if set(self.category_mix) - set(CATEGORIES):
            raise ValueError(f"unknown categories in mix: {sorted(set(self.category_mix) - set(CATEGORIES))}")
        if any(v < 0 for v in self.category_mix.values()) or abs(sum(self.category_mix.values()) - 1.0) > 1e-9:
            raise ValueError("category_mix proportions must be nonnegative and sum to 1")
        if self.num_samples is not None and self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["instances_per_scene"] = list(self.instances_per_scene)
        d["points_per_instance"] = list(self.points_per_instance)
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown GenConfig keys: {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# scenes


def shade_rgb(cls_name: str, shade: str) -> np.ndarray:
    base = np.array(CLASS_RGB[cls_name])
    return base * 0.45 if shade == "dark" else base + (1.0 - base) * 0.55


def _pick_classes(cfg: GenConfig, rng: np.random.Generator, k: int) -> list[tuple[str, str]]:
    # One class twice in both shades and one class exactly once, so every
    # category can be phrased in every scene; the rest avoid the singleton class.
    names = list(cfg.classes)
    order = rng.permutation(len(names))
    dup, single = names[order[0]], names[order[1]]
    first = SHADES[int(rng.integers(2))]
    chosen = [(dup, first), (dup, SHADES[1 - SHADES.index(first)]), (single, SHADES[int(rng.integers(2))])]
    # extras avoid the duplicated class (keeps one shade unique there), the
    # singleton, and one class left absent for zero-target phrasing
    absent = names[order[-1]]
    pool = [n for n in names if n not in (dup, single, absent)] or [n for n in names if n not in (dup, single)]
    while len(chosen) < k:
        chosen.append((pool[int(rng.integers(len(pool)))], SHADES[int(rng.integers(2))]))
    return chosen


def _place_boxes(cfg: GenConfig, rng: np.random.Generator, kinds) -> list[tuple[np.ndarray, np.ndarray]]:
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    gap = 0.1
    for name, _ in kinds:
        size = np.array(CLASS_SIZE[name]) * rng.uniform(0.85, 1.15, size=3)
        if rng.random() < 0.5:  # rotate footprint by 90 degrees
            size[[0, 1]] = size[[1, 0]]
        for _ in range(cfg.max_place_tries):
            lo_xy = rng.uniform(0.0, cfg.room_extent - size[:2])
            lo = np.array([lo_xy[0], lo_xy[1], 0.02])
            hi = lo + size
            if all(np.any(lo[:2] > bh[:2] + gap) or np.any(hi[:2] < bl[:2] - gap) for bl, bh in boxes):
                boxes.append((lo, hi))
                break
        else:
            raise GenerationError(f"could not place a {name} without overlap after {cfg.max_place_tries} tries")
    return boxes


def _superpoints(positions: np.ndarray, instance_id: np.ndarray, pitch: float, floor_pitch: float) -> np.ndarray:
    cell = np.where(instance_id[:, None] >= 0, np.floor(positions / pitch), np.floor(positions / floor_pitch))
    keys = np.concatenate([instance_id[:, None].astype(np.float64), cell], axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64)


def generate_scene(cfg: GenConfig, index: int) -> SceneCloud:
    """Deterministic in ``(cfg.seed, index)``."""
    rng = np.random.default_rng([cfg.seed, index, 0])
    k = int(rng.integers(cfg.instances_per_scene[0], cfg.instances_per_scene[1] + 1))
    kinds = _pick_classes(cfg, rng, k)
    boxes = _place_boxes(cfg, rng, kinds)

    pos, col, inst = [], [], []
    n_floor = cfg.floor_points
    floor = np.column_stack([rng.uniform(0, cfg.room_extent, size=(n_floor, 2)), np.zeros(n_floor)])
    pos.append(floor)
    col.append(np.array(FLOOR_RGB) + rng.normal(0, cfg.color_noise, size=(n_floor, 3)))
    inst.append(np.full(n_floor, -1))
    centers, meta = [], []
    for i, ((name, shade), (lo, hi)) in enumerate(zip(kinds, boxes)):
        n = int(rng.integers(cfg.points_per_instance[0], cfg.points_per_instance[1] + 1))
        pos.append(rng.uniform(lo, hi, size=(n, 3)))
        col.append(shade_rgb(name, shade) + rng.normal(0, cfg.color_noise, size=(n, 3)))
        inst.append(np.full(n, i))
        centers.append((lo + hi) / 2)
        meta.append({"class_name": name, "shade": shade, "bbox_min": lo.tolist(), "bbox_max": hi.tolist()})
    positions = np.concatenate(pos)
    instance_id = np.concatenate(inst)
    return SceneCloud(
        positions=positions,
        colors=np.clip(np.concatenate(col), 0.0, 1.0),
        superpoint_id=_superpoints(positions, instance_id, cfg.superpoint_pitch, cfg.floor_pitch),
        instance_id=instance_id,
        instance_class=np.array([CLASSES.index(n) for n, _ in kinds]),
        instance_center=np.array(centers),
        name=f"scene_{index}",
        meta={"instances": meta},
    )


# ---------------------------------------------------------------------------
# expressions


def _tokens(words: list[tuple[str, str | None]], targets, category, mentioned) -> Expression:
    labels: dict[str, list[int]] = {c: [] for c in COMPONENTS}
    for pos, (_, comp) in enumerate(words):
        if comp is not None:
            labels[comp].append(pos)
    return Expression(
        token_ids=[TOKEN_ID[w] for w, _ in words],
        labels=labels,
        target_instance_ids=sorted(targets),
        category=category,
        mentioned_class=CLASSES.index(mentioned),
        text=" ".join(w for w, _ in words),
    )


def _relation_tail(scene: SceneCloud, anchor: str, rng, pronoun: bool) -> list[tuple[str, str | None]]:
    rel = [("near", "rel")] if rng.random() < 0.5 else [("next", "rel"), ("to", "rel")]
    tail = rel + [("the", None), (anchor, "auxi")]
    if pronoun:
        return [(",", None), ("it", "pron"), ("is", None)] + tail
    return tail


def _nearest_other_class(scene: SceneCloud, inst: int) -> str:
    d = np.linalg.norm(scene.instance_center - scene.instance_center[inst], axis=1)
    d[inst] = np.inf
    return CLASSES[int(scene.instance_class[int(np.argmin(d))])]


def category_of(n_targets: int, distractors: int) -> str:
    """Category tag from the target count and the number of same-class non-targets."""
    if n_targets >= 2:
        return "mt"
    head = "zt" if n_targets == 0 else "st"
    return f"{head}_dis" if distractors > 0 else f"{head}_nodis"


def make_expression(scene: SceneCloud, category: str, rng: np.random.Generator) -> Expression | None:
    """One templated expression of the requested category, or None if the scene can't support it."""
    inst_meta = scene.meta["instances"]
    names = [m["class_name"] for m in inst_meta]
    shades = [m["shade"] for m in inst_meta]
    present = sorted(set(names), key=CLASSES.index)
    counts = {c: names.count(c) for c in present}
    ids_of = {c: [i for i, n in enumerate(names) if n == c] for c in present}

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    if category == "st_nodis":
        options = [c for c in present if counts[c] == 1]
        if not options:
            return None
        cls = pick(options)
        target = ids_of[cls][0]
        head = [("the", None)]
        if rng.random() < 0.5:
            head.append((shades[target], "attri"))
        words = head + [(cls, "main")]
        if rng.random() < 0.5:
            words += _relation_tail(scene, _nearest_other_class(scene, target), rng, rng.random() < 0.5)
        return _tokens(words, [target], category, cls)

    if category == "st_dis":
        options = [(c, s) for c in present for s in SHADES
                   if counts[c] >= 2 and sum(shades[i] == s for i in ids_of[c]) == 1]
        if not options:
            return None
        cls, shade = pick(options)
        target = next(i for i in ids_of[cls] if shades[i] == shade)
        words = [("the", None), (shade, "attri"), (cls, "main")]
        if rng.random() < 0.5:
            words += _relation_tail(scene, _nearest_other_class(scene, target), rng, rng.random() < 0.5)
        return _tokens(words, [target], category, cls)

    if category == "mt":
        options = [c for c in present if counts[c] >= 2]
        if not options:
            return None
        cls = pick(options)
        lead = [("all", None), ("the", None)] if rng.random() < 0.5 else [("every", None)]
        noun = (PLURALS[cls], "main") if lead[0][0] == "all" else (cls, "main")
        return _tokens(lead + [noun], ids_of[cls], category, cls)

    if category == "zt_dis":
        options = [(c, s) for c in present for s in SHADES if all(shades[i] != s for i in ids_of[c])]
        if not options:
            return None
        cls, shade = pick(options)
        words = [("the", None), (shade, "attri"), (cls, "main")]
        if rng.random() < 0.5:
            words += _relation_tail(scene, pick(present), rng, rng.random() < 0.5)
        return _tokens(words, [], category, cls)

    if category == "zt_nodis":
        options = [c for c in CLASSES if c not in counts]
        if not options:
            return None
        cls = pick(options)
        words = [("the", None)]
        if rng.random() < 0.5:
            words.append((pick(SHADES), "attri"))
        words.append((cls, "main"))
        if rng.random() < 0.5:
            words += _relation_tail(scene, pick(present), rng, rng.random() < 0.5)
        return _tokens(words, [], category, cls)

    raise ValueError(f"unknown category {category!r}")


def generate_samples(scene: SceneCloud, cfg: GenConfig, index: int = 0,
                     categories: list[str] | None = None) -> list[Expression]:
    """Expressions for one scene; categories drawn from the mix unless given."""
    if scene.num_instances < 1:
        raise ValueError("scene has no instances")
    rng = np.random.default_rng([cfg.seed, index, 1])
    if categories is None:
        cats = list(cfg.category_mix)
        p = np.array([cfg.category_mix[c] for c in cats])
        categories = [cats[int(rng.choice(len(cats), p=p))] for _ in range(cfg.samples_per_scene)]
    out = []
    for cat in categories:
        expr = make_expression(scene, cat, rng)
        if expr is None:
            # fall back to the first category this scene can express
            for alt in CATEGORIES:
                expr = make_expression(scene, alt, rng)
                if expr is not None:
                    break
        out.append(expr)
    return out


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class Sample:
    sample_id: int
    scene_index: int
    split: str
    expression: Expression

    def to_dict(self) -> dict:
        return {"id": self.sample_id, "scene": self.scene_index, "split": self.split,
                "expression": self.expression.to_dict()}


@dataclass
class DatasetManifest:
    scene_files: list[str]
    samples: list[Sample]
    scenes: list[SceneCloud] = field(default_factory=list, repr=False)
    vocabulary: tuple[str, ...] = VOCABULARY
    gen_config: dict | None = None
    format_version: int = FORMAT_VERSION

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def pairs(self, split: str | None = None) -> list[tuple[SceneCloud, Expression]]:
        chosen = self.samples if split is None else self.split(split)
        return [(self.scenes[s.scene_index], s.expression) for s in chosen]


def _allocate(mix: dict, total: int) -> list[str]:
    # largest remainder, with at least one slot per requested category
    cats = [c for c in CATEGORIES if mix.get(c, 0) > 0]
    if total < len(cats):
        raise ValueError(f"{total} samples cannot cover {len(cats)} categories")
    raw = np.array([mix[c] * total for c in cats])
    n = np.maximum(np.floor(raw).astype(int), 1)
    while n.sum() > total:
        n[int(np.argmax(n))] -= 1
    rema = raw - np.floor(raw)
    for i in np.argsort(-rema, kind="stable"):
        if n.sum() >= total:
            break
        n[i] += 1
    return [c for c, k in zip(cats, n) for _ in range(k)]


def generate_dataset(cfg: GenConfig) -> DatasetManifest:
    """Scenes plus samples with every requested category represented."""
    rng = np.random.default_rng([cfg.seed, 2**31 - 1])
    total = cfg.num_samples or cfg.num_scenes * cfg.samples_per_scene
    cats = _allocate(cfg.category_mix, total)
    cats = [cats[i] for i in rng.permutation(total)]
    # spread the samples as evenly as possible, earlier scenes take the remainder
    per_scene = [total // cfg.num_scenes + (k < total % cfg.num_scenes) for k in range(cfg.num_scenes)]
    bounds = np.concatenate([[0], np.cumsum(per_scene)])
    scenes, samples = [], []
    for k in range(cfg.num_scenes):
        scene = generate_scene(cfg, k)
        scenes.append(scene)
        chunk = cats[bounds[k]:bounds[k + 1]]
        for expr in generate_samples(scene, cfg, k, chunk):
            samples.append(Sample(len(samples), k, "train", expr))
    n_val = int(round(cfg.val_fraction * total))
    for i in rng.permutation(total)[:n_val]:
        samples[i].split = "val"
    return DatasetManifest(
        scene_files=[f"scenes/scene_{k}.json" for k in range(cfg.num_scenes)],
        samples=samples,
        scenes=scenes,
        gen_config=cfg.to_dict(),
    )


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def scene_to_dict(scene: SceneCloud) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "name": scene.name,
        "positions": scene.positions.reshape(-1).tolist(),
        "colors": scene.colors.reshape(-1).tolist(),
        "superpoint_id": scene.superpoint_id.tolist(),
        "instance_id": scene.instance_id.tolist(),
        "instances": [
            {"id": i, "class": int(scene.instance_class[i]), "center": scene.instance_center[i].tolist(),
             **(scene.meta.get("instances", [{}] * scene.num_instances)[i])}
            for i in range(scene.num_instances)
        ],
    }


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise DatasetFormatError(f"{where}: missing required field '{key}'")
    return d[key]


def scene_from_dict(d: dict, where: str = "scene") -> SceneCloud:
    version = _need(d, "format_version", where)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{where}: unsupported format_version {version} (reader supports {FORMAT_VERSION})")
    instances = _need(d, "instances", where)
    meta = [{k: v for k, v in inst.items() if k not in ("id", "class", "center")} for inst in instances]
    try:
        return SceneCloud(
            positions=np.array(_need(d, "positions", where), dtype=np.float64).reshape(-1, 3),
            colors=np.array(_need(d, "colors", where), dtype=np.float64).reshape(-1, 3),
            superpoint_id=np.array(_need(d, "superpoint_id", where), dtype=np.int64),
            instance_id=np.array(_need(d, "instance_id", where), dtype=np.int64),
            instance_class=np.array([_need(i, "class", where) for i in instances], dtype=np.int64),
            instance_center=np.array([_need(i, "center", where) for i in instances], dtype=np.float64).reshape(-1, 3),
            name=d.get("name", ""),
            meta={"instances": meta},
        )
    except ValueError as err:
        if isinstance(err, DatasetFormatError):
            raise
        raise DatasetFormatError(f"{where}: {err}") from err


def write_dataset(manifest: DatasetManifest, directory) -> None:
    root = Path(directory)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    for rel, scene in zip(manifest.scene_files, manifest.scenes):
        _dump(scene_to_dict(scene), root / rel)
    _dump({
        "format_version": manifest.format_version,
        "scenes": list(manifest.scene_files),
        "samples": [s.to_dict() for s in manifest.samples],
        "splits": {name: [s.sample_id for s in manifest.samples if s.split == name] for name in ("train", "val")},
        "vocabulary": list(manifest.vocabulary),
        "gen_config": manifest.gen_config,
    }, root / "manifest.json")


def _load_json(path: Path):
    if not path.is_file():
        raise DatasetFormatError(f"{path}: file not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"{path}: malformed JSON ({err.msg} at line {err.lineno})") from err


def read_dataset(directory) -> DatasetManifest:
    root = Path(directory)
    if not root.is_dir():
        raise DatasetFormatError(f"{root}: dataset directory not found")
    mpath = root / "manifest.json"
    m = _load_json(mpath)
    where = str(mpath)
    version = _need(m, "format_version", where)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{where}: unsupported format_version {version} (reader supports {FORMAT_VERSION})")
    scene_files = _need(m, "scenes", where)
    vocab = tuple(_need(m, "vocabulary", where))
    scenes = []
    for rel in scene_files:
        spath = root / rel
        scenes.append(scene_from_dict(_load_json(spath), str(spath)))
    samples = []
    for k, s in enumerate(_need(m, "samples", where)):
        swhere = f"{where}: samples[{k}]"
        scene_index = _need(s, "scene", swhere)
        if not 0 <= scene_index < len(scenes):
            raise DatasetFormatError(f"{swhere}: references missing scene {scene_index}")
        split = _need(s, "split", swhere)
        if split not in ("train", "val"):
            raise DatasetFormatError(f"{swhere}: unknown split {split!r}")
        e = _need(s, "expression", swhere)
        for key in ("token_ids", "labels", "target_instance_ids", "category"):
            _need(e, key, swhere + ".expression")
        if len(e["token_ids"]) > MAX_TOKENS:
            raise DatasetFormatError(f"{swhere}: expression longer than {MAX_TOKENS} tokens")
        if max(e["token_ids"]) >= len(vocab):
            raise DatasetFormatError(f"{swhere}: token id outside the vocabulary")
        try:
            expr = Expression(**{k: e[k] for k in ("token_ids", "labels", "target_instance_ids", "category")},
                              mentioned_class=e.get("mentioned_class"), text=e.get("text", ""))
        except ValueError as err:
            raise DatasetFormatError(f"{swhere}: {err}") from err
        if any(t >= scenes[scene_index].num_instances for t in expr.target_instance_ids):
            raise DatasetFormatError(f"{swhere}: target instance missing from scene {scene_index}")
        samples.append(Sample(_need(s, "id", swhere), scene_index, split, expr))
    return DatasetManifest(scene_files=list(scene_files), samples=samples, scenes=scenes, vocabulary=vocab,
                           gen_config=m.get("gen_config"), format_version=version)
