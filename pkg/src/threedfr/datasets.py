"""Video ingestion, sample windows, the scene-independent split, synthetic data.

Frames are numbered from 1 as in CDnet (``in000001.jpg``).  A window for
frame ``t`` uses frames ``t-50 .. t-1`` as history and frame ``t`` as the
current frame; frames without a full history are skipped.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import IngestionError, ManifestError, WindowError
from .tensor import DTYPE

HISTORY = 50
FRAME_EXTS = (".jpg", ".jpeg", ".png", ".ppm", ".pgm", ".bmp")

# CDnet ground-truth labels
GT_STATIC = 0
GT_SHADOW = 50
GT_OUTSIDE_ROI = 85
GT_UNKNOWN = 170
GT_MOTION = 255


@dataclass
class VideoSequence:
    category: str
    name: str
    frame_paths: list[Path] = field(default_factory=list)
    gt_paths: list[Path] = field(default_factory=list)
    roi: tuple[int, int] = (1, 1)
    # decoded uint8 data: frames (f, h, w, 3), masks (f, h, w)
    frames: np.ndarray | None = None
    gts: np.ndarray | None = None

    def __post_init__(self):
        n = len(self)
        n_gt = len(self.gts) if self.gts is not None else len(self.gt_paths)
        if n_gt and n_gt != n:
            raise IngestionError(f"{self.category}/{self.name}: {n} frames but {n_gt} ground-truth masks")
        first, last = self.roi
        if not 1 <= first <= last <= n:
            raise IngestionError(f"{self.category}/{self.name}: temporal ROI {self.roi} outside 1..{n}")

    def __len__(self) -> int:
        return len(self.frames) if self.frames is not None else len(self.frame_paths)

    @property
    def has_gt(self) -> bool:
        return self.gts is not None or bool(self.gt_paths)

    def frame(self, index: int) -> np.ndarray:
        """Frame ``index`` (1-based) as uint8 ``(h, w, 3)``."""
        if self.frames is not None:
            return self.frames[index - 1]
        return read_rgb(self.frame_paths[index - 1])

    def gt(self, index: int) -> np.ndarray | None:
        if self.gts is not None:
            return self.gts[index - 1]
        if not self.gt_paths:
            return None
        return read_gray(self.gt_paths[index - 1])

    def load(self) -> "VideoSequence":
        """Copy with every frame and mask decoded into memory."""
        if self.frames is not None:
            return self
        frames = np.stack([read_rgb(p) for p in self.frame_paths])
        gts = np.stack([read_gray(p) for p in self.gt_paths]) if self.gt_paths else None
        return VideoSequence(self.category, self.name, list(self.frame_paths), list(self.gt_paths),
                             self.roi, frames, gts)

    def evaluable_frames(self, history: int = HISTORY) -> range:
        return range(max(self.roi[0], history + 1), self.roi[1] + 1)


@dataclass
class SampleWindow:
    history: np.ndarray  # (1, 3, 50, H', W')
    current: np.ndarray  # (1, 3, 1, H', W')
    target: np.ndarray  # (1, 1, 1, H', W'), values in {0, 1}
    ignore_mask: np.ndarray  # (1, 1, 1, H', W'), 1 = evaluate
    original_hw: tuple[int, int]
    frame_index: int = 0

    def crop(self, x: np.ndarray) -> np.ndarray:
        """Crop a ``(..., H', W')`` map back to the original frame size."""
        h, w = self.original_hw
        return x[..., :h, :w]


# -- image io -------------------------------------------------------------


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_image(path, data: np.ndarray) -> None:
    """Write uint8 data as binary PPM (rgb) or PGM (gray), by array rank."""
    mode = "RGB" if data.ndim == 3 else "L"
    Image.fromarray(np.ascontiguousarray(data, dtype=np.uint8), mode=mode).save(path, format="PPM")


# -- CDnet layout ---------------------------------------------------------


def _numbered(folder: Path, prefix: str) -> list[Path]:
    pat = re.compile(rf"{prefix}(\d+)$")
    found = []
    for p in folder.iterdir():
        m = pat.match(p.stem)
        if m and p.suffix.lower() in FRAME_EXTS:
            found.append((int(m.group(1)), p))
    return [p for _, p in sorted(found)]


def read_roi(path) -> tuple[int, int]:
    try:
        first, last = (int(v) for v in Path(path).read_text().split()[:2])
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot parse temporal ROI from {path}: {exc}") from exc
    return first, last


def load_cdnet_video(root, category: str, video: str) -> VideoSequence:
    base = Path(root) / category / video
    inputs, gt_dir, roi_file = base / "input", base / "groundtruth", base / "temporalROI.txt"
    for p in (inputs, gt_dir):
        if not p.is_dir():
            raise IngestionError(f"missing folder {p}")
    if not roi_file.is_file():
        raise IngestionError(f"missing {roi_file}")
    frames = _numbered(inputs, "in")
    if not frames:
        raise IngestionError(f"no input frames in {inputs}")
    gts = _numbered(gt_dir, "gt")
    if len(gts) != len(frames):
        raise IngestionError(f"{base}: {len(frames)} frames but {len(gts)} ground-truth masks")
    return VideoSequence(category, video, frames, gts, read_roi(roi_file))


def gt_to_masks(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map CDnet labels to ``(target, evaluate)`` float arrays.

    Motion is foreground; static and shadow are background; outside-ROI,
    unknown and any unlisted value are excluded from evaluation.
    """
    target = (gt == GT_MOTION).astype(DTYPE)
    evaluate = np.isin(gt, (GT_STATIC, GT_SHADOW, GT_MOTION)).astype(DTYPE)
    return target, evaluate


def padded_size(n: int, multiple: int = 8) -> int:
    return -(-n // multiple) * multiple


def _pad_hw(x: np.ndarray, hp: int, wp: int) -> np.ndarray:
    h, w = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(0, hp - h), (0, wp - w)]
    return np.pad(x, pad)


def make_window(seq: VideoSequence, frame_index: int, history: int = HISTORY) -> SampleWindow:
    if frame_index <= history:
        raise WindowError(f"frame {frame_index} has fewer than {history} predecessors")
    if frame_index > len(seq):
        raise WindowError(f"frame {frame_index} beyond sequence length {len(seq)}")
    first, last = seq.roi
    if not first <= frame_index <= last:
        raise WindowError(f"frame {frame_index} outside temporal ROI {seq.roi}")
    if seq.frames is not None:
        past = seq.frames[frame_index - 1 - history : frame_index - 1]
    else:
        past = np.stack([seq.frame(i) for i in range(frame_index - history, frame_index)])
    cur = seq.frame(frame_index)
    h, w = cur.shape[:2]
    hp, wp = padded_size(h), padded_size(w)
    hist = _pad_hw(past.transpose(3, 0, 1, 2).astype(DTYPE) / 255.0, hp, wp)
    curr = _pad_hw(cur.transpose(2, 0, 1).astype(DTYPE) / 255.0, hp, wp)
    gt = seq.gt(frame_index)
    if gt is None:
        target = evaluate = np.zeros((h, w), dtype=DTYPE)
    else:
        target, evaluate = gt_to_masks(gt)
    return SampleWindow(
        history=hist[None],
        current=curr[None, :, None],
        target=_pad_hw(target, hp, wp)[None, None, None],
        ignore_mask=_pad_hw(evaluate, hp, wp)[None, None, None],
        original_hw=(h, w),
        frame_index=frame_index,
    )


class WindowSet(Sequence[SampleWindow]):
    """Lazily materialised windows over one or more sequences."""

    def __init__(self, sequences: Sequence[VideoSequence], step: int = 1, history: int = HISTORY):
        self.sequences = list(sequences)
        self.history = history
        self.items = [
            (k, i)
            for k, seq in enumerate(self.sequences)
            for i in seq.evaluable_frames(history)[::step]
        ]

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        k, frame = self.items[i]
        return make_window(self.sequences[k], frame, self.history)

    def __iter__(self) -> Iterator[SampleWindow]:
        for i in range(len(self)):
            yield self[i]


# -- scene-independent split ----------------------------------------------

_TABLE2 = {
    "badWeather": (("skating", "snowFall", "wetSnow"), "blizzard"),
    "baseline": (("highway", "office", "PETS2006"), "pedestrians"),
    "cameraJitter": (("badminton", "boulevard", "sidewalk"), "traffic"),
    "dynamicBackground": (("canoe", "fall", "fountain01", "fountain02", "overpass"), "boats"),
    "intermittentObjectMotion": (
        ("abandonedBox", "sofa", "streetLight", "tramstop", "winterDriveway"),
        "parking",
    ),
    "lowFramerate": (("port_0_17fps", "tramCrossroad_1fps", "tunnelExit_0_35fps"), "turnpike_0_5fps"),
    "nightVideos": (
        ("bridgeEntry", "busyBoulevard", "fluidHighway", "streetCornerAtNight", "winterStreet"),
        "tramStation",
    ),
    # copyMachine left out of training
    "shadow": (("backdoor", "bungalows", "cubicle", "peopleInShade"), "busStation"),
    "thermal": (("diningRoom", "lakeSide", "library", "park"), "corridor"),
    # the printed train list repeats the test video; the remaining
    # CDnet turbulence videos are used for training instead
    "turbulence": (("turbulence0", "turbulence2", "turbulence3"), "turbulence1"),
}


@dataclass(frozen=True)
class SplitRow:
    category: str
    video: str
    role: str


class SplitManifest(list):
    """List of :class:`SplitRow` with leave-one-video-out helpers."""

    def validate(self) -> "SplitManifest":
        seen = set()
        tests: dict[str, int] = {}
        for row in self:
            if row.role not in ("train", "test"):
                raise ManifestError(f"unknown role {row.role!r} for {row.category}/{row.video}")
            key = (row.category, row.video)
            if key in seen:
                raise ManifestError(f"video {row.category}/{row.video} listed twice")
            seen.add(key)
            tests[row.category] = tests.get(row.category, 0) + (row.role == "test")
        bad = {c: n for c, n in tests.items() if n != 1}
        if bad:
            raise ManifestError(f"categories without exactly one test video: {bad}")
        return self

    def rows(self, role: str | None = None, category: str | None = None) -> list[SplitRow]:
        return [r for r in self if (role is None or r.role == role) and (category is None or r.category == category)]

    @property
    def categories(self) -> list[str]:
        return list(dict.fromkeys(r.category for r in self))

    def test_video(self, category: str) -> str | None:
        rows = self.rows("test", category)
        return rows[0].video if rows else None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "video", "role"])
            for r in self:
                writer.writerow([r.category, r.video, r.role])

    @classmethod
    def read_csv(cls, path) -> "SplitManifest":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["category", "video", "role"]:
                raise ManifestError(f"{path}: header must be category,video,role")
            return cls(SplitRow(r["category"], r["video"], r["role"]) for r in reader)


def table2_manifest() -> SplitManifest:
    m = SplitManifest()
    for category, (train, test) in _TABLE2.items():
        m.extend(SplitRow(category, v, "train") for v in train)
        m.append(SplitRow(category, test, "test"))
    return m.validate()


# -- synthetic sequences --------------------------------------------------


@dataclass
class MovingObject:
    kind: str  # "square" or "disc"
    size: int
    color: tuple[float, float, float]
    y: float
    x: float
    vy: float = 0.0
    vx: float = 0.0
    # colours cycled through every ``recolor_period`` frames; empty keeps ``color`` fixed
    palette: tuple[tuple[float, float, float], ...] = ()
    recolor_period: int = 1
    age: int = 0

    def current_color(self) -> np.ndarray:
        if not self.palette:
            return np.asarray(self.color, dtype=DTYPE)
        return np.asarray(self.palette[(self.age // self.recolor_period) % len(self.palette)], dtype=DTYPE)

    def support(self, height: int, width: int) -> np.ndarray:
        """Boolean mask of the pixels covered at the current position."""
        top, left = int(round(self.y)), int(round(self.x))
        yy, xx = np.ogrid[:height, :width]
        if self.kind == "square":
            return (yy >= top) & (yy < top + self.size) & (xx >= left) & (xx < left + self.size)
        r = self.size / 2.0
        cy, cx = top + r - 0.5, left + r - 0.5
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r

    def turn(self, angle: float) -> None:
        """Head off in direction ``angle`` at unchanged speed."""
        speed = np.hypot(self.vy, self.vx)
        self.vy, self.vx = speed * np.sin(angle), speed * np.cos(angle)

    def step(self, height: int, width: int) -> None:
        self.age += 1
        self.y += self.vy
        self.x += self.vx
        hi_y, hi_x = height - self.size, width - self.size
        if self.y < 0 or self.y > hi_y:
            self.vy = -self.vy
            self.y = min(max(self.y, 0.0), hi_y)
        if self.x < 0 or self.x > hi_x:
            self.vx = -self.vx
            self.x = min(max(self.x, 0.0), hi_x)


def textured_background(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour texture in [0.25, 0.75], shape ``(h, w, 3)``.

    The range leaves a margin of at least 0.1 per channel to the saturated
    object colours, and every seed draws from the same distribution.
    """
    coarse = gaussian_filter(rng.normal(size=(height, width, 3)), sigma=(6, 6, 0))
    fine = gaussian_filter(rng.normal(size=(height, width, 3)), sigma=(1, 1, 0))
    tex = coarse / (np.abs(coarse).max() + 1e-12) * 0.2 + fine / (np.abs(fine).max() + 1e-12) * 0.05
    return 0.5 + tex


def render(background: np.ndarray, objects: Sequence[MovingObject]) -> tuple[np.ndarray, np.ndarray]:
    """Composite objects over a float background; returns ``(frame, support)``."""
    h, w = background.shape[:2]
    frame = background.copy()
    support = np.zeros((h, w), dtype=bool)
    for obj in objects:
        m = obj.support(h, w)
        frame[m] = obj.current_color()
        support |= m
    return frame, support


def _saturated(rng, corner) -> tuple[float, float, float]:
    return tuple(float(c) for c in np.where(corner, rng.uniform(0.85, 1.0, 3), rng.uniform(0.0, 0.15, 3)))


def _random_object(rng, height, width, size, kind) -> MovingObject:
    # saturated colours stand out against the mid-grey texture; cycling through
    # all eight colour-cube corners keeps a model from keying on one colour
    corners = np.array([[(k >> b) & 1 for b in range(3)] for k in range(8)], dtype=bool)
    palette = tuple(_saturated(rng, c) for c in corners[rng.permutation(8)])
    speed = rng.uniform(1.0, 2.5)
    angle = rng.uniform(0, 2 * np.pi)
    return MovingObject(
        kind=kind,
        size=size,
        color=palette[0],
        y=rng.uniform(0, height - size),
        x=rng.uniform(0, width - size),
        vy=speed * np.sin(angle),
        vx=speed * np.cos(angle),
        palette=palette,
        recolor_period=int(rng.integers(10, 21)),
    )


def synth_sequence(
    width: int = 64,
    height: int = 64,
    frame_count: int = 300,
    object_count: int = 2,
    noise_sigma: float = 0.02,
    seed: int = 0,
    object_size: int = 20,
    turn_prob: float = 0.05,
    objects: Sequence[MovingObject] | None = None,
    history: int = HISTORY,
) -> VideoSequence:
    """Static textured scene with objects bouncing around it.

    Random objects alternate between squares and discs, and each one picks a
    new heading with probability ``turn_prob`` per frame.  Frames are
    quantised to 8 bits so an in-memory sequence and its files on disk
    decode identically.  Pass ``objects`` to place objects explicitly
    instead of drawing ``object_count`` random ones.
    """
    rng = np.random.default_rng(seed)
    background = textured_background(height, width, rng)
    if objects is None:
        kinds = ("square", "disc")
        objects = [_random_object(rng, height, width, object_size, kinds[i % 2]) for i in range(object_count)]
    else:
        objects = [MovingObject(**vars(o)) for o in objects]
    frames = np.empty((frame_count, height, width, 3), dtype=np.uint8)
    gts = np.empty((frame_count, height, width), dtype=np.uint8)
    for f in range(frame_count):
        img, support = render(background, objects)
        img = img + rng.normal(0.0, noise_sigma, size=img.shape) if noise_sigma > 0 else img
        frames[f] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        gts[f] = np.where(support, GT_MOTION, GT_STATIC)
        if turn_prob > 0:
            turns, angles = rng.random(len(objects)), rng.uniform(0, 2 * np.pi, len(objects))
            for obj, u, a in zip(objects, turns, angles):
                if u < turn_prob:
                    obj.turn(a)
        for obj in objects:
            obj.step(height, width)
    first = min(history + 1, frame_count)
    return VideoSequence("synthetic", f"synth_seed{seed}", roi=(first, frame_count), frames=frames, gts=gts)


def write_sequence(seq: VideoSequence, root, category: str | None = None) -> Path:
    """Persist a sequence in CDnet layout (PPM frames, PGM masks)."""
    base = Path(root) / (category or seq.category) / seq.name
    (base / "input").mkdir(parents=True, exist_ok=True)
    (base / "groundtruth").mkdir(parents=True, exist_ok=True)
    for i in range(1, len(seq) + 1):
        write_image(base / "input" / f"in{i:06d}.ppm", seq.frame(i))
        gt = seq.gt(i)
        if gt is not None:
            write_image(base / "groundtruth" / f"gt{i:06d}.pgm", gt)
    (base / "temporalROI.txt").write_text(f"{seq.roi[0]} {seq.roi[1]}\n")
    return base
