"""Synthetic object-level video data.

Scenes are 64x64 canvases with anti-aliased sprites moving at constant
velocity. Normal traffic moves along tinted horizontal lanes that alternate
in direction, each lane with its own speed. Sprites are only visible in a
central band of columns a little wider than the zone where a crop around them
fits; flat scenery hides the sides. Test scenes add one anomaly event per video: a fast sprite, a sprite
that turns back, or a shape never seen in training. Tracks are cut into 5-frame object cubes whose crop is
centred on the object's position in the last frame, and each cube gets the
flow map of its last frame.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

CANVAS = 64
CROP = 32
CUBE_LEN = 5
FAST_FACTOR = 3.0

SHAPES = ("square", "circle", "triangle")
TRAIN_SHAPES = ("square", "circle")
ANOMALY_TAGS = ("none", "fast", "reverse", "novel_shape")
ANOMALY_KINDS = ("fast", "reverse", "novel_shape")

PALETTE = (
    (0.90, 0.30, 0.25),
    (0.25, 0.55, 0.90),
    (0.30, 0.80, 0.35),
    (0.95, 0.80, 0.20),
    (0.80, 0.80, 0.80),
)
BACKGROUND = 0.05
# faint per-lane road tint, so a crop shows which lane the object is in
LANE_TINTS = (
    (0.16, 0.10, 0.05),
    (0.05, 0.14, 0.12),
    (0.10, 0.06, 0.16),
)

_SUPERSAMPLE = 4
_MAGIC = b"MCVD"
FORMAT_VERSION = 1


class DatasetError(Exception):
    """Raised for malformed, missing or inconsistent dataset files."""


@dataclass(frozen=True)
class SpriteSpec:
    shape_kind: str
    size_px: int
    color: tuple[float, float, float]
    velocity: tuple[float, float]
    anomaly_tag: str = "none"

    def __post_init__(self):
        if self.shape_kind not in SHAPES:
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}")
        if not 6 <= self.size_px <= 20:
            raise ValueError(f"size_px must be in [6, 20], got {self.size_px}")
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"color must lie in [0, 1], got {self.color}")
        if self.anomaly_tag not in ANOMALY_TAGS:
            raise ValueError(f"unknown anomaly_tag {self.anomaly_tag!r}")


@dataclass(frozen=True)
class SceneConfig:
    n_frames: int = 32
    n_sprites: int = 3
    anomaly_rate: float = 0.0
    split: str = "train"
    canvas: int = CANVAS
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS

    def __post_init__(self):
        if self.n_frames < 6:
            raise ValueError("n_frames must be >= 6")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.split == "train" and self.anomaly_rate > 0:
            raise ValueError("anomaly_rate must be 0 for the train split")
        if not 0.0 <= self.anomaly_rate < 1.0:
            raise ValueError("anomaly_rate must be in [0, 1)")
        if self.canvas < CROP:
            raise ValueError(f"canvas must be at least {CROP} px")
        for kind in self.anomaly_kinds:
            if kind not in ANOMALY_KINDS:
                raise ValueError(f"unknown anomaly kind {kind!r}")


@dataclass
class Track:
    """One sprite's life: positions (x, y) for frames start..start+len-1."""

    track_id: str
    spec: SpriteSpec
    start: int
    positions: np.ndarray
    anomalous: np.ndarray

    @property
    def stop(self) -> int:
        return self.start + len(self.positions)

    def alive(self, t: int) -> bool:
        return self.start <= t < self.stop

    def position(self, t: int) -> np.ndarray:
        return self.positions[t - self.start]

    def displacement(self, t: int) -> np.ndarray:
        return self.position(t) - self.position(t - 1)


@dataclass
class Scene:
    frames: np.ndarray  # (T, 3, H, W) float32 in [0, 1]
    tracks: list[Track]
    config: SceneConfig | None
    seed: int
    window: tuple[int, int] | None = None  # visible column range; sprites are hidden outside it


@dataclass
class ObjectCube:
    frames: np.ndarray  # (5, 3, 32, 32) ordered t1..t5
    video_id: str
    frame_index: int
    track_id: str
    label: int = 0
    origin: tuple[int, int] = (0, 0)  # (row, col) of the crop's top-left corner


@dataclass
class FlowMap:
    values: np.ndarray  # (2, 32, 32): x and y displacement in px/frame
    video_id: str = ""
    frame_index: int = 0
    track_id: str = ""


@dataclass
class DatasetManifest:
    split: str
    entries: list[dict]
    pixel_mean: list[float]
    pixel_std: list[float]
    frame_labels: dict[str, list[int]] = field(default_factory=dict)
    flow_mode: str = "ground_truth"
    generator: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def validate(self) -> None:
        if self.split not in ("train", "test"):
            raise DatasetError(f"bad split {self.split!r}")
        if self.split == "train":
            bad = [e for e in self.entries if e["label"] != 0]
            if bad:
                raise DatasetError(
                    f"train manifest contains {len(bad)} abnormal entries "
                    f"(first: {bad[0]['cube']})"
                )
            if any(any(v) for v in self.frame_labels.values()):
                raise DatasetError("train manifest contains abnormal frame labels")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


# ---------------------------------------------------------------- rendering


def sprite_alpha(shape_kind: str, size_px: int, center, canvas: int = CANVAS) -> np.ndarray:
    """Coverage of a sprite over an (canvas, canvas) grid, by 4x4 supersampling."""
    n = _SUPERSAMPLE
    offsets = (np.arange(n) + 0.5) / n - 0.5
    coords = (np.arange(canvas)[:, None] + offsets[None, :]).ravel()
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    dx = xs - center[0]
    dy = ys - center[1]
    half = size_px / 2.0
    if shape_kind == "square":
        inside = (np.abs(dx) < half) & (np.abs(dy) < half)
    elif shape_kind == "circle":
        inside = dx * dx + dy * dy < half * half
    elif shape_kind == "triangle":
        # apex up; width grows linearly to size_px at the base
        depth = dy + half
        inside = (depth >= 0) & (depth < size_px) & (np.abs(dx) < depth / 2.0)
    else:
        raise ValueError(f"unknown shape_kind {shape_kind!r}")
    return inside.reshape(canvas, n, canvas, n).mean(axis=(1, 3))


def window_mask(window, canvas: int = CANVAS) -> np.ndarray:
    """(canvas, canvas) mask of the columns inside ``window``; all ones for None."""
    mask = np.ones((canvas, canvas))
    if window is not None:
        cols = np.arange(canvas)
        mask[:, (cols < window[0]) | (cols >= window[1])] = 0.0
    return mask


def render_frame(tracks, t: int, canvas: int = CANVAS, window=None, background=None) -> np.ndarray:
    if background is None:
        frame = np.full((3, canvas, canvas), BACKGROUND, dtype=np.float64)
    else:
        frame = np.array(background, dtype=np.float64)
    visible = window_mask(window, canvas)
    for track in tracks:
        if not track.alive(t):
            continue
        alpha = visible * sprite_alpha(track.spec.shape_kind, track.spec.size_px, track.position(t), canvas)
        color = np.asarray(track.spec.color)[:, None, None]
        frame = frame * (1.0 - alpha) + alpha * color
    return frame.astype(np.float32)


# ------------------------------------------------------------------ scenes

# lane k moves at LANE_SPEEDS[k % 3] px/frame, +-SPEED_JITTER relative
LANE_SPEEDS = (1.25, 2.0, 2.75)
SPEED_JITTER = 0.05
LANE_HALF_WIDTH = 6
MAX_ANGLE_DEG = 2.0
SIZES = (8, 11)
Y_JITTER = 1.0
# frames between consecutive entries in one lane; keeps sprites >= ~24 px apart
ENTRY_GAP = (12, 20)


def _lane_speed(lane: int) -> float:
    return LANE_SPEEDS[lane % len(LANE_SPEEDS)]


def _normal_velocity(rng, speed: float) -> tuple[float, float]:
    speed = speed * rng.uniform(1 - SPEED_JITTER, 1 + SPEED_JITTER)
    angle = np.deg2rad(rng.uniform(-MAX_ANGLE_DEG, MAX_ANGLE_DEG))
    return float(speed * np.cos(angle)), float(speed * np.sin(angle))


def _normal_spec(rng, velocity, shape_kind=None, tag="none") -> SpriteSpec:
    return SpriteSpec(
        shape_kind=shape_kind or str(rng.choice(TRAIN_SHAPES)),
        size_px=int(rng.integers(SIZES[0], SIZES[1] + 1)),
        color=PALETTE[int(rng.integers(len(PALETTE)))],
        velocity=velocity,
        anomaly_tag=tag,
    )


def _linear_positions(p0, velocity, n: int) -> np.ndarray:
    steps = np.arange(n, dtype=np.float64)[:, None]
    return np.asarray(p0, dtype=np.float64)[None, :] + steps * np.asarray(velocity)[None, :]


def _lanes(n: int, canvas: int) -> np.ndarray:
    """Lane centres, kept where a crop around the sprite fits vertically."""
    if n == 1:
        return np.array([canvas / 2.0])
    return np.linspace(CROP // 2 + 2, canvas - CROP // 2 - 2, n)


def scene_background(n_lanes: int, canvas: int = CANVAS) -> np.ndarray:
    """(3, canvas, canvas) static background with one tinted band per lane."""
    background = np.full((3, canvas, canvas), BACKGROUND, dtype=np.float64)
    rows = np.arange(canvas)
    for k, y in enumerate(_lanes(n_lanes, canvas)):
        band = np.abs(rows + 0.5 - y) <= LANE_HALF_WIDTH
        background[:, band, :] = np.asarray(LANE_TINTS[k % len(LANE_TINTS)])[:, None, None]
    return background


def _visible(positions: np.ndarray, size: int, canvas: int) -> np.ndarray:
    half = size / 2.0
    x = positions[:, 0]
    return (x + half > 0) & (x - half < canvas)


def _clip(track_id, spec, t0: int, positions, anomalous, n_frames: int, canvas: int):
    """Restrict a path that starts at frame ``t0`` to the frames it is on screen within [0, n_frames)."""
    times = t0 + np.arange(len(positions))
    keep = _visible(positions, spec.size_px, canvas) & (times >= 0) & (times < n_frames)
    if not keep.any():
        return None
    idx = np.flatnonzero(keep)
    lo, hi = idx[0], idx[-1] + 1
    return Track(track_id, spec, int(times[lo]), positions[lo:hi], np.asarray(anomalous[lo:hi], dtype=bool))


def _crossing(x0: float, vx: float, size: int, canvas: int) -> int:
    """Frames needed to travel from x0 until fully past the right edge."""
    return int(math.ceil((canvas + size / 2.0 - x0) / vx)) + 1


def _mirror(positions: np.ndarray, canvas: int) -> np.ndarray:
    out = positions.copy()
    out[:, 0] = canvas - out[:, 0]
    return out


def _mirror_spec(spec: SpriteSpec) -> SpriteSpec:
    return replace(spec, velocity=(-spec.velocity[0], spec.velocity[1]))


def _lane_traffic(rng, lane: int, y: float, n_frames: int, canvas: int, blocked=None) -> list[Track]:
    """Sprites enter one after another on the upstream edge and leave on the other.

    Even lanes flow rightwards, odd lanes leftwards, each at its own speed.

    ``blocked`` is a (first, last) frame interval during which the lane is
    reserved; sprites whose lifetime would touch it are dropped.
    """
    tracks = []
    entry = -int(rng.integers(0, 40))
    life = 0
    while entry < n_frames:
        spec = _normal_spec(rng, _normal_velocity(rng, _lane_speed(lane)))
        x0 = -spec.size_px / 2.0
        y0 = y + rng.uniform(-Y_JITTER, Y_JITTER)
        n = _crossing(x0, spec.velocity[0], spec.size_px, canvas)
        if blocked is None or entry + n < blocked[0] or entry > blocked[1]:
            positions = _linear_positions((x0, y0), spec.velocity, n)
            if lane % 2:
                spec, positions = _mirror_spec(spec), _mirror(positions, canvas)
            track = _clip(f"s{lane}n{life}", spec, entry, positions, np.zeros(n, bool), n_frames, canvas)
            if track is not None:
                tracks.append(track)
                life += 1
        entry += int(rng.integers(ENTRY_GAP[0], ENTRY_GAP[1] + 1))
    return tracks


def scene_window(canvas: int) -> tuple[int, int]:
    """Visible columns of a generated scene.

    The band where a crop around a sprite fits, widened by the largest sprite
    half-size so an object is fully visible whenever it can be cut into a
    cube. Outside it, sprites are hidden behind flat scenery.
    """
    margin = (SIZES[1] + 1) // 2
    return CROP // 2 - margin, canvas - CROP // 2 + margin


def _valid_x(canvas: int) -> tuple[float, float]:
    """Range of x for which the crop centred on the sprite stays on the canvas."""
    return CROP // 2 - 0.5, canvas - CROP // 2 + 0.5


def _pick(rng, a: int, b: int) -> int:
    """Uniform integer in [a, b]; collapses to ``a`` when the range is empty."""
    return int(rng.integers(a, b + 1)) if b >= a else a


def _anomaly_path(rng, kind: str, n_labeled: int, n_frames: int, canvas: int, y: float, speed: float):
    """Return (spec, entry frame, positions, anomalous flags) for one anomaly event.

    The event is placed so that the anomalous sprite has about ``n_labeled``
    scored frames: fast sprites cross the crop-valid zone in a few frames
    anyway, a triangle is cut by the start or end of the video, and a sprite
    that turns back does so ``n_labeled`` frames before it leaves the zone.
    """
    lo, hi = _valid_x(canvas)
    base = _normal_velocity(rng, speed)
    first = CUBE_LEN - 1
    if kind in ("fast", "novel_shape"):
        if kind == "fast":
            velocity = (base[0] * FAST_FACTOR, base[1] * FAST_FACTOR)
            spec = _normal_spec(rng, velocity, tag="fast")
        else:
            velocity = base
            spec = _normal_spec(rng, base, shape_kind="triangle", tag="novel_shape")
        x0 = -spec.size_px / 2.0
        n = _crossing(x0, velocity[0], spec.size_px, canvas)
        positions = _linear_positions((x0, y), velocity, n)
        inside = np.flatnonzero((positions[:, 0] >= lo) & (positions[:, 0] < hi))
        a, b = int(inside[0]), int(inside[-1])
        if b - a + 1 <= n_labeled:
            entry = _pick(rng, first - a, n_frames - 1 - b)
        elif rng.random() < 0.5:
            # leaves the valid zone after n_labeled scored frames
            entry = first + n_labeled - 1 - b
        else:
            # reaches the valid zone n_labeled frames before the video ends
            entry = n_frames - n_labeled - a
        return spec, entry, positions, np.ones(n, bool)
    spec = _normal_spec(rng, base, tag="reverse")
    vx = base[0]
    x_turn = min(hi - 1.0, lo + vx * (n_labeled + 0.5))
    x0 = -spec.size_px / 2.0
    out = int(math.floor((x_turn - x0) / vx))
    forward = _linear_positions((x0, y), base, out + 1)
    back_n = int(math.ceil((forward[-1, 0] + spec.size_px / 2.0) / vx)) + 1
    back = _linear_positions(forward[-1], (-base[0], -base[1]), back_n + 1)[1:]
    positions = np.concatenate([forward, back])
    anomalous = np.zeros(len(positions), bool)
    anomalous[out + 1 :] = True
    turn = _pick(rng, first, n_frames - n_labeled)
    return spec, turn - out - 1, positions, anomalous


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Render a scene; a pure function of ``(config, seed)``.

    Each sprite slot is a horizontal lane of traffic. In a test scene one
    lane is cleared for the anomalous sprite's lifetime.
    """
    rng = np.random.default_rng(seed)
    lanes = _lanes(config.n_sprites, config.canvas)
    anomaly = None
    if config.split == "test" and config.anomaly_rate > 0:
        kind = str(rng.choice(config.anomaly_kinds))
        n_labeled = max(1, int(round(config.anomaly_rate * (config.n_frames - (CUBE_LEN - 1)))))
        lane = int(rng.integers(len(lanes)))
        y = lanes[lane] + rng.uniform(-Y_JITTER, Y_JITTER)
        spec, entry, positions, flags = _anomaly_path(rng, kind, n_labeled, config.n_frames, config.canvas, y,
                                                      _lane_speed(lane))
        anomaly = (lane, spec, entry, positions, flags)
    tracks = []
    for k, y in enumerate(lanes):
        blocked = None
        if anomaly is not None and anomaly[0] == k:
            # leave room ahead of and behind the anomalous sprite
            blocked = (anomaly[2] - ENTRY_GAP[0], anomaly[2] + len(anomaly[3]) + ENTRY_GAP[0])
        tracks.extend(_lane_traffic(rng, k, y, config.n_frames, config.canvas, blocked))
    if anomaly is not None:
        lane, spec, entry, positions, flags = anomaly
        if lane % 2:
            spec, positions = _mirror_spec(spec), _mirror(positions, config.canvas)
        track = _clip(f"a{spec.anomaly_tag[0]}", spec, entry, positions, flags, config.n_frames, config.canvas)
        if track is not None:
            tracks.append(track)
    window = scene_window(config.canvas)
    background = scene_background(len(lanes), config.canvas)
    frames = np.stack([render_frame(tracks, t, config.canvas, window, background) for t in range(config.n_frames)])
    return Scene(frames=frames, tracks=tracks, config=config, seed=seed, window=window)


def scene_from_specs(specs, starts, n_frames: int, canvas: int = CANVAS) -> Scene:
    """Build a scene from explicit sprites (start positions given as (x, y))."""
    tracks = []
    for i, (spec, p0) in enumerate(zip(specs, starts)):
        positions = _linear_positions(p0, spec.velocity, n_frames)
        tracks.append(
            Track(f"s{i}n0", spec, 0, positions, np.full(n_frames, spec.anomaly_tag != "none"))
        )
    frames = np.stack([render_frame(tracks, t, canvas) for t in range(n_frames)])
    return Scene(frames, tracks, None, 0)


# ------------------------------------------------------------------- cubes


def crop_origin(track: Track, t: int, canvas: int = CANVAS):
    """Top-left (row, col) of the crop centred on the track at frame t, or None if it leaves the canvas."""
    x, y = track.position(t)
    col = int(round(x)) - CROP // 2
    row = int(round(y)) - CROP // 2
    if row < 0 or col < 0 or row + CROP > canvas or col + CROP > canvas:
        return None
    return row, col


def extract_cubes(tracks, frames: np.ndarray, video_id: str = "v000"):
    """Slide a 5-frame window (stride 1) over every track.

    Returns ``(cubes, skipped)`` where ``skipped`` counts short tracks and
    crops that fall outside the canvas.
    """
    canvas = frames.shape[-1]
    cubes = []
    skipped = {"short_tracks": 0, "out_of_bounds": 0}
    for track in tracks:
        if len(track.positions) < CUBE_LEN:
            skipped["short_tracks"] += 1
            continue
        for t5 in range(track.start + CUBE_LEN - 1, track.stop):
            origin = crop_origin(track, t5, canvas)
            if origin is None:
                skipped["out_of_bounds"] += 1
                continue
            r, c = origin
            window = frames[t5 - CUBE_LEN + 1 : t5 + 1, :, r : r + CROP, c : c + CROP]
            cubes.append(
                ObjectCube(
                    frames=np.ascontiguousarray(window, dtype=np.float32),
                    video_id=video_id,
                    frame_index=t5,
                    track_id=track.track_id,
                    label=int(track.anomalous[t5 - track.start]),
                    origin=origin,
                )
            )
    return cubes, skipped


def compute_flow(scene: Scene, track: Track, frame_index: int, mode: str = "ground_truth",
                 video_id: str = "v000") -> FlowMap:
    """Object-level flow of frame ``frame_index`` inside the track's crop at that frame."""
    if frame_index <= 0 or not track.alive(frame_index) or not track.alive(frame_index - 1):
        raise ValueError(f"track {track.track_id} has no previous frame at t={frame_index}")
    canvas = scene.frames.shape[-1]
    origin = crop_origin(track, frame_index, canvas)
    if origin is None:
        raise ValueError(f"crop for track {track.track_id} at t={frame_index} leaves the canvas")
    r, c = origin
    if mode == "ground_truth":
        flow = np.zeros((2, canvas, canvas), dtype=np.float64)
        visible = window_mask(scene.window, canvas)
        for other in scene.tracks:
            if not (other.alive(frame_index) and other.alive(frame_index - 1)):
                continue
            alpha = sprite_alpha(other.spec.shape_kind, other.spec.size_px,
                                 other.position(frame_index), canvas)
            support = visible * alpha >= 0.5
            d = other.displacement(frame_index)
            flow[0][support] = d[0]
            flow[1][support] = d[1]
        values = flow[:, r : r + CROP, c : c + CROP]
    elif mode == "frame_diff":
        gray = scene.frames[:, :, r : r + CROP, c : c + CROP].mean(axis=1)
        diff = gray[frame_index] - gray[frame_index - 1]
        values = np.stack([diff, diff])
    else:
        raise ValueError(f"unknown flow mode {mode!r}")
    return FlowMap(np.ascontiguousarray(values, dtype=np.float32), video_id, frame_index, track.track_id)


def frame_labels(cubes, n_frames: int) -> list[int]:
    labels = [0] * n_frames
    for cube in cubes:
        if cube.label:
            labels[cube.frame_index] = 1
    return labels


def build_split(split: str, n_videos: int, seed: int, n_frames: int = 32, n_sprites: int = 3,
                anomaly_rate: float = 0.0, flow_mode: str = "ground_truth"):
    """Generate ``n_videos`` scenes and cut them into cubes and flows.

    Test videos cycle through the anomaly kinds so each kind is equally
    represented.
    """
    seeds = np.random.SeedSequence(seed).generate_state(n_videos)
    cubes, flows, labels = [], [], {}
    for i in range(n_videos):
        kinds = (ANOMALY_KINDS[i % len(ANOMALY_KINDS)],) if split == "test" else ANOMALY_KINDS
        config = SceneConfig(n_frames=n_frames, n_sprites=n_sprites,
                             anomaly_rate=anomaly_rate if split == "test" else 0.0,
                             split=split, anomaly_kinds=kinds)
        scene = generate_scene(config, int(seeds[i]))
        video_id = f"{split}{i:03d}"
        scene_cubes, _ = extract_cubes(scene.tracks, scene.frames, video_id)
        by_id = {t.track_id: t for t in scene.tracks}
        for cube in scene_cubes:
            flows.append(compute_flow(scene, by_id[cube.track_id], cube.frame_index, flow_mode, video_id))
        cubes.extend(scene_cubes)
        labels[video_id] = frame_labels(scene_cubes, n_frames)
    return cubes, flows, labels


# ------------------------------------------------------------- serialization


def write_array(path, array: np.ndarray) -> None:
    """8-byte header (magic, rank, 3 reserved) + 4 uint32 dims + float32 LE payload."""
    array = np.asarray(array, dtype="<f4")
    if array.ndim > 4:
        raise ValueError("at most 4 dimensions supported")
    dims = list(array.shape) + [0] * (4 - array.ndim)
    header = _MAGIC + struct.pack("<B3x4I", array.ndim, *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.tobytes(order="C"))


def read_array(path, expected_shape=None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) < 24 or raw[:4] != _MAGIC:
        raise DatasetError(f"{path}: bad header")
    rank, *dims = struct.unpack("<B3x4I", raw[4:24])
    shape = tuple(dims[:rank])
    payload = raw[24:]
    n = int(np.prod(shape)) if shape else 1
    if len(payload) != 4 * n:
        raise DatasetError(f"{path}: header declares shape {shape} but payload holds {len(payload) // 4} values")
    if expected_shape is not None and shape != tuple(expected_shape):
        raise DatasetError(f"{path}: shape mismatch, expected {tuple(expected_shape)}, found {shape}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def _stem(video_id: str, frame_index: int, track_id: str) -> str:
    return f"{video_id}_{frame_index:04d}_{track_id}"


def make_manifest(split: str, cubes, frame_label_map=None, flow_mode="ground_truth", generator=None):
    entries = []
    for cube in cubes:
        stem = _stem(cube.video_id, cube.frame_index, cube.track_id)
        entries.append({
            "cube": f"cubes/{stem}.bin",
            "flow": f"flows/{stem}.bin",
            "video_id": cube.video_id,
            "frame_index": cube.frame_index,
            "track_id": cube.track_id,
            "label": int(cube.label),
        })
    if cubes:
        stacked = np.stack([c.frames for c in cubes]).astype(np.float64)
        mean = stacked.mean(axis=(0, 1, 3, 4)).tolist()
        std = stacked.std(axis=(0, 1, 3, 4)).tolist()
    else:
        mean, std = [0.0] * 3, [0.0] * 3
    return DatasetManifest(split=split, entries=entries, pixel_mean=mean, pixel_std=std,
                           frame_labels=dict(frame_label_map or {}), flow_mode=flow_mode,
                           generator=dict(generator or {}))


def write_dataset(cubes, flows, manifest: DatasetManifest, root_dir, force: bool = False) -> None:
    root = Path(root_dir)
    manifest.validate()
    if len(cubes) != len(manifest.entries) or len(flows) != len(cubes):
        raise DatasetError("cubes, flows and manifest entries differ in length")
    target = root / "manifest.json"
    if target.exists() and not force:
        raise FileExistsError(f"{target} exists; pass force=True to overwrite")
    (root / "cubes").mkdir(parents=True, exist_ok=True)
    (root / "flows").mkdir(parents=True, exist_ok=True)
    for cube, flow, entry in zip(cubes, flows, manifest.entries):
        if cube.frames.shape != (CUBE_LEN, 3, CROP, CROP):
            raise DatasetError(f"cube {entry['cube']} has shape {cube.frames.shape}")
        if flow.values.shape != (2, CROP, CROP):
            raise DatasetError(f"flow {entry['flow']} has shape {flow.values.shape}")
        write_array(root / entry["cube"], cube.frames)
        write_array(root / entry["flow"], flow.values)
    target.write_text(json.dumps(manifest.to_json(), indent=1))


class Dataset:
    """A dataset on disk; arrays are read on demand."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest

    def __len__(self):
        return len(self.manifest.entries)

    def cube(self, i: int) -> ObjectCube:
        e = self.manifest.entries[i]
        frames = read_array(self.root / e["cube"], (CUBE_LEN, 3, CROP, CROP))
        return ObjectCube(frames, e["video_id"], e["frame_index"], e["track_id"], e["label"])

    def flow(self, i: int) -> FlowMap:
        e = self.manifest.entries[i]
        values = read_array(self.root / e["flow"], (2, CROP, CROP))
        return FlowMap(values, e["video_id"], e["frame_index"], e["track_id"])

    def arrays(self):
        """All cubes and flows as two stacked float32 arrays."""
        n = len(self)
        cubes = np.empty((n, CUBE_LEN, 3, CROP, CROP), dtype=np.float32)
        flows = np.empty((n, 2, CROP, CROP), dtype=np.float32)
        for i, e in enumerate(self.manifest.entries):
            cubes[i] = read_array(self.root / e["cube"], cubes.shape[1:])
            flows[i] = read_array(self.root / e["flow"], flows.shape[1:])
        return cubes, flows

    @property
    def labels(self) -> np.ndarray:
        return np.array([e["label"] for e in self.manifest.entries], dtype=np.int64)


def read_dataset(root_dir) -> Dataset:
    root = Path(root_dir)
    path = root / "manifest.json"
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    manifest = DatasetManifest.from_json(json.loads(path.read_text()))
    if manifest.format_version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format_version {manifest.format_version}")
    manifest.validate()
    for e in manifest.entries:
        for key in ("cube", "flow"):
            if not (root / e[key]).exists():
                raise DatasetError(f"missing file: {root / e[key]}")
    return Dataset(root, manifest)
