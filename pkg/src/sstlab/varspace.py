"""Discrete (elevation, azimuth, lighting) variation space and the
temporally coherent random walks over it.

The grid is 9 x 18 x 6 = 972 points per object. Azimuth is circular
(18 steps of 20 degrees close the turn); elevation and lighting reflect
at their bounds. Walks step exactly one dimension by one unit per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import XorShift128Plus, derive_seed

ELEVATION_STEPS = 9
AZIMUTH_STEPS = 18
LIGHTING_STEPS = 6
GRID_SIZE = ELEVATION_STEPS * AZIMUTH_STEPS * LIGHTING_STEPS  # 972

DIM_SIZES = (ELEVATION_STEPS, AZIMUTH_STEPS, LIGHTING_STEPS)


class InfeasibleRegion(Exception):
    """Raised when no valid test walk exists for an object at the
    requested exclusion distance."""


@dataclass(frozen=True, order=True)
class VariationPoint:
    elevation: int
    azimuth: int
    lighting: int

    def __post_init__(self):
        if not (0 <= self.elevation < ELEVATION_STEPS):
            raise ValueError(f"elevation {self.elevation} out of range")
        if not (0 <= self.azimuth < AZIMUTH_STEPS):
            raise ValueError(f"azimuth {self.azimuth} out of range")
        if not (0 <= self.lighting < LIGHTING_STEPS):
            raise ValueError(f"lighting {self.lighting} out of range")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.elevation, self.azimuth, self.lighting)


@dataclass
class WalkConfig:
    length: int = 20
    dim_step_prob: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    flip_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if any(p < 0 or p > 1 for p in self.dim_step_prob):
            raise ValueError("dim_step_prob entries must be in [0,1]")
        if abs(sum(self.dim_step_prob) - 1.0) > 1e-9:
            raise ValueError("dim_step_prob must sum to 1")
        if not (0 <= self.flip_prob <= 1):
            raise ValueError("flip_prob must be in [0,1]")


@dataclass
class FrameSequence:
    object_id: int
    class_id: int
    points: list[VariationPoint] = field(default_factory=list)


@dataclass
class Batch:
    sequences: list[FrameSequence]
    kind: str  # "train" | "test"
    index: int  # 1-based


def class_of_object(object_id: int, class_mode: str = "five") -> int:
    if class_mode == "five":
        return object_id // 10
    if class_mode == "fifty":
        return object_id
    raise ValueError(f"unknown class_mode {class_mode!r}")


def cityblock_distance(a: VariationPoint, b: VariationPoint) -> int:
    """City-block distance; azimuth measured on the circle of 18 steps."""
    da = abs(a.azimuth - b.azimuth)
    return (
        abs(a.elevation - b.elevation)
        + min(da, AZIMUTH_STEPS - da)
        + abs(a.lighting - b.lighting)
    )


def _move(point: tuple[int, int, int], dim: int, direction: int) -> tuple[tuple[int, int, int], int]:
    """One unit step along dim; azimuth wraps, the others reflect.

    Returns the new point and the (possibly reflected) direction.
    """
    coords = list(point)
    if dim == 1:
        coords[1] = (coords[1] + direction) % AZIMUTH_STEPS
        return tuple(coords), direction
    size = DIM_SIZES[dim]
    nxt = coords[dim] + direction
    if nxt < 0 or nxt >= size:
        direction = -direction
        nxt = coords[dim] + direction
    coords[dim] = nxt
    return tuple(coords), direction


def _neighbors(point: tuple[int, int, int]):
    """All (dim, direction, landing point) moves from a grid point."""
    out = []
    for dim in range(3):
        for direction in (-1, 1):
            nxt, eff = _move(point, dim, direction)
            if nxt != point:
                out.append((dim, direction, nxt, eff))
    return out


def random_walk(
    cfg: WalkConfig,
    start: VariationPoint,
    allowed: set[tuple[int, int, int]] | None = None,
) -> list[VariationPoint]:
    """Walk the grid for cfg.length frames starting at `start`.

    Per transition: pick a dimension with dim_step_prob, flip the stored
    direction of that dimension with flip_prob, then step (wrap/reflect).
    When `allowed` is given, moves landing outside it are resampled
    (bounded), falling back to a uniform pick among the allowed moves.
    Raises InfeasibleRegion on a dead end (no allowed neighbor).
    """
    if allowed is not None and start.as_tuple() not in allowed:
        raise InfeasibleRegion(f"start {start} not in allowed region")
    rng = XorShift128Plus(cfg.seed)
    cur = start.as_tuple()
    directions = [1, 1, 1]
    points = [start]
    cum = np.cumsum(cfg.dim_step_prob)
    for _ in range(cfg.length - 1):
        if allowed is None:
            dim = int(np.searchsorted(cum, rng.uniform(), side="right"))
            dim = min(dim, 2)
            if rng.uniform() < cfg.flip_prob:
                directions[dim] = -directions[dim]
            cur, directions[dim] = _move(cur, dim, directions[dim])
        else:
            options = [(d, dr, nxt, eff) for d, dr, nxt, eff in _neighbors(cur)
                       if nxt in allowed]
            if not options:
                raise InfeasibleRegion(f"dead end at {cur}")
            chosen = None
            for _try in range(100):
                dim = int(np.searchsorted(cum, rng.uniform(), side="right"))
                dim = min(dim, 2)
                flip = rng.uniform() < cfg.flip_prob
                direction = -directions[dim] if flip else directions[dim]
                nxt, eff = _move(cur, dim, direction)
                if nxt in allowed:
                    chosen = (dim, direction, nxt, eff)
                    break
            if chosen is None:
                chosen = options[rng.randrange(len(options))]
            dim, _direction, cur, eff = chosen
            directions[dim] = eff
        points.append(VariationPoint(*cur))
    return points


def _uniform_point(rng: XorShift128Plus) -> VariationPoint:
    return VariationPoint(
        rng.randrange(ELEVATION_STEPS),
        rng.randrange(AZIMUTH_STEPS),
        rng.randrange(LIGHTING_STEPS),
    )


def generate_train_batches(
    n_batches: int,
    per_object_walk: WalkConfig,
    master_seed: int,
    n_objects: int = 50,
    class_mode: str = "five",
) -> list[Batch]:
    """One walk per object per batch; no exclusion distance is enforced
    among training sequences, so frames may repeat across batches."""
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    batches = []
    for b in range(1, n_batches + 1):
        sequences = []
        for obj in range(n_objects):
            seed = derive_seed(master_seed, 1, b, obj)
            start = _uniform_point(XorShift128Plus(derive_seed(seed, 0xA)))
            cfg = WalkConfig(
                length=per_object_walk.length,
                dim_step_prob=per_object_walk.dim_step_prob,
                flip_prob=per_object_walk.flip_prob,
                seed=seed,
            )
            sequences.append(FrameSequence(
                object_id=obj,
                class_id=class_of_object(obj, class_mode),
                points=random_walk(cfg, start),
            ))
        batches.append(Batch(sequences=sequences, kind="train", index=b))
    return batches


def _train_points_by_object(train: list[Batch]) -> dict[int, set[tuple[int, int, int]]]:
    pts: dict[int, set[tuple[int, int, int]]] = {}
    for batch in train:
        for seq in batch.sequences:
            pts.setdefault(seq.object_id, set()).update(
                p.as_tuple() for p in seq.points)
    return pts


def _grid_points() -> list[tuple[int, int, int]]:
    return [(e, a, l)
            for e in range(ELEVATION_STEPS)
            for a in range(AZIMUTH_STEPS)
            for l in range(LIGHTING_STEPS)]


def _pairwise_distances(test_pts: np.ndarray, train_pts: np.ndarray) -> np.ndarray:
    """City-block distance matrix (test x train) with circular azimuth."""
    de = np.abs(test_pts[:, None, 0] - train_pts[None, :, 0])
    da = np.abs(test_pts[:, None, 1] - train_pts[None, :, 1])
    da = np.minimum(da, AZIMUTH_STEPS - da)
    dl = np.abs(test_pts[:, None, 2] - train_pts[None, :, 2])
    return de + da + dl


def allowed_region(
    train: list[Batch], object_id: int, mindist: int
) -> set[tuple[int, int, int]]:
    """Grid points at distance >= mindist from every training point of
    the object."""
    train_pts = _train_points_by_object(train).get(object_id, set())
    if not train_pts:
        return set(_grid_points())
    grid = np.array(_grid_points(), dtype=np.int64)
    tr = np.array(sorted(train_pts), dtype=np.int64)
    dmin = _pairwise_distances(grid, tr).min(axis=1)
    return {tuple(int(v) for v in grid[i]) for i in np.nonzero(dmin >= mindist)[0]}


def generate_test_batches(
    train: list[Batch],
    mindist: int,
    cfg: WalkConfig,
    seed: int,
    n_batches: int = 10,
    max_restarts: int = 1000,
    class_mode: str = "five",
) -> list[Batch]:
    """Test batches mirroring the training structure, with every frame
    at city-block distance >= mindist from all training frames of the
    same object. Dead-ended walks restart from a fresh allowed start."""
    if not train:
        raise ValueError("train batches required")
    if mindist < 1:
        raise ValueError("mindist must be >= 1")
    object_ids = sorted({s.object_id for b in train for s in b.sequences})
    regions: dict[int, list[tuple[int, int, int]]] = {}
    for obj in object_ids:
        allowed = allowed_region(train, obj, mindist)
        if not allowed:
            raise InfeasibleRegion(
                f"object {obj}: no grid point at distance >= {mindist} "
                "from the training frames")
        regions[obj] = sorted(allowed)

    batches = []
    for b in range(1, n_batches + 1):
        sequences = []
        for obj in object_ids:
            allowed_list = regions[obj]
            allowed_set = set(allowed_list)
            points = None
            for attempt in range(max_restarts):
                wseed = derive_seed(seed, 2, b, obj, attempt)
                start = VariationPoint(
                    *allowed_list[XorShift128Plus(
                        derive_seed(wseed, 0xB)).randrange(len(allowed_list))])
                wcfg = WalkConfig(
                    length=cfg.length,
                    dim_step_prob=cfg.dim_step_prob,
                    flip_prob=cfg.flip_prob,
                    seed=wseed,
                )
                try:
                    points = random_walk(wcfg, start, allowed=allowed_set)
                    break
                except InfeasibleRegion:
                    continue
            if points is None:
                raise InfeasibleRegion(
                    f"object {obj}: no valid walk within {max_restarts} "
                    f"restarts at mindist {mindist}")
            sequences.append(FrameSequence(
                object_id=obj,
                class_id=class_of_object(obj, class_mode),
                points=points,
            ))
        batches.append(Batch(sequences=sequences, kind="test", index=b))
    return batches


@dataclass
class MindistReport:
    ok: bool
    violations: list[tuple[int, tuple[int, int, int], tuple[int, int, int], int]]
    comparisons: int = 0


def verify_mindist(
    train: list[Batch], test: list[Batch], mindist: int
) -> MindistReport:
    """Exhaustive per-object pairwise check of the exclusion distance."""
    train_pts = _train_points_by_object(train)
    violations = []
    comparisons = 0
    for batch in test:
        for seq in batch.sequences:
            tr = train_pts.get(seq.object_id)
            if not tr:
                continue
            tr_arr = np.array(sorted(tr), dtype=np.int64)
            te_arr = np.array([p.as_tuple() for p in seq.points], dtype=np.int64)
            d = _pairwise_distances(te_arr, tr_arr)
            comparisons += d.size
            bad = np.argwhere(d < mindist)
            for i, j in bad:
                violations.append((
                    seq.object_id,
                    tuple(int(v) for v in te_arr[i]),
                    tuple(int(v) for v in tr_arr[j]),
                    int(d[i, j]),
                ))
    return MindistReport(ok=not violations, violations=violations,
                         comparisons=comparisons)


def unique_frame_count(batches: list[Batch]) -> int:
    """Distinct (object, point) pairs across the given batches.
    Duplicates are expected because walks are unconstrained."""
    seen = {(s.object_id, p.as_tuple())
            for b in batches for s in b.sequences for p in s.points}
    return len(seen)
