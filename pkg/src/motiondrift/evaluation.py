"""Identification error rates across condition pairings: the behavior-change
readout, plus level-difference grouping, bootstrap uncertainty, seed
robustness, and a streaming monitor.

Conventions shared with the spec'd evaluation protocol:

* Distances are Euclidean on the unit-norm embeddings; nearest-reference
  ties (exact float equality) break by lexical (user_id, window_id).
* Same-condition cells split each user-condition's windows alternately
  into reference/query halves so the diagonal never self-matches;
  cross-condition cells use every window on both sides.
* error_rate is literally 1 - accuracy over the same identify() path.

The streaming monitor replays the preprocessing chain incrementally with
the identical kernels (grid arithmetic, interpolation, feature encoding,
standardization, batch-1 inference), so emissions equal offline batch
evaluation bit-exactly.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    FeatureWindow,
    Standardizer,
    brv_encode,
    grid_count,
    interp_poses,
)
from .errors import ConfigurationError, InvalidInputError
from .geometry import MotionFrame, MotionRecording
from .model import MotionEmbedder, embed_windows

EMB_DTYPE = np.float64


@dataclass
class ReferenceSet:
    """Labeled embeddings; serves as both reference and query container."""

    user_ids: np.ndarray
    conditions: np.ndarray
    window_ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.user_ids = np.asarray(self.user_ids)
        self.conditions = np.asarray(self.conditions)
        self.window_ids = np.asarray(self.window_ids)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        n = len(self.user_ids)
        if n == 0:
            raise InvalidInputError("embedding set is empty")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != n \
                or len(self.conditions) != n or len(self.window_ids) != n:
            raise InvalidInputError("embedding set arrays have mismatched shapes")
        norms = np.linalg.norm(self.vectors.astype(EMB_DTYPE), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise InvalidInputError("embeddings must be unit-norm")

    def __len__(self) -> int:
        return len(self.user_ids)

    def subset(self, mask: np.ndarray) -> "ReferenceSet":
        return ReferenceSet(self.user_ids[mask], self.conditions[mask],
                            self.window_ids[mask], self.vectors[mask])

    @classmethod
    def from_windows(cls, model: MotionEmbedder, standardizer: Standardizer,
                     windows: list[FeatureWindow]) -> "ReferenceSet":
        if not windows:
            raise InvalidInputError("cannot build an embedding set from zero windows")
        feats = np.stack([standardizer.transform(w).features for w in windows])
        return cls(
            user_ids=np.array([w.user_id for w in windows]),
            conditions=np.array([w.condition for w in windows]),
            window_ids=np.array([w.window_id for w in windows]),
            vectors=embed_windows(model, feats))


def nearest_reference(query: np.ndarray, refs: ReferenceSet) -> tuple[str, str, float]:
    """(user_id, window_id, distance) of the nearest reference; exact-tie
    break by lexical (user_id, window_id)."""
    q = np.asarray(query, dtype=EMB_DTYPE)
    d2 = np.sum((refs.vectors.astype(EMB_DTYPE) - q) ** 2, axis=1)
    best = d2.min()
    ties = np.nonzero(d2 == best)[0]
    if len(ties) > 1:
        keys = sorted((str(refs.user_ids[i]), str(refs.window_ids[i]), i) for i in ties)
        idx = keys[0][2]
    else:
        idx = int(ties[0])
    return str(refs.user_ids[idx]), str(refs.window_ids[idx]), float(np.sqrt(best))


def identify(query: np.ndarray, refs: ReferenceSet) -> str:
    """user_id of the globally nearest reference embedding."""
    return nearest_reference(query, refs)[0]


def correctness(queries: ReferenceSet, refs: ReferenceSet) -> np.ndarray:
    """Per-query indicator: did identify() return the true user?"""
    preds = np.array([identify(v, refs) for v in queries.vectors])
    return preds == queries.user_ids


def error_rate(queries: ReferenceSet, refs: ReferenceSet) -> float:
    """1 - identification accuracy."""
    return 1.0 - float(np.mean(correctness(queries, refs)))


@dataclass
class ErrorRateMatrix:
    """Per-(query condition, reference condition) identification error rates."""

    conditions: tuple[str, ...]
    users: tuple[str, ...]
    per_user: dict[str, np.ndarray]
    mean: np.ndarray
    # per-cell cohort-level correctness indicators, for bootstrap
    correctness: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    query_users: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def cell(self, query_condition: str, ref_condition: str) -> float:
        qi = self.conditions.index(query_condition)
        ri = self.conditions.index(ref_condition)
        return float(self.mean[qi, ri])


def _diagonal_split(embeddings: ReferenceSet, condition: str):
    """Alternate each user-condition's windows into (reference, query) halves."""
    in_cond = embeddings.conditions == condition
    ref_mask = np.zeros(len(embeddings), dtype=bool)
    query_mask = np.zeros(len(embeddings), dtype=bool)
    for user in np.unique(embeddings.user_ids[in_cond]):
        idx = np.nonzero(in_cond & (embeddings.user_ids == user))[0]
        ordered = idx[np.argsort(embeddings.window_ids[idx], kind="stable")]
        ref_mask[ordered[0::2]] = True
        query_mask[ordered[1::2]] = True
    return ref_mask, query_mask


def condition_matrix(embeddings: ReferenceSet,
                     conditions: list[str] | None = None) -> ErrorRateMatrix:
    """Identification error rate for every (query, reference) condition pair.

    Users lacking windows in some condition are excluded with a warning.
    References always pool all included users, so each cell is a full
    identification problem; per-user rates average that user's queries.
    """
    conds = tuple(conditions) if conditions else tuple(sorted(set(embeddings.conditions)))
    missing = set(embeddings.conditions) - set(conds)
    if missing:
        raise ConfigurationError(f"conditions {sorted(missing)} not in declared order")

    users = []
    for user in sorted(set(embeddings.user_ids)):
        have = set(embeddings.conditions[embeddings.user_ids == user])
        if have >= set(conds):
            users.append(user)
        else:
            warnings.warn(f"user {user} lacks conditions {sorted(set(conds) - have)}; excluded",
                          stacklevel=2)
    if not users:
        raise InvalidInputError("no user has windows in every condition")
    keep = np.isin(embeddings.user_ids, users)
    embeddings = embeddings.subset(keep)

    k = len(conds)
    per_user = {u: np.full((k, k), np.nan) for u in users}
    mean = np.zeros((k, k))
    corr: dict[tuple[str, str], np.ndarray] = {}
    q_users: dict[tuple[str, str], np.ndarray] = {}
    for qi, qc in enumerate(conds):
        for ri, rc in enumerate(conds):
            if qc == rc:
                ref_mask, query_mask = _diagonal_split(embeddings, qc)
            else:
                ref_mask = embeddings.conditions == rc
                query_mask = embeddings.conditions == qc
            refs = embeddings.subset(ref_mask)
            queries = embeddings.subset(query_mask)
            ok = correctness(queries, refs)
            corr[(qc, rc)] = ok
            q_users[(qc, rc)] = queries.user_ids.copy()
            cell_rates = []
            for user in users:
                mine = queries.user_ids == user
                if not mine.any():
                    warnings.warn(f"user {user} has no queries in cell ({qc}, {rc})",
                                  stacklevel=2)
                    continue
                rate = 1.0 - float(np.mean(ok[mine]))
                per_user[user][qi, ri] = rate
                cell_rates.append(rate)
            mean[qi, ri] = float(np.mean(cell_rates))
    return ErrorRateMatrix(conditions=conds, users=tuple(users), per_user=per_user,
                           mean=mean, correctness=corr, query_users=q_users)


def evaluate_condition_matrix(model: MotionEmbedder, standardizer: Standardizer,
                              windows: list[FeatureWindow],
                              conditions: list[str] | None = None) -> ErrorRateMatrix:
    return condition_matrix(ReferenceSet.from_windows(model, standardizer, windows),
                            conditions=conditions)


@dataclass(frozen=True)
class LevelGroup:
    level: int
    cells: tuple[tuple[str, str], ...]
    weight: int
    per_user: dict[str, float]

    @property
    def values(self) -> np.ndarray:
        return np.array([self.per_user[u] for u in sorted(self.per_user)])

    def summary(self) -> tuple[float, float]:
        """Mean and sample standard deviation of the per-user rates."""
        v = self.values
        return float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


@dataclass(frozen=True)
class LevelGroups:
    """Cells partitioned by |rank(query) - rank(reference)| in {0, 1, 2}."""

    groups: dict[int, LevelGroup]

    @property
    def group1(self) -> LevelGroup:
        return self.groups[0]

    @property
    def group2(self) -> LevelGroup:
        return self.groups[1]

    @property
    def group3(self) -> LevelGroup | None:
        return self.groups.get(2)


def group_levels(matrix: ErrorRateMatrix, ordering: list[str]) -> LevelGroups:
    """Assign matrix cells to level-difference groups with cell-count weights."""
    unknown = set(matrix.conditions) - set(ordering)
    if unknown:
        raise ConfigurationError(f"conditions {sorted(unknown)} missing from ordering")
    rank = {c: i for i, c in enumerate(ordering) if c in matrix.conditions}
    cells_by_level: dict[int, list[tuple[str, str]]] = {}
    for qc in matrix.conditions:
        for rc in matrix.conditions:
            level = abs(rank[qc] - rank[rc])
            if level > 2:
                raise ConfigurationError(
                    "more than three level groups (over 3 ordered conditions) unsupported")
            cells_by_level.setdefault(level, []).append((qc, rc))
    groups = {}
    for level, cells in sorted(cells_by_level.items()):
        per_user = {}
        for user in matrix.users:
            m = matrix.per_user[user]
            vals = [m[matrix.conditions.index(qc), matrix.conditions.index(rc)]
                    for qc, rc in cells]
            vals = [v for v in vals if np.isfinite(v)]
            if vals:
                per_user[user] = float(np.mean(vals))
        groups[level] = LevelGroup(level=level, cells=tuple(cells),
                                   weight=len(cells), per_user=per_user)
    return LevelGroups(groups=groups)


@dataclass(frozen=True)
class BootstrapStats:
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    n_resamples: int


def bootstrap(indicators, n_resamples: int, seed: int) -> BootstrapStats:
    """Resample per-query correctness with replacement; accuracy statistics."""
    indicators = np.asarray(indicators, dtype=np.float64)
    if indicators.size == 0:
        raise InvalidInputError("cannot bootstrap an empty indicator list")
    if n_resamples < 1:
        raise InvalidInputError("n_resamples must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, indicators.size, size=(n_resamples, indicators.size))
    accs = indicators[idx].mean(axis=1)
    sd = float(np.std(accs, ddof=1)) if n_resamples > 1 else 0.0
    return BootstrapStats(
        mean=float(np.mean(accs)), sd=sd,
        ci_low=float(np.percentile(accs, 2.5)),
        ci_high=float(np.percentile(accs, 97.5)),
        n_resamples=n_resamples)


@dataclass(frozen=True)
class SeedRobustnessReport:
    seeds: tuple[int, ...]
    conditions: tuple[str, ...]
    matrices: tuple[np.ndarray, ...]
    spread: np.ndarray  # per-cell max - min across seeds


def seed_robustness(run_pipeline, seeds) -> SeedRobustnessReport:
    """Run a full train+evaluate pipeline per seed; report per-cell spread."""
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 2:
        raise InvalidInputError("seed robustness needs at least 2 seeds")
    matrices = []
    conditions = None
    for s in seeds:
        matrix = run_pipeline(s)
        if conditions is None:
            conditions = matrix.conditions
        elif matrix.conditions != conditions:
            raise InvalidInputError("pipeline returned inconsistent condition sets")
        matrices.append(matrix.mean.copy())
    stack = np.stack(matrices)
    spread = stack.max(axis=0) - stack.min(axis=0)
    return SeedRobustnessReport(seeds=seeds, conditions=conditions,
                                matrices=tuple(matrices), spread=spread)


# ---------------------------------------------------------------------------
# streaming monitor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonitorRecord:
    window_end_t: float
    user_id: str
    distance: float
    match: bool
    latency_s: float


@dataclass
class MonitorSummary:
    frames_seen: int = 0
    frames_skipped: int = 0
    emissions: int = 0


class StreamMonitor:
    """Sliding-window drift detector over a live frame stream.

    Frames are resampled onto the model's native grid, encoded, and every
    completed stride emits the nearest-reference user, its distance, and a
    match flag against the monitored user. All kernels are shared with the
    offline batch path, so replaying a recording reproduces batch
    evaluation bit-exactly.
    """

    def __init__(self, model: MotionEmbedder, standardizer: Standardizer,
                 fps: float, window_len: int, stride: int,
                 refs: ReferenceSet, expected_user: str):
        if stride < 1 or window_len < 1:
            raise InvalidInputError("window_len and stride must be >= 1")
        self._model = model
        self._standardizer = standardizer
        self._fps = float(fps)
        self._window_len = int(window_len)
        self._stride = int(stride)
        self._refs = refs
        self._expected_user = expected_user
        self._t0: float | None = None
        self._prev_raw: MotionFrame | None = None
        self._grid_i = 0
        self._prev_grid: tuple | None = None
        self._features: list[np.ndarray] = []  # rolling, at most window_len rows
        self._n_features = 0
        self.summary = MonitorSummary()

    def _frame_valid(self, frame: MotionFrame) -> bool:
        if self._prev_raw is not None and frame.t <= self._prev_raw.t:
            return False
        return True

    @staticmethod
    def _frame_arrays(frame: MotionFrame):
        return (
            np.array([frame.hmd.position.as_array(), frame.left.position.as_array(),
                      frame.right.position.as_array()]),
            np.array([frame.hmd.rotation.as_array(), frame.left.rotation.as_array(),
                      frame.right.rotation.as_array()]),
        )

    def _emit_grid_point(self, pos, rot, t_grid: float) -> list[MonitorRecord]:
        out = []
        if self._prev_grid is not None:
            prev_t, prev_pos, prev_rot = self._prev_grid
            pair = MotionRecording(
                user_id="stream", condition="stream", height_cm=170.0,
                t=np.array([prev_t, t_grid]),
                hmd_pos=np.stack([prev_pos[0], pos[0]]),
                hmd_rot=np.stack([prev_rot[0], rot[0]]),
                left_pos=np.stack([prev_pos[1], pos[1]]),
                left_rot=np.stack([prev_rot[1], rot[1]]),
                right_pos=np.stack([prev_pos[2], pos[2]]),
                right_rot=np.stack([prev_rot[2], rot[2]]))
            self._features.append(brv_encode(pair)[0])
            if len(self._features) > self._window_len:
                self._features.pop(0)
            self._n_features += 1
            if (self._n_features >= self._window_len
                    and (self._n_features - self._window_len) % self._stride == 0):
                out.append(self._emit_window(t_grid))
        self._prev_grid = (t_grid, pos, rot)
        return out

    def _emit_window(self, t_end: float) -> MonitorRecord:
        start = time.perf_counter()
        window = FeatureWindow(window_id=f"stream/{self._n_features - self._window_len:06d}",
                               user_id="stream", condition="stream",
                               features=np.stack(self._features))
        std = self._standardizer.transform(window)
        emb = embed_windows(self._model, std.features[None])[0]
        user, _, dist = nearest_reference(emb, self._refs)
        latency = time.perf_counter() - start
        self.summary.emissions += 1
        return MonitorRecord(window_end_t=t_end, user_id=user, distance=dist,
                             match=user == self._expected_user, latency_s=latency)

    def feed(self, frame: MotionFrame) -> list[MonitorRecord]:
        """Ingest one raw frame; returns any completed-window emissions."""
        self.summary.frames_seen += 1
        if not self._frame_valid(frame):
            self.summary.frames_skipped += 1
            return []
        out = []
        if self._t0 is None:
            self._t0 = frame.t
        pos, rot = self._frame_arrays(frame)
        while True:
            t_grid = self._t0 + self._grid_i / self._fps
            if not t_grid <= frame.t:
                break
            if self._prev_raw is None or t_grid == frame.t:
                g_pos, g_rot = interp_poses(pos, pos, rot, rot, 0.0)
            else:
                prev_pos, prev_rot = self._frame_arrays(self._prev_raw)
                u = (t_grid - self._prev_raw.t) / (frame.t - self._prev_raw.t)
                g_pos, g_rot = interp_poses(prev_pos, pos, prev_rot, rot, u)
            out.extend(self._emit_grid_point(g_pos, g_rot, t_grid))
            self._grid_i += 1
        self._prev_raw = frame
        return out

    def finish(self) -> list[MonitorRecord]:
        """Flush trailing grid points covered by the epsilon of the batch grid."""
        out = []
        if self._prev_raw is None or self._t0 is None:
            return out
        total = grid_count(self._t0, self._prev_raw.t, self._fps)
        pos, rot = self._frame_arrays(self._prev_raw)
        while self._grid_i < total:
            t_grid = self._t0 + self._grid_i / self._fps
            g_pos, g_rot = interp_poses(pos, pos, rot, rot, 0.0)
            out.extend(self._emit_grid_point(g_pos, g_rot, t_grid))
            self._grid_i += 1
        return out
