"""Recording-to-feature pipeline: resampling, body-relative velocity
encoding, windowing, and feature standardization.

The body-relative velocity (BRV) features remove the user's placement in
the scene: controller poses are first expressed in the head device's
local frame of their own timestep, then consecutive-frame deltas are
taken. Each feature frame has 18 components:

    [0:4]   head rotational delta quaternion (x, y, z, w)
    [4:7]   left controller position delta in the head frame (m)
    [7:11]  left controller rotational delta quaternion
    [11:14] right controller position delta in the head frame (m)
    [14:18] right controller rotational delta quaternion

A frame pair (t, t+1) produces one feature frame, so an n-frame recording
encodes to n-1 feature frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .geometry import MotionRecording, qcanonical, qconj, qmul, qnormalize, qrotate, qslerp

N_FEATURES = 18
DEFAULT_FPS = 15.0
DEFAULT_WINDOW = 600


@dataclass(frozen=True)
class FeatureWindow:
    """A fixed-length block of feature frames from a single user and condition."""

    window_id: str
    user_id: str
    condition: str
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise InvalidInputError("window features must be a 2-D array")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("window features must be finite")
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.features.shape[0]


def grid_count(t0: float, t_end: float, fps: float) -> int:
    """Number of uniform grid points at 1/fps spanning [t0, t_end].

    The epsilon absorbs float noise when the span is an exact multiple of
    the frame period. Shared by resample() and the streaming monitor so
    both paths see the identical grid.
    """
    return int(np.floor((t_end - t0) * fps + 1e-9)) + 1


def interp_poses(pos_a, pos_b, rot_a, rot_b, u):
    """Shared interpolation kernel; u=0 reproduces the left endpoint exactly
    (the result is then independent of the right endpoint)."""
    u = np.asarray(u, dtype=np.float64)
    pos = pos_a + (pos_b - pos_a) * u[..., None]
    rot = qslerp(rot_a, rot_b, u)
    return pos, rot


def resample(rec: MotionRecording, fps: float) -> MotionRecording:
    """Resample onto a uniform grid at 1/fps spacing spanning the recording.

    Positions interpolate linearly and rotations slerp between the
    bracketing source frames. Grid points that land exactly on a source
    timestamp reproduce that frame.
    """
    if not fps > 0:
        raise InvalidInputError(f"fps must be positive, got {fps}")
    if rec.n_frames < 2:
        raise InvalidInputError("resample needs at least 2 frames")
    t0 = rec.t[0]
    n = grid_count(t0, rec.t[-1], fps)
    grid = t0 + np.arange(n, dtype=np.float64) / fps

    idx = np.searchsorted(rec.t, grid, side="right") - 1
    last = rec.n_frames - 1
    nxt = np.minimum(idx + 1, last)
    # idx == last only when the grid point hits the final timestamp exactly
    denom = np.where(idx == last, 1.0, rec.t[nxt] - rec.t[idx])
    u = np.where(idx == last, 0.0, (grid - rec.t[idx]) / denom)

    out = {}
    for pos_name, rot_name in (("hmd_pos", "hmd_rot"),
                               ("left_pos", "left_rot"),
                               ("right_pos", "right_rot")):
        pos = getattr(rec, pos_name)
        rot = getattr(rec, rot_name)
        out[pos_name], out[rot_name] = interp_poses(pos[idx], pos[nxt], rot[idx], rot[nxt], u)

    return MotionRecording(
        user_id=rec.user_id, condition=rec.condition, height_cm=rec.height_cm,
        t=grid, **out)


def _delta_quat(rot: np.ndarray) -> np.ndarray:
    """Per-step rotational delta q(t)^-1 * q(t+1), canonical sign."""
    return qcanonical(qnormalize(qmul(qconj(rot[:-1]), rot[1:])))


def brv_encode(rec: MotionRecording) -> np.ndarray:
    """Encode a uniformly sampled recording into (n-1, 18) BRV features."""
    if rec.n_frames < 2:
        raise InvalidInputError("encoding needs at least 2 frames")
    dt = np.diff(rec.t)
    mean_dt = float(np.mean(dt))
    if np.max(np.abs(dt - mean_dt)) > 1e-6 * mean_dt + 1e-12:
        raise InvalidInputError("recording is not uniformly sampled; resample first")

    inv_hmd = qconj(rec.hmd_rot)
    feats = np.empty((rec.n_frames - 1, N_FEATURES), dtype=np.float64)
    feats[:, 0:4] = _delta_quat(rec.hmd_rot)
    for dst, (pos_name, rot_name) in ((4, ("left_pos", "left_rot")),
                                      (11, ("right_pos", "right_rot"))):
        rel_pos = qrotate(inv_hmd, getattr(rec, pos_name) - rec.hmd_pos)
        rel_rot = qcanonical(qnormalize(qmul(inv_hmd, getattr(rec, rot_name))))
        feats[:, dst:dst + 3] = rel_pos[1:] - rel_pos[:-1]
        feats[:, dst + 3:dst + 7] = _delta_quat(rel_rot)
    return feats


def make_windows(features: np.ndarray, window_len: int, stride: int, *,
                 user_id: str, condition: str, id_prefix: str | None = None) -> list[FeatureWindow]:
    """Cut features into full-length windows starting at 0, stride, 2*stride, ...

    A trailing partial window is discarded; fewer than window_len features
    yield an empty list.
    """
    if window_len < 1 or stride < 1:
        raise InvalidInputError("window_len and stride must be >= 1")
    features = np.asarray(features)
    prefix = f"{user_id}/{condition}/" if id_prefix is None else id_prefix
    windows = []
    for start in range(0, features.shape[0] - window_len + 1, stride):
        windows.append(FeatureWindow(
            window_id=f"{prefix}{start:06d}",
            user_id=user_id,
            condition=condition,
            features=features[start:start + window_len],
        ))
    return windows


def encode_recording(rec: MotionRecording, fps: float, window_len: int, stride: int,
                     id_prefix: str | None = None) -> list[FeatureWindow]:
    """resample -> BRV encode -> window, the standard preprocessing chain."""
    feats = brv_encode(resample(rec, fps))
    return make_windows(feats, window_len, stride,
                        user_id=rec.user_id, condition=rec.condition, id_prefix=id_prefix)


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-scoring statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ConfigurationError("standardizer mean/std must be matching 1-D arrays")
        bad = np.nonzero(~(std > 0.0))[0]
        if bad.size:
            raise ConfigurationError(f"degenerate feature at index {bad[0]}: zero variance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def transform_array(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features)
        return ((features - self.mean) / self.std).astype(np.float32)

    def transform(self, window: FeatureWindow) -> FeatureWindow:
        return FeatureWindow(
            window_id=window.window_id, user_id=window.user_id,
            condition=window.condition,
            features=self.transform_array(window.features.astype(np.float64)))


def fit_standardizer(windows: list[FeatureWindow]) -> Standardizer:
    """Fit per-feature mean/std (population convention) over all window frames."""
    if len(windows) < 2:
        raise InvalidInputError("standardizer needs at least 2 windows to fit")
    stacked = np.concatenate([w.features.astype(np.float64) for w in windows], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    bad = np.nonzero(std <= 0.0)[0]
    if bad.size:
        raise ConfigurationError(f"degenerate feature at index {bad[0]}: zero variance")
    return Standardizer(mean=mean, std=std)


def apply_standardizer(s: Standardizer, window: FeatureWindow) -> FeatureWindow:
    return s.transform(window)
