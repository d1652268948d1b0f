"""Shared builders for randomized recordings and rigid-motion helpers."""

import math

import numpy as np
import pytest

from motiondrift.geometry import MotionRecording, qaxis_angle, qmul, qrotate


def smooth_signal(rng, t, amp, f_lo=0.1, f_hi=1.2, components=3):
    """Band-limited random signal: a few seeded sinusoids."""
    out = np.zeros_like(t)
    for _ in range(components):
        f = rng.uniform(f_lo, f_hi)
        phase = rng.uniform(0, 2 * math.pi)
        out += rng.uniform(0.3, 1.0) * amp * np.sin(2 * math.pi * f * t + phase)
    return out


def random_recording(rng, n_frames=40, fps=15.0, user_id="u0", condition="c0",
                     height_cm=170.0):
    """A smooth random recording with valid rotations everywhere."""
    t = np.arange(n_frames) / fps

    def poses(base):
        pos = np.stack([
            base[0] + smooth_signal(rng, t, 0.2),
            base[1] + smooth_signal(rng, t, 0.1),
            base[2] + smooth_signal(rng, t, 0.2),
        ], axis=1)
        yaw = np.radians(smooth_signal(rng, t, 25.0))
        pitch = np.radians(smooth_signal(rng, t, 15.0))
        roll = np.radians(smooth_signal(rng, t, 8.0))
        rot = qmul(qaxis_angle([0, 1, 0], yaw),
                   qmul(qaxis_angle([1, 0, 0], pitch), qaxis_angle([0, 0, 1], roll)))
        return pos, rot

    hmd_pos, hmd_rot = poses((0.0, 1.6, 0.0))
    left_pos, left_rot = poses((-0.3, 1.1, 0.2))
    right_pos, right_rot = poses((0.3, 1.1, 0.2))
    return MotionRecording(
        user_id=user_id, condition=condition, height_cm=height_cm,
        t=t, hmd_pos=hmd_pos, hmd_rot=hmd_rot,
        left_pos=left_pos, left_rot=left_rot,
        right_pos=right_pos, right_rot=right_rot)


def apply_rigid_transform(rec, rot_quat, translation):
    """Apply one global rotation+translation to every device pose."""
    rot_quat = np.asarray(rot_quat, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)

    def move_pos(p):
        return qrotate(rot_quat, p) + translation

    def move_rot(r):
        q = qmul(rot_quat, r)
        return q / np.linalg.norm(q, axis=-1, keepdims=True)

    return MotionRecording(
        user_id=rec.user_id, condition=rec.condition, height_cm=rec.height_cm,
        t=rec.t.copy(),
        hmd_pos=move_pos(rec.hmd_pos), hmd_rot=move_rot(rec.hmd_rot),
        left_pos=move_pos(rec.left_pos), left_rot=move_rot(rec.left_rot),
        right_pos=move_pos(rec.right_pos), right_rot=move_rot(rec.right_rot))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- independent brute-force retrieval oracles -----------------------------

def oracle_neighbor_order(query, refs):
    """Plain-loop neighbor ranking; ties broken by reference index."""
    dists = [(float(np.sum((np.asarray(query) - np.asarray(r)) ** 2)), j)
             for j, r in enumerate(refs)]
    return [j for _, j in sorted(dists)]


def oracle_precision_at_1(query_emb, query_users, ref_emb, ref_users):
    hits = 0
    for q, user in zip(query_emb, query_users):
        order = oracle_neighbor_order(q, ref_emb)
        hits += ref_users[order[0]] == user
    return hits / len(query_users)


def oracle_r_precision(query_emb, query_users, ref_emb, ref_users):
    scores = []
    for q, user in zip(query_emb, query_users):
        r = sum(1 for u in ref_users if u == user)
        if r == 0:
            continue
        order = oracle_neighbor_order(q, ref_emb)
        top = [ref_users[j] for j in order[:r]]
        scores.append(sum(1 for u in top if u == user) / r)
    return sum(scores) / len(scores)


def small_cohort_windows(n_users=6, duration_s=80.0, fps=15.0, window_len=200,
                         stride=100, master_seed=99, conditions=None):
    """Encoded windows for a small synthetic cohort."""
    from motiondrift.encoding import encode_recording
    from motiondrift.synth import CohortSpec, ConditionShift, generate_cohort

    conditions = conditions or (ConditionShift("actual"),)
    spec = CohortSpec(n_users=n_users, conditions=tuple(conditions),
                      duration_s=duration_s, fps=fps, master_seed=master_seed)
    recordings, _ = generate_cohort(spec)
    windows = []
    for rec in recordings:
        windows.extend(encode_recording(rec, fps, window_len, stride))
    return windows


def small_cohort_train_val(n_users=8, n_train=4, duration_s=120.0, fps=15.0,
                           window_len=200, master_seed=99):
    """Train windows (half-window stride) and evaluation windows
    (non-overlapping) for a small cohort, split by user."""
    train_all = small_cohort_windows(n_users, duration_s, fps, window_len,
                                     stride=window_len // 2, master_seed=master_seed)
    eval_all = small_cohort_windows(n_users, duration_s, fps, window_len,
                                    stride=window_len, master_seed=master_seed)
    users = sorted({w.user_id for w in train_all})
    train_users = set(users[:n_train])
    return ([w for w in train_all if w.user_id in train_users],
            [w for w in eval_all if w.user_id not in train_users])


def noisy_cohort_train_val(n_users=8, n_train=4, duration_s=120.0, fps=15.0,
                           window_len=200, master_seed=99,
                           pos_noise=0.030, rot_noise=3.5):
    """Like small_cohort_train_val but with heavy per-frame jitter, so an
    untrained model sits near chance and training visibly matters."""
    import dataclasses

    from motiondrift.encoding import encode_recording
    from motiondrift.synth import (CohortSpec, ConditionShift, draw_profiles,
                                   generate_recording)

    spec = CohortSpec(n_users=n_users, conditions=(ConditionShift("actual"),),
                      duration_s=duration_s, fps=fps, master_seed=master_seed)
    profiles = [dataclasses.replace(p, pos_noise_m=pos_noise, rot_noise_deg=rot_noise)
                for p in draw_profiles(spec)]
    train_w, eval_w = [], []
    for i, prof in enumerate(profiles):
        rec = generate_recording(prof, spec.conditions[0], duration_s, fps,
                                 seed=master_seed * 1000 + i)
        sink = train_w if i < n_train else eval_w
        stride = window_len // 2 if i < n_train else window_len
        sink.extend(encode_recording(rec, fps, window_len, stride))
    return train_w, eval_w
