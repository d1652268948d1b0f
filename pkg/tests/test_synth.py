import numpy as np
import pytest

from motiondrift.analytics import hand_over_head_fraction, head_pitch_stats
from motiondrift.errors import InvalidInputError
from motiondrift.io import read_manifest
from motiondrift.synth import (
    CohortSpec,
    ConditionShift,
    SyntheticUserProfile,
    default_condition_shifts,
    draw_profiles,
    generate_cohort,
    generate_recording,
    save_cohort,
)

PROFILE = SyntheticUserProfile(
    user_id="u00", height_cm=176.0, reach_cadence_hz=0.8,
    hand_raise_rate_per_min=4.0, baseline_pitch_deg=12.0,
    sway_amplitude_m=0.12, pos_noise_m=0.002, rot_noise_deg=0.3,
    style_seed=777)

NEUTRAL = ConditionShift("actual")


class TestGenerateRecording:
    def test_deterministic(self):
        a = generate_recording(PROFILE, NEUTRAL, 30.0, 15.0, seed=5)
        b = generate_recording(PROFILE, NEUTRAL, 30.0, 15.0, seed=5)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.hmd_pos, b.hmd_pos)
        np.testing.assert_array_equal(a.hmd_rot, b.hmd_rot)
        np.testing.assert_array_equal(a.left_pos, b.left_pos)
        np.testing.assert_array_equal(a.right_rot, b.right_rot)

    def test_different_seed_differs(self):
        a = generate_recording(PROFILE, NEUTRAL, 30.0, 15.0, seed=5)
        b = generate_recording(PROFILE, NEUTRAL, 30.0, 15.0, seed=6)
        assert not np.array_equal(a.hmd_pos, b.hmd_pos)

    def test_frame_count_and_rate(self):
        rec = generate_recording(PROFILE, NEUTRAL, 30.0, 15.0, seed=0)
        assert rec.n_frames == 450
        np.testing.assert_allclose(np.diff(rec.t), 1 / 15, atol=1e-12)

    def test_pitch_offset_recovered_by_analytics(self):
        base = generate_recording(PROFILE, NEUTRAL, 120.0, 15.0, seed=3)
        shifted = generate_recording(
            PROFILE, ConditionShift("tall", pitch_offset_deg=10.0), 120.0, 15.0, seed=3)
        mean_base, _ = head_pitch_stats(base)
        mean_shift, _ = head_pitch_stats(shifted)
        assert mean_shift - mean_base == pytest.approx(10.0, abs=0.5)

    def test_hand_raise_multiplier_scales_fraction(self):
        base = generate_recording(PROFILE, NEUTRAL, 240.0, 15.0, seed=9)
        doubled = generate_recording(
            PROFILE, ConditionShift("busy", hand_raise_multiplier=2.0), 240.0, 15.0, seed=9)
        f1 = hand_over_head_fraction(base, PROFILE.height_cm)
        f2 = hand_over_head_fraction(doubled, PROFILE.height_cm)
        assert f1 > 0.0
        assert f2 >= 1.5 * f1

    def test_too_short_duration_rejected(self):
        with pytest.raises(InvalidInputError):
            generate_recording(PROFILE, NEUTRAL, 0.05, 15.0, seed=0)

    def test_shift_monotonicity(self):
        pitch_means, fractions = [], []
        for level in range(3):
            shift = ConditionShift(f"level{level}",
                                   pitch_offset_deg=5.0 * level,
                                   hand_raise_multiplier=1.0 + 0.5 * level)
            rec = generate_recording(PROFILE, shift, 180.0, 15.0, seed=11)
            pitch_means.append(head_pitch_stats(rec)[0])
            fractions.append(hand_over_head_fraction(rec, PROFILE.height_cm))
        assert pitch_means[0] < pitch_means[1] < pitch_means[2]
        assert fractions[0] < fractions[1] < fractions[2]


class TestCohort:
    def test_default_spec_counts(self):
        spec = CohortSpec(n_users=12, duration_s=300.0, fps=15.0, master_seed=1)
        recs, profiles = generate_cohort(spec)
        assert len(recs) == 36
        assert len(profiles) == 12
        assert all(r.n_frames == 4500 for r in recs)
        assert {r.condition for r in recs} == {"short", "actual", "tall"}

    def test_profiles_have_distinct_styles(self):
        spec = CohortSpec(n_users=6, duration_s=10.0, master_seed=2)
        profiles = draw_profiles(spec)
        cadences = [p.reach_cadence_hz for p in profiles]
        assert len(set(cadences)) == len(cadences)
        # mean pairwise style distance strictly positive
        params = np.array([[p.height_cm, p.reach_cadence_hz, p.hand_raise_rate_per_min,
                            p.baseline_pitch_deg, p.sway_amplitude_m] for p in profiles])
        dists = [np.linalg.norm(params[i] - params[j])
                 for i in range(len(params)) for j in range(i + 1, len(params))]
        assert np.mean(dists) > 0.0

    def test_recordings_satisfy_core_invariants(self):
        spec = CohortSpec(n_users=3, duration_s=20.0, master_seed=3)
        recs, _ = generate_cohort(spec)
        for rec in recs:
            assert np.all(np.diff(rec.t) > 0)
            for rot in (rec.hmd_rot, rec.left_rot, rec.right_rot):
                np.testing.assert_allclose(np.linalg.norm(rot, axis=1), 1.0, atol=1e-9)
                assert np.all(rot[:, 3] >= 0)

    def test_cohort_generation_deterministic(self):
        spec = CohortSpec(n_users=3, duration_s=15.0, master_seed=4)
        a, _ = generate_cohort(spec)
        b, _ = generate_cohort(spec)
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.hmd_pos, rb.hmd_pos)
            np.testing.assert_array_equal(ra.left_rot, rb.left_rot)

    def test_save_cohort_writes_manifest_and_logs(self, tmp_path):
        spec = CohortSpec(n_users=2, duration_s=5.0, master_seed=5)
        recs, _ = generate_cohort(spec)
        manifest = save_cohort(recs, tmp_path / "cohort")
        entries = read_manifest(manifest)
        assert len(entries) == 6
        for e in entries:
            assert (tmp_path / "cohort" / e.path).exists()

    def test_save_cohort_byte_identical_rerun(self, tmp_path):
        spec = CohortSpec(n_users=2, duration_s=5.0, master_seed=6)
        for name in ("a", "b"):
            recs, _ = generate_cohort(spec)
            save_cohort(recs, tmp_path / name)
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_spec_validation(self):
        with pytest.raises(InvalidInputError):
            CohortSpec(n_users=1)
        assert len(default_condition_shifts()) == 3


class TestProfileValidation:
    def test_height_bounds(self):
        with pytest.raises(InvalidInputError):
            SyntheticUserProfile("u", 100.0, 1.0, 1.0, 0.0, 0.1, 0.001, 0.1, 1)

    def test_negative_rate_rejected(self):
        with pytest.raises(InvalidInputError):
            SyntheticUserProfile("u", 170.0, -1.0, 1.0, 0.0, 0.1, 0.001, 0.1, 1)

    def test_multiplier_positive(self):
        with pytest.raises(InvalidInputError):
            ConditionShift("c", hand_raise_multiplier=0.0)
