"""Positional masks, condition stacks, autoregression plans, and the
two-stage window split."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragdiff._conditioning import (
    FixedContext,
    build_condition,
    mask_value,
    plan_autoregression,
    select_stage_windows,
    window_slot,
)


class TestMaskValue:
    def test_k6_table(self):
        values = [mask_value(j, 6) for j in range(-1, 7)]
        expected = [j / 7 for j in range(8)]  # 0, 1/7, ..., 1
        assert values == expected

    def test_u_reads_zero_and_endpoint_reads_one(self):
        assert mask_value(-1, 3) == 0.0
        assert mask_value(3, 3) == 1.0

    def test_label_bounds(self):
        with pytest.raises(ValueError):
            mask_value(-2, 6)
        with pytest.raises(ValueError):
            mask_value(7, 6)
        with pytest.raises(ValueError):
            mask_value(0, 0)

    @given(st.integers(min_value=1, max_value=64), st.data())
    @settings(max_examples=30, deadline=None)
    def test_strictly_increasing_in_j(self, k, data):
        j = data.draw(st.integers(min_value=-1, max_value=k - 1))
        assert mask_value(j, k) < mask_value(j + 1, k)
        assert 0.0 <= mask_value(j, k) <= 1.0


class TestWindowSlot:
    def test_low_labels_sit_at_their_index(self):
        assert [window_slot(j, 6, 8) for j in range(6)] == [0, 1, 2, 3, 4, 5]

    def test_top_label_sits_at_the_last_slot(self):
        assert window_slot(6, 6, 8) == 7
        assert window_slot(3, 3, 8) == 7

    def test_rejects_window_too_short_for_labels(self):
        with pytest.raises(ValueError):
            window_slot(0, 6, 6)
        with pytest.raises(ValueError):
            window_slot(-1, 6, 8)


class TestBuildCondition:
    def _frame(self, fill, c=3, h=4, w=4):
        return np.full((c, h, w), fill, dtype=np.float32)

    def test_layout_frame_then_mask_per_entry(self):
        f0, f1 = self._frame(0.25), self._frame(-0.5)
        cond = build_condition([f0, f1], [0, 1], k=6, global_source=None)
        assert cond.y_m.shape == (2 * 4, 4, 4)
        np.testing.assert_array_equal(cond.y_m[0:3], f0)
        assert np.all(cond.y_m[3] == np.float32(1 / 7))
        np.testing.assert_array_equal(cond.y_m[4:7], f1)
        assert np.all(cond.y_m[7] == np.float32(2 / 7))

    def test_order_invariant(self):
        f0, f1 = self._frame(0.25), self._frame(-0.5)
        a = build_condition([f0, f1], [0, 6], k=6, global_source=None)
        b = build_condition([f1, f0], [6, 0], k=6, global_source=None)
        np.testing.assert_array_equal(a.y_m, b.y_m)

    def test_u_entries_are_zero_frame_and_zero_mask(self):
        cond = build_condition(
            [self._frame(0.5), None], [0, -1], k=6, global_source=None
        )
        # sorted by label: U first
        np.testing.assert_array_equal(cond.y_m[0:4], np.zeros((4, 4, 4)))
        np.testing.assert_array_equal(cond.y_m[4:7], self._frame(0.5))

    def test_all_u_needs_explicit_shape(self):
        cond = build_condition([None, None], [-1, -1], k=6, global_source=None,
                               frame_shape=(3, 4, 4))
        np.testing.assert_array_equal(cond.y_m, np.zeros((8, 4, 4)))
        with pytest.raises(ValueError):
            build_condition([None, None], [-1, -1], k=6, global_source=None)

    def test_duplicate_labels_rejected(self):
        f = self._frame(0.1)
        with pytest.raises(ValueError):
            build_condition([f, f], [2, 2], k=6, global_source=None)

    def test_shape_disagreement_rejected(self):
        with pytest.raises(ValueError):
            build_condition(
                [self._frame(0.1), self._frame(0.1, h=5)], [0, 1], k=6, global_source=None
            )

    def test_missing_frame_for_real_label_rejected(self):
        with pytest.raises(ValueError):
            build_condition([None], [0], k=6, global_source=None, frame_shape=(3, 4, 4))


class TestFixedContext:
    def test_zero_fragment(self):
        u = FixedContext((8, 3, 16, 16))
        frag = u.fragment()
        assert frag.shape == (8, 3, 16, 16)
        assert frag.dtype == np.float32
        assert not frag.any()


class TestPlanPredict:
    def test_two_pass_plan(self):
        plan = plan_autoregression("predict", 2, 6, 14)
        assert plan.window_len == 8
        assert plan.pinned == ((0, 0), (1, 1))
        assert len(plan.fragments) == 2
        first, second = plan.fragments
        assert first.cond_refs == (("input", 0), ("input", 1))
        assert first.cond_labels == (0, 1)
        assert first.target_positions == (2, 3, 4, 5, 6, 7)
        assert first.target_frames == (2, 3, 4, 5, 6, 7)
        assert not first.global_from_previous
        assert second.cond_refs == (("output", 6), ("output", 7))
        assert second.cond_labels == (0, 1)
        assert second.target_frames == (8, 9, 10, 11, 12, 13)
        assert second.global_from_previous

    def test_single_given_frame_pads_with_u(self):
        plan = plan_autoregression("predict", 1, 7, 8)
        (frag,) = plan.fragments
        assert frag.cond_refs == (("input", 0), ("fixed",))
        assert frag.cond_labels == (0, -1)
        assert frag.target_frames == (1, 2, 3, 4, 5, 6, 7)

    def test_final_pass_truncated(self):
        plan = plan_autoregression("predict", 2, 6, 9)
        assert plan.frames_produced == 9
        assert plan.fragments[-1].target_frames == (8,)
        assert plan.fragments[-1].target_positions == (2,)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            plan_autoregression("predict", 0, 6, 14)
        with pytest.raises(ValueError):
            plan_autoregression("predict", 2, 6, 2)  # nothing beyond the given
        with pytest.raises(ValueError):
            plan_autoregression("predict", 3, 6, 14)  # p exceeds cond slots
        with pytest.raises(ValueError):
            plan_autoregression("predict", 2, 6, 14, window_len=9)


class TestPlanGenerate:
    def test_first_pass_is_all_u(self):
        plan = plan_autoregression("generate", 0, 6, 30)
        assert plan.window_len == 8
        assert plan.pinned == ()
        first = plan.fragments[0]
        assert first.cond_refs == (("fixed",), ("fixed",))
        assert first.cond_labels == (-1, -1)
        assert first.target_frames == tuple(range(8))

    def test_continuation_and_truncation(self):
        plan = plan_autoregression("generate", 0, 6, 30)
        assert plan.frames_produced == 30
        assert len(plan.fragments) == 1 + 4  # 8 then 6+6+6+4
        for frag in plan.fragments[1:]:
            assert frag.global_from_previous
            assert frag.cond_labels == (0, 1)
            start = frag.target_frames[0]
            assert frag.cond_refs == (("output", start - 2), ("output", start - 1))
        assert plan.fragments[-1].target_frames == (26, 27, 28, 29)

    def test_given_frames_rejected(self):
        with pytest.raises(ValueError):
            plan_autoregression("generate", 1, 6, 10)


class TestPlanInterpolate:
    def test_single_pass_with_pinned_ends(self):
        plan = plan_autoregression("interpolate", 1, 6, 8)
        assert plan.window_len == 8
        assert plan.pinned == ((0, 0), (7, 1))
        (frag,) = plan.fragments
        assert frag.cond_refs == (("input", 0), ("input", 1))
        assert frag.cond_labels == (0, 6)
        assert frag.target_positions == (1, 2, 3, 4, 5, 6)
        assert frag.target_frames == (1, 2, 3, 4, 5, 6)
        assert plan.frames_produced == 8

    def test_requires_exactly_one_future_slot(self):
        with pytest.raises(ValueError):
            plan_autoregression("interpolate", 2, 6, 9)  # no slot left
        with pytest.raises(ValueError):
            plan_autoregression("interpolate", 1, 6, 8, cond_slots=3)

    def test_n_must_cover_the_window(self):
        with pytest.raises(ValueError):
            plan_autoregression("interpolate", 1, 6, 9)


def test_unknown_task_rejected():
    with pytest.raises(ValueError):
        plan_autoregression("extrapolate", 1, 6, 8)


def test_slots_must_fit_the_label_space():
    with pytest.raises(ValueError):
        plan_autoregression("generate", 0, 1, 10, cond_slots=3)


@given(
    st.sampled_from(["predict", "generate"]),
    st.integers(min_value=1, max_value=4),
    st.data(),
)
@settings(max_examples=40, deadline=None)
def test_plan_invariants(task, k, data):
    cond_slots = data.draw(st.integers(min_value=1, max_value=min(3, k + 1)))
    p = 0 if task == "generate" else data.draw(st.integers(min_value=1, max_value=cond_slots))
    n = data.draw(st.integers(min_value=max(p + 1, 1), max_value=40))
    plan = plan_autoregression(task, p, k, n, cond_slots=cond_slots)

    assert plan.frames_produced == n
    covered = sorted(
        [abs_idx for abs_idx, _ in plan.pinned]
        + [i for frag in plan.fragments for i in frag.target_frames]
    )
    assert covered == list(range(n))  # every frame produced exactly once
    for frag in plan.fragments:
        assert len(frag.cond_refs) == cond_slots
        assert len(frag.cond_labels) == cond_slots
        assert all(-1 <= j <= k for j in frag.cond_labels)
        assert len(frag.target_positions) == len(frag.target_frames)
        assert all(0 <= s < plan.window_len for s in frag.target_positions)
        for ref in frag.cond_refs:
            if ref[0] == "output":
                assert ref[1] < frag.target_frames[0]  # only already-emitted frames


class TestStageWindows:
    def test_desk_scale_split(self):
        w = select_stage_windows(14, 2, 6)
        assert w.stage1_target == range(0, 8)
        assert w.stage2_target == range(8, 14)
        assert w.stage2_cond == range(6, 8)

    def test_ranges_relate(self):
        w = select_stage_windows(20, 3, 7)
        assert w.stage1_target == range(0, 10)
        assert w.stage2_target == range(10, 17)
        assert w.stage2_cond == range(7, 10)
        assert w.stage2_cond.stop == w.stage2_target.start

    def test_short_clip_rejected(self):
        with pytest.raises(ValueError):
            select_stage_windows(13, 2, 6)
