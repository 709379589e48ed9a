import copy
import itertools

import numpy as np
import pytest

from conftest import make_window
from unseenfall import data, ensemble, nn, thresholds as th
from unseenfall.errors import ConfigError, InputError

FAST = nn.TrainConfig(epochs=2)


def fake_windows(n_windows, n=32, seed=0, label="normal"):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, n)
    return [
        make_window(np.column_stack([np.sin(t + k) + rng.normal(0, 0.05, n) for k in range(6)]), label)
        for _ in range(n_windows)
    ]


def stub_member(channel, error, value, n=4):
    # linear layer with zero weights and bias b: error = |x - b|^2 on scaled input
    model = nn.AEModel([nn.Layer(np.zeros((n, n)), np.zeros(n), nn.LINEAR)], arch="custom")
    scaler = data.Scaler(np.zeros(n), np.ones(n))
    member = ensemble.Member(channel, model, th.ThresholdModel(th.MAXRE, value, model=model), scaler)
    return member, np.r_[np.sqrt(error), np.zeros(n - 1)]


def stub_ensemble(errors, values, view=data.SIX_RAW):
    members, xs = zip(*(stub_member(c, e, v) for c, e, v in zip(ensemble.channel_ids(view), errors, values)))
    cls = ensemble.MonolithicDetector if view == data.MONOLITHIC else ensemble.ChannelEnsemble
    det = cls(list(members), view)
    if view == data.MONOLITHIC:
        window = data.Window("s", "normal", view, {"f": xs[0]})
    else:
        window = data.Window("s", "normal", view, {c: x for c, x in zip(ensemble.channel_ids(view), xs)})
    return det, window


class TestVote:
    def test_examples(self):
        assert ensemble.majority_vote(["fall"] * 3 + ["normal"] * 3) == "fall"
        assert ensemble.majority_vote(["fall", "normal"]) == "fall"
        assert ensemble.majority_vote(["normal"] * 6) == "normal"
        assert ensemble.majority_vote(["fall"]) == "fall"

    def test_empty(self):
        with pytest.raises(InputError):
            ensemble.majority_vote([])

    @pytest.mark.parametrize("c", [1, 2, 6])
    def test_truth_table(self, c):
        patterns = list(itertools.product([False, True], repeat=c))
        matrix = ensemble.vote_matrix(np.array(patterns))
        for votes, vec in zip(patterns, matrix):
            expected = sum(votes) >= -(-c // 2)
            assert (ensemble.majority_vote(votes) == "fall") == expected == vec

    def test_two_members_any_fires(self):
        for votes in itertools.product([False, True], repeat=2):
            assert (ensemble.majority_vote(votes) == "fall") == any(votes)


class TestDetect:
    def test_all_below(self):
        det, w = stub_ensemble([0.1] * 6, [0.5] * 6)
        d = ensemble.detect(det, w)
        assert (d.verdict, d.votes_fall, d.votes_normal) == ("normal", 0, 6)
        assert [m[0] for m in d.per_member] == list(data.CHANNELS)

    def test_three_of_six(self):
        det, w = stub_ensemble([0.9, 0.9, 0.9, 0.1, 0.1, 0.1], [0.5] * 6)
        d = ensemble.detect(det, w)
        assert (d.verdict, d.votes_fall, d.votes_normal) == ("fall", 3, 3)
        assert d.per_member[0][1] == pytest.approx(0.9)

    def test_monolithic_single_vote(self):
        det, w = stub_ensemble([0.9], [0.5], view=data.MONOLITHIC)
        d = det.detect(w)
        assert (d.verdict, d.votes_fall, d.votes_normal) == ("fall", 1, 0)

    def test_equal_to_threshold_is_normal(self):
        det, w = stub_ensemble([0.25], [0.25], view=data.MONOLITHIC)
        assert det.detect(w).verdict == "normal"

    def test_view_mismatch(self):
        det, _ = stub_ensemble([0.1] * 2, [0.5] * 2, view=data.TWO_MAGNITUDE)
        mono = data.Window("s", "normal", data.MONOLITHIC, {"f": np.zeros(24)})
        with pytest.raises(InputError):
            det.detect(mono)

    def test_dimension_mismatch(self):
        det, _ = stub_ensemble([0.1] * 6, [0.5] * 6)
        with pytest.raises(InputError):
            det.detect(make_window(np.zeros((5, 6))))

    def test_member_count_checked(self):
        det, _ = stub_ensemble([0.1] * 6, [0.5] * 6)
        with pytest.raises(ConfigError):
            ensemble.ChannelEnsemble(det.members[:5], data.SIX_RAW)


class TestBuild:
    @pytest.mark.parametrize(
        "view, arch, n, dims, members",
        [
            ("monolithic", "ae", 128, [768, 31, 768], 1),
            ("monolithic", "sae", 128, [768, 384, 31, 384, 768], 1),
            ("6ce", "ae", 256, [256, 31, 256], 6),
            ("2ce", "sae", 128, [128, 64, 31, 64, 128], 2),
        ],
    )
    def test_dims(self, view, arch, n, dims, members):
        det = ensemble.build_detector(fake_windows(4, n), view, arch, "maxre", cfg=nn.TrainConfig(epochs=1))
        assert len(det.members) == members
        assert all(m.model.dims == dims for m in det.members)

    def test_rejects_fall_windows(self):
        windows = fake_windows(5) + fake_windows(1, label="fall")
        with pytest.raises(ConfigError, match="normal"):
            ensemble.build_monolithic(windows, kind="maxre", cfg=FAST)

    def test_rejects_empty_and_mixed_lengths(self):
        with pytest.raises(ConfigError):
            ensemble.build_channel_ensemble([], "6ce", kind="maxre", cfg=FAST)
        with pytest.raises(ConfigError):
            ensemble.build_channel_ensemble(fake_windows(2, 32) + fake_windows(2, 16), "6ce", kind="maxre", cfg=FAST)

    def test_channel_ensemble_rejects_monolithic(self):
        with pytest.raises(ConfigError):
            ensemble.build_channel_ensemble(fake_windows(3), "monolithic", kind="maxre", cfg=FAST)

    def test_member_seeds_differ(self):
        det = ensemble.build_channel_ensemble(fake_windows(6), "6ce", kind="maxre", cfg=FAST)
        assert not np.array_equal(det.members[0].model.layers[0].weights, det.members[1].model.layers[0].weights)

    def test_converts_six_raw_for_2ce(self):
        det = ensemble.build_channel_ensemble(fake_windows(6), "2ce", kind="rre", omega=1.5, cfg=FAST)
        assert [m.channel for m in det.members] == ["acc", "gyro"]
        assert det.predict(fake_windows(3, seed=9)).shape == (3,)

    def test_deterministic_and_pure(self):
        train, test = fake_windows(20), fake_windows(10, seed=4)
        a = ensemble.build_channel_ensemble(train, "6ce", kind="ire", omega=1.5, cfg=FAST)
        b = ensemble.build_channel_ensemble(train, "6ce", kind="ire", omega=1.5, cfg=FAST)
        snapshot = copy.deepcopy(ensemble.detector_to_dict(a))
        da = [a.detect(w) for w in test]
        db = [b.detect(w) for w in test]
        assert da == db
        assert ensemble.detector_to_dict(a) == snapshot
        assert a.predict(test).tolist() == [d.verdict == "fall" for d in da]


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        train, test = fake_windows(12), fake_windows(8, seed=5)
        det = ensemble.build_channel_ensemble(train, "6ce", kind="rre", omega=1.0, cfg=FAST)
        path = tmp_path / "det.json"
        ensemble.save_detector(det, path)
        back = ensemble.load_detector(path)
        assert type(back) is ensemble.ChannelEnsemble
        assert np.array_equal(back.member_errors(test), det.member_errors(test))
        assert ensemble.detector_to_dict(back) == ensemble.detector_to_dict(det)

    def test_monolithic_roundtrip(self, tmp_path):
        det = ensemble.build_monolithic(fake_windows(6), kind="stdre", cfg=FAST)
        path = tmp_path / "m.json"
        ensemble.save_detector(det, path)
        back = ensemble.load_detector(path)
        assert isinstance(back, ensemble.MonolithicDetector)
        assert back.threshold.value == det.threshold.value

    def test_rejects_other_vote_rule(self):
        det, _ = stub_ensemble([0.1] * 2, [0.5] * 2, view=data.TWO_MAGNITUDE)
        d = ensemble.detector_to_dict(det)
        d["vote_rule"] = "weighted"
        with pytest.raises(ConfigError):
            ensemble.detector_from_dict(d)
