import itertools

import numpy as np
import pytest

from physimri import (
    LabelMap,
    MprageParams,
    RunRecord,
    SpgrParams,
    ValidationError,
    VoxelGrid3D,
    annealing_report,
    cov,
    dice,
    run_records_from_csv,
    run_records_to_csv,
    sweep_curve,
    sweep_to_csv,
    wilcoxon_signed_rank,
)
from physimri.errors import GridMismatchError


def _labelmap(values):
    arr = np.asarray(values, dtype=np.uint8)
    return LabelMap(VoxelGrid3D(arr.shape), arr)


def enumeration_oracle(x, y):
    """Independently coded full sign enumeration (plain python loops)."""
    diffs = [a - b for a, b in zip(x, y) if a != b]
    n = len(diffs)
    # average ranks of |d| by explicit sorting
    order = sorted(range(n), key=lambda i: abs(diffs[i]))
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs(diffs[order[j + 1]]) == abs(diffs[order[i]]):
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    w = min(w_plus, w_minus)
    total = n * (n + 1) / 2.0
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        wp = sum(r for r, s in zip(ranks, signs) if s)
        if wp <= w or wp >= total - w:
            hits += 1
    return w, min(1.0, hits / 2.0**n)


class TestDice:
    def test_identical_masks(self):
        a = _labelmap([[[1, 1], [0, 2]], [[1, 0], [2, 2]]])
        result = dice(a, a, 1)
        assert result.score == 1.0 and not result.both_empty

    def test_disjoint_masks(self):
        a = _labelmap(np.zeros((2, 2, 2)))
        b = _labelmap(np.ones((2, 2, 2)))
        assert dice(a, b, 1).score == 0.0

    def test_formula_fixture(self):
        # |A| = 100, |B| = 50, |A n B| = 40 -> 2*40/150
        arr_a = np.zeros((10, 10, 2), dtype=np.uint8)
        arr_b = np.zeros((10, 10, 2), dtype=np.uint8)
        arr_a.reshape(-1)[:100] = 3
        arr_b.reshape(-1)[60:110] = 3
        a, b = _labelmap(arr_a), _labelmap(arr_b)
        result = dice(a, b, 3)
        assert result.count_a == 100 and result.count_b == 50 and result.intersection == 40
        assert result.score == pytest.approx(2 * 40 / 150)
        assert result.score == pytest.approx(0.5333333333333333)

    def test_both_empty_flag(self):
        a = _labelmap(np.zeros((3, 3, 3)))
        result = dice(a, a, 2)
        assert result.score == 1.0 and result.both_empty

    def test_symmetry(self, rng):
        a = _labelmap(rng.integers(0, 4, size=(6, 6, 6)))
        b = _labelmap(rng.integers(0, 4, size=(6, 6, 6)))
        for class_id in range(4):
            assert dice(a, b, class_id).score == dice(b, a, class_id).score

    def test_grid_mismatch(self):
        a = _labelmap(np.zeros((3, 3, 3)))
        b = _labelmap(np.zeros((4, 3, 3)))
        with pytest.raises(GridMismatchError):
            dice(a, b, 1)


class TestCov:
    def test_constant(self):
        assert cov([2.0, 2.0, 2.0]).cov == 0.0

    def test_two_point_formula(self):
        result = cov([1.0, 3.0])
        assert result.mean_ml == 2.0
        assert result.sd_ml == pytest.approx(np.sqrt(2.0), rel=1e-15)
        assert result.cov == pytest.approx(0.7071067811865476, rel=1e-12)

    def test_sampling_oracle(self):
        gen = np.random.default_rng(11)
        draws = gen.normal(100.0, 1.0, size=10_000)
        assert cov(draws).cov == pytest.approx(0.01, abs=0.0005)

    def test_scale_invariance(self, rng):
        volumes = rng.uniform(1.0, 50.0, size=20)
        base = cov(volumes).cov
        for _ in range(20):
            k = float(rng.uniform(0.01, 100.0))
            assert cov(volumes * k).cov == pytest.approx(base, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValidationError):
            cov([1.0])
        with pytest.raises(ValidationError):
            cov([0.0, 0.0])
        with pytest.raises(ValidationError):
            cov([-2.0, 2.0])


class TestWilcoxon:
    def test_identical_samples_error(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        with pytest.raises(ValidationError, match="5"):
            wilcoxon_signed_rank(x, x)

    def test_all_positive_n6(self):
        x = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        y = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        result = wilcoxon_signed_rank(x, y)
        assert result.statistic == 0.0
        assert result.p_value == 0.03125  # 2/64 exactly
        assert result.exact and result.n_effective == 6

    def test_antisymmetry(self, rng):
        x = rng.normal(size=9)
        y = rng.normal(size=9)
        a = wilcoxon_signed_rank(x, y)
        b = wilcoxon_signed_rank(y, x)
        assert a.p_value == b.p_value
        assert a.statistic == b.statistic
        assert a.w_plus == b.w_minus and a.w_minus == b.w_plus

    def test_exact_path_matches_enumeration_oracle(self, rng):
        for _ in range(60):
            n = int(rng.integers(5, 11))
            x = np.round(rng.normal(size=n), 1)
            y = np.round(rng.normal(size=n), 1)
            if np.count_nonzero(x - y) < 5:
                continue
            result = wilcoxon_signed_rank(x, y)
            w_ref, p_ref = enumeration_oracle(x.tolist(), y.tolist())
            assert result.statistic == w_ref
            assert result.p_value == pytest.approx(p_ref, abs=1e-12)

    def test_approximation_close_to_enumeration(self, rng):
        # n in the 13..14 range: approximate path vs exact enumeration
        for _ in range(5):
            n = int(rng.integers(13, 15))
            x = np.round(rng.normal(size=n), 2)
            y = np.round(rng.normal(size=n), 2)
            if np.count_nonzero(x - y) <= 12:
                continue
            result = wilcoxon_signed_rank(x, y)
            assert not result.exact
            _, p_ref = enumeration_oracle(x.tolist(), y.tolist())
            assert result.p_value == pytest.approx(p_ref, abs=0.02)

    def test_zero_differences_dropped(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        y = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 7.0]
        result = wilcoxon_signed_rank(x, y)
        assert result.n_effective == 5


def _make_runs(experiment, n_subjects=5, n_realisations=4, base=100.0, spread=0.0, dice_value=0.9, rng=None):
    runs = []
    for s in range(n_subjects):
        for r in range(n_realisations):
            jitter = 0.0 if rng is None else float(rng.normal(0.0, spread))
            volume = base + s + jitter
            runs.append(
                RunRecord(
                    experiment=experiment,
                    subject_id=f"sub-{s:02d}",
                    seq="mprage",
                    dist="iod",
                    params=MprageParams(900.0 + r),
                    volumes_ml={"csf": 10.0, "gm": volume, "wm": volume * 0.8},
                    dice_scores={"gm": dice_value, "wm": dice_value - 0.01},
                )
            )
    return runs


class TestRunRecords:
    def test_csv_roundtrip(self, tmp_path, rng):
        runs = _make_runs("expA", rng=rng, spread=0.5)
        runs.append(
            RunRecord(
                experiment="expA",
                subject_id="sub-99",
                seq="spgr",
                dist="ood",
                params=SpgrParams(50.0, 5.0, 8.0),
                volumes_ml={"gm": 1.0},
                dice_scores={},
                lo_ml=0.5,
                hi_ml=1.5,
            )
        )
        path = tmp_path / "runs.csv"
        run_records_to_csv(runs, path)
        back = run_records_from_csv(path)
        assert back == runs

    def test_validation(self):
        with pytest.raises(ValidationError):
            RunRecord("e", "s", "flair", "iod", None)
        with pytest.raises(ValidationError):
            RunRecord("e", "s", "mprage", "mid", None)


class TestAnnealingReport:
    def test_identical_volumes_give_zero_cov_cells(self):
        report = annealing_report(_make_runs("expA"))
        cell = report.cells[("cov_x1000", "expA", "mprage_gm_iod")]
        assert cell.startswith("0.00")

    def test_cov_x1000_formatting_fixture(self):
        # one subject, cov = 0.00042: two-point sample sd is d*sqrt(2),
        # so scale the half-spread accordingly
        d = 0.00042 / np.sqrt(2.0)
        volumes = [100.0 * (1 + d * z) for z in (-1.0, 1.0)]
        sd_over_mean = cov(volumes).cov
        assert sd_over_mean == pytest.approx(0.00042, rel=1e-9)
        runs = [
            RunRecord(
                "phys-strat-aug", "sub-00", "mprage", "iod", MprageParams(900.0 + i),
                volumes_ml={"gm": v}, dice_scores={"gm": 0.97},
            )
            for i, v in enumerate(volumes)
        ]
        report = annealing_report(runs)
        assert report.cells[("cov_x1000", "phys-strat-aug", "mprage_gm_iod")] == "0.42 *"

    def test_report_bytes_deterministic_under_input_order(self, rng):
        runs = _make_runs("expA", rng=rng, spread=0.5) + _make_runs(
            "expB", base=104.0, rng=rng, spread=0.5
        )
        a = annealing_report(runs).to_csv()
        shuffled = list(runs)
        rng.shuffle(shuffled)
        b = annealing_report(shuffled).to_csv()
        assert a == b

    def test_identical_groups_tie_without_effective_pairs(self, rng):
        runs = _make_runs("expA") + _make_runs("expB")
        report = annealing_report(runs)
        a = report.stats["dice"]["expA"]["mprage_gm_iod"]
        b = report.stats["dice"]["expB"]["mprage_gm_iod"]
        assert a["best"] and b["best"]
        assert a["p_vs_best"] is None or a["p_vs_best"] == 1.0
        assert b["p_vs_best"] is None or b["p_vs_best"] == 1.0

    def test_significant_difference_unmarks_loser(self, rng):
        # the exact test needs >= 8 pairs before p < 0.01 is reachable
        good = _make_runs("good", base=100.0, spread=0.01, n_subjects=8, rng=rng)
        bad = _make_runs("bad", base=100.0, spread=2.0, n_subjects=8, rng=rng)
        report = annealing_report(good + bad)
        stats = report.stats["cov"]
        assert stats["good"]["mprage_gm_iod"]["best"]
        assert not stats["bad"]["mprage_gm_iod"]["best"]
        assert stats["bad"]["mprage_gm_iod"]["p_vs_best"] < 0.01

    def test_round_trip_through_runs_csv(self, tmp_path, rng):
        runs = _make_runs("expA", rng=rng, spread=0.3)
        path = tmp_path / "runs.csv"
        run_records_to_csv(runs, path)
        direct = annealing_report(runs).to_csv()
        rebuilt = annealing_report(run_records_from_csv(path)).to_csv()
        assert direct == rebuilt

    def test_empty_runs_rejected(self):
        with pytest.raises(ValidationError):
            annealing_report([])


class TestSweepCurve:
    def _runs(self, tis, volumes, dists=None, subject="s0"):
        dists = dists or ["iod"] * len(tis)
        return [
            RunRecord(
                "exp", subject, "mprage", dist, MprageParams(ti),
                volumes_ml={"wm": v}, dice_scores={},
            )
            for ti, v, dist in zip(tis, volumes, dists)
        ]

    def test_sorted_by_parameter(self):
        runs = self._runs([900.0, 100.0, 2000.0], [2.0, 1.0, 3.0], ["iod", "ood", "ood"])
        points = sweep_curve(runs, "ti_ms")
        assert [p.param_value for p in points] == [100.0, 900.0, 2000.0]
        assert [p.iod for p in points] == [False, True, False]

    def test_shuffle_invariance(self, rng):
        tis = rng.uniform(100.0, 2000.0, size=12).tolist()
        vols = rng.uniform(1.0, 5.0, size=12).tolist()
        base = sweep_curve(self._runs(tis, vols), "ti_ms")
        order = rng.permutation(12)
        shuffled = sweep_curve(
            self._runs([tis[i] for i in order], [vols[i] for i in order]), "ti_ms"
        )
        assert base == shuffled

    def test_consistency_ordering(self):
        runs = self._runs([1.0, 2.0, 3.0, 4.0], [10.0, 11.0, 30.0, 10.5])
        points = sweep_curve(runs, "ti_ms", order_by="consistency")
        deviations = [abs(p.volume_ml - 10.75) for p in points]
        assert deviations == sorted(deviations)

    def test_low_flip_angle_flagging(self):
        runs = [
            RunRecord(
                "exp", "s0", "spgr", "ood", SpgrParams(50.0, 5.0, fa),
                volumes_ml={"wm": 1.0}, dice_scores={},
            )
            for fa in (5.0, 9.99, 10.0, 45.0)
        ]
        points = sweep_curve(runs, "fa_deg")
        assert [p.fa_below_10deg for p in points] == [True, True, False, False]

    def test_mixed_subjects_rejected(self):
        runs = self._runs([1.0], [1.0]) + self._runs([2.0], [2.0], subject="s1")
        with pytest.raises(ValidationError, match="single subject"):
            sweep_curve(runs, "ti_ms")

    def test_csv_emission(self, tmp_path):
        runs = self._runs([900.0, 100.0], [2.0, 1.0], ["iod", "ood"])
        points = sweep_curve(runs, "ti_ms")
        text = sweep_to_csv(points, "ti_ms", tmp_path / "curve.csv")
        lines = text.splitlines()
        assert lines[0] == "param_key,param_value,volume_ml,lo_ml,hi_ml,iod,fa_below_10deg"
        assert lines[1].startswith("ti_ms,100.0,1.0")
        assert (tmp_path / "curve.csv").read_text() == text
