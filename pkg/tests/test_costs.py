import csv
import io
import json
from fractions import Fraction

import pytest

from costs import (addition_toffolis, estimate, estimate_rows, expected_shots, feasible,
                   grid_scan, logical_qubits, lookup_toffolis, pareto, phaseup_toffolis,
                   published_rows, q3t, q3t_optimum, qubit_profile, reproduction_report, tally,
                   toffoli_count, write_csv, write_json)
from exceptions import EmptyFeasibleSet, InfeasibleParams
from modexp import AlgorithmParams

# n -> (P_deviant, expected shots, expected Toffolis, logical qubits) from the cost model
MODEL_ROWS = {
    1024: (0.02857, 9.36, 1.1064e9, 752),
    1536: (0.01808, 9.26, 3.1645e9, 1085),
    2048: (0.01207, 9.20, 6.5869e9, 1409),
    3072: (0.00904, 9.17, 1.8741e10, 2051),
    4096: (0.00798, 9.16, 4.0796e10, 2704),
    6144: (0.00423, 9.13, 1.2072e11, 3987),
    8192: (0.00399, 9.13, 2.6991e11, 5271),
}

P2048 = AlgorithmParams(n=2048, s=8, ell=21, w1=6, w3=3, w4=5, f=33)


class TestPrimitiveCosts:
    def test_addition(self):
        assert addition_toffolis(33) == 32
        assert addition_toffolis(0) == 0

    def test_lookup(self):
        assert lookup_toffolis(6) == 57
        assert lookup_toffolis(0) == 0

    @pytest.mark.parametrize("address,toffolis", [(0, 1), (3, 3), (6, 8), (7, 12)])
    def test_phaseup(self, address, toffolis):
        assert phaseup_toffolis(address) == toffolis


class TestTally:
    def test_rows_cover_every_subroutine(self):
        rows = tally(P2048)
        assert rows.prime_count == 20871
        assert [row.name for row in rows.rows] == [
            "loop1", "loop2", "loop3 startup", "loop3 body", "loop4", "unloop3 body",
            "unloop3 cleanup", "unloop2", "loop1 (vent flush)"]

    def test_loop4_row(self):
        row = tally(P2048).row("loop4")
        assert row.iterations == 20871 * 5
        assert (row.additions, row.lookups, row.phaseups) == (Fraction(3, 2), Fraction(5, 2), 1)

    def test_unknown_row(self):
        with pytest.raises(KeyError):
            tally(P2048).row("loop5")

    def test_actual_prime_count(self):
        assert tally(P2048, 100).row("loop1").iterations == 101 * P2048.W1

    def test_toffoli_count_scales_with_primes(self):
        small, large = toffoli_count(tally(P2048, 100)), toffoli_count(tally(P2048, 200))
        assert 1.9 < large / small < 2.01


class TestQubits:
    def test_profile_at_2048(self):
        peak, profile = logical_qubits(P2048)
        assert peak == 1409
        by_phase = {row.phase: row.total for row in profile}
        assert by_phase["loop4"] == 1399
        assert by_phase["frequency measurement"] == 1280

    def test_printed_loop4_temporary(self):
        profile = qubit_profile(P2048.replace(loop4_temporary="printed"))
        assert {row.phase: row.total for row in profile}["loop4"] == 1432


class TestEstimate:
    @pytest.mark.parametrize("n", sorted(MODEL_ROWS))
    def test_model_values(self, n):
        p_dev, shots, toffolis, qubits = MODEL_ROWS[n]
        row = next(r for r in published_rows() if r["params"].n == n)
        cost = estimate(row["params"])
        assert cost.p_deviant == pytest.approx(p_dev, rel=2e-3)
        assert cost.expected_shots == pytest.approx(shots, abs=0.006)
        assert cost.expected_toffolis == pytest.approx(toffolis, rel=1e-3)
        assert cost.logical_qubits == qubits

    def test_model_tracks_published_table(self):
        for line in reproduction_report():
            model, published = line["toffolis"]
            assert model == pytest.approx(published, rel=0.03)
            model_qubits, published_qubits = line["qubits"]
            assert 0 < model_qubits - published_qubits <= 12
            assert line["m"][0] == line["m"][1]

    def test_expected_shots(self):
        assert expected_shots(8, 0) == pytest.approx(9 / 0.99)
        with pytest.raises(InfeasibleParams):
            expected_shots(8, 1.0)

    def test_infeasible_points(self):
        ok, reason = feasible(P2048.replace(f=2))
        assert not ok
        assert "P_deviant" in reason
        assert not feasible(P2048.replace(ell=4))[0]
        with pytest.raises(InfeasibleParams):
            estimate(P2048.replace(w3=30))

    def test_q3t(self):
        cost = estimate(P2048)
        assert cost.q3t == pytest.approx(1409 ** 3 * cost.expected_toffolis)
        assert cost.as_row()["m"] == 1280


class TestGridScan:
    RANGES = {"s": [7, 8, 9], "ell": [20, 21, 22], "w1": [5, 6, 7], "w3": [2, 3, 4],
              "w4": [2, 3, 4], "f": [34, 35, 36]}

    @pytest.fixture(scope="class")
    def estimates(self):
        return grid_scan(2048, self.RANGES, workers=1)

    def test_q3t_optimum(self, estimates):
        best = q3t_optimum(estimates).params
        assert (best.s, best.ell, best.w1, best.w3, best.w4, best.f) == (8, 21, 6, 3, 3, 35)

    def test_canonical_order(self, estimates):
        keys = [(e.params.s, e.params.ell, e.params.w1, e.params.w3, e.params.w4, e.params.f)
                for e in estimates]
        assert keys == sorted(keys)

    def test_pareto_frontier(self, estimates):
        frontier = pareto(estimates)
        qubits = [e.logical_qubits for e in frontier]
        toffolis = [e.expected_toffolis for e in frontier]
        assert qubits == sorted(qubits)
        assert toffolis == sorted(toffolis, reverse=True)
        for e in estimates:
            assert any(f.logical_qubits <= e.logical_qubits
                       and f.expected_toffolis <= e.expected_toffolis for f in frontier)

    def test_empty_grid(self):
        with pytest.raises(EmptyFeasibleSet):
            grid_scan(2048, {"s": [8], "ell": [21], "w1": [6], "w3": [3], "w4": [5], "f": [3000]},
                      workers=1)

    def test_csv_and_json(self, estimates):
        frontier = pareto(estimates)
        stream = io.StringIO()
        write_csv(estimates, stream, frontier)
        rows = list(csv.DictReader(io.StringIO(stream.getvalue())))
        assert len(rows) == len(estimates)
        assert sum(int(r["pareto_flag"]) for r in rows) == len(frontier)

        stream = io.StringIO()
        write_json(estimates[:3], stream)
        assert [r["n"] for r in json.loads(stream.getvalue())] == [2048] * 3
        assert len(estimate_rows(estimates)) == len(estimates)

    @pytest.mark.slow
    def test_published_point_is_near_the_full_grid_optimum(self):
        best = q3t_optimum(grid_scan(2048))
        published = next(r for r in published_rows() if r["params"].n == 2048)
        assert q3t(estimate(published["params"])) / q3t(best) <= 1.10
