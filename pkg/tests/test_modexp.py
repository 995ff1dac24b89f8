import json
from fractions import Fraction

import pytest

from app import random_bits, rng_stream
from conftest import DESK_BITS, desk_params
from costs import tally, tally_mismatches
from exceptions import DirtyFinish, InfeasibleParams, QFEError, SimulationError
from modexp import (AlgorithmParams, build_config, classical_oracle, epsilon, exact_power,
                    exponent_multipliers, mask_bound_for, recover_factors_from_d,
                    residue_of_power, run_shot, run_shots, serialize_shot)
from residue import modular_deviation, random_semiprime

PUBLISHED_2048 = AlgorithmParams(n=2048, s=8, ell=21, w1=6, w3=3, w4=5, f=33)


class TestAlgorithmParams:
    def test_derived_widths(self):
        p = PUBLISHED_2048
        assert p.input_bits == 1280
        assert p.W1 == 214
        assert p.W3 == 7
        assert p.W4 == 5
        assert p.len_m == 11
        assert p.sum_width == 32

    def test_register_conventions_agree_at_2048(self):
        assert PUBLISHED_2048.replace(register_convention="eh").input_bits == 1280

    def test_explicit_m_wins(self):
        assert PUBLISHED_2048.replace(m=100).input_bits == 100

    @pytest.mark.parametrize("changes", [
        {"f": 4096},
        {"ell": 1},
        {"w3": 21},
        {"loop4_temporary": "doubled"},
    ])
    def test_infeasible(self, changes):
        with pytest.raises(InfeasibleParams):
            PUBLISHED_2048.replace(**changes).validate()


class TestClassicalHelpers:
    def test_mask_bound_exact_square(self):
        assert mask_bound_for(Fraction(1, 4), 100) == 50

    def test_mask_bound_rounds_up(self):
        assert mask_bound_for(Fraction(1, 2), 100) == 71

    def test_mask_bound_clamped(self):
        assert mask_bound_for(Fraction(4), 100) == 100
        assert mask_bound_for(Fraction(1, 10 ** 12), 100) == 1

    def test_multipliers_are_squarings(self):
        params = AlgorithmParams(n=7, s=2, ell=8, w1=2, w3=2, w4=2, f=6)
        multipliers, h = exponent_multipliers(101, 2, params)
        assert h is None
        assert multipliers[:4] == [2, 4, 16, 54]
        assert len(multipliers) == params.input_bits

    def test_eh_multipliers(self):
        params = AlgorithmParams(n=7, s=2, ell=8, w1=2, w3=2, w4=2, f=6)
        multipliers, h = exponent_multipliers(101, 2, params, mode="eh")
        assert h == pow(2, 100, 101)
        assert multipliers[params.input_bits - params.y_bits] == h

    def test_unknown_mode(self):
        params = AlgorithmParams(n=7, s=2, ell=8, w1=2, w3=2, w4=2, f=6)
        with pytest.raises(InfeasibleParams):
            exponent_multipliers(101, 2, params, mode="rsa")

    def test_recover_factors(self):
        assert recover_factors_from_d(11 * 13, 11 + 13 - 2) == (11, 13)
        with pytest.raises(QFEError):
            recover_factors_from_d(11 * 13, 23)


class TestExecutionConfig:
    def test_modulus_width_checked(self, semiprimes):
        N = semiprimes[32]
        with pytest.raises(InfeasibleParams):
            build_config(N, 2, desk_params(N).replace(n=31), workers=1)

    def test_base_must_be_coprime(self):
        N = random_semiprime(24, seed=24)
        p = next(d for d in range(3, N) if N % d == 0)
        with pytest.raises(InfeasibleParams):
            build_config(N, p, desk_params(N), workers=1)

    def test_tables_and_bounds(self, config32):
        params = config32.params
        assert config32.t_shift == params.n - params.f
        assert config32.truncated_modulus == config32.modulus.value >> config32.t_shift
        assert config32.epsilon == epsilon(config32)
        assert 1 <= config32.mask_bound <= config32.truncated_modulus
        assert len(config32.exponent_windows) == params.W1
        for tables in config32.prime_tables:
            assert len(tables.startup) == 1 << (2 * params.w3)
            assert len(tables.body) == params.W3 - 2
            assert all(len(T) == 1 << (2 * params.w3) for per_t in tables.body for T, _ in per_t)

    def test_residue_matches_direct_power(self, config32):
        N = config32.modulus.value
        for e in (0, 1, 12345, (1 << config32.params.input_bits) - 1):
            value = exact_power(config32, e)
            assert value == pow(2, e, N)
            for j, p in enumerate(config32.system.primes):
                assert residue_of_power(config32, j, e) == value % p

    @pytest.mark.parametrize("bits", DESK_BITS)
    def test_oracle_stays_within_deviation_bound(self, desk_configs, bits):
        config = desk_configs[bits]
        N = config.modulus.value
        rng = rng_stream(bits, "oracle-exponents")
        for _ in range(1000):
            e = random_bits(rng, config.params.input_bits)
            approx = classical_oracle(config, e) << config.t_shift
            assert modular_deviation(exact_power(config, e) - approx, N) <= config.epsilon, e

    def test_ell_bit_factors_are_not_residue_primes(self, semiprimes, desk_configs):
        N = semiprimes[24]
        factors = [d for d in range(3, 1 << 12) if N % d == 0]
        assert factors and all(p.bit_length() == 12 for p in factors)
        assert all(N % p for p in desk_configs[24].system.primes)

    def test_oracle_rejects_wide_exponent(self, config32):
        with pytest.raises(SimulationError):
            classical_oracle(config32, 1 << config32.params.input_bits)


class TestShots:
    @pytest.mark.parametrize("bits", DESK_BITS)
    def test_hundred_shots_verify(self, desk_configs, bits):
        config = desk_configs[bits]
        expected = tally(config.params, config.prime_count)
        for seed in range(100):
            record = run_shot(config, seed)
            assert record.passed, f"seed {seed}: {record.measurement} != {record.expected_measurement}"
            assert tally_mismatches(expected, record.counters) == []

    def test_forced_inputs(self, config32):
        record = run_shot(config32, 0, forced_e=0, forced_mask=0)
        assert record.e == 0
        assert record.measurement == classical_oracle(config32, 0)

    def test_actual_work_tracks_expectation(self, config32):
        records = [run_shot(config32, seed) for seed in range(20)]
        for section in ("loop1", "loop2", "loop3 body"):
            assert all(r.actual_counters[section] == r.counters[section] for r in records)

    @pytest.fixture(scope="class")
    def records(self, config32):
        return [run_shot(config32, seed) for seed in range(60)]

    def test_loop4_work_per_window(self, config32, records):
        windows = config32.prime_count * config32.params.W4 * len(records)
        additions = sum(r.actual_counters["loop4"]["additions"] for r in records)
        lookups = sum(r.actual_counters["loop4"]["lookups"] for r in records)
        # one coin-flip comparison per window, each costing an addition and a lookup
        assert lookups - additions == windows
        three_sigma = 3 * 0.5 / windows ** 0.5
        assert abs(additions / windows - 1.5) < three_sigma
        assert abs(lookups / windows - 2.5) < three_sigma

    def test_unloop3_measured_uncompute(self, config32, records):
        row = tally(config32.params, config32.prime_count).row("unloop3 body")
        units = row.iterations * len(records)
        actual = {k: sum(r.actual_counters["unloop3 body"][k] for r in records)
                  for k in ("additions", "lookups", "phaseups")}
        assert actual["phaseups"] == units
        assert actual["additions"] - actual["lookups"] == units
        three_sigma = 3 * 0.5 / units ** 0.5
        assert abs(actual["additions"] / units - float(row.additions)) < three_sigma
        assert abs(actual["lookups"] / units - float(row.lookups)) < three_sigma

    def test_trace(self, config32):
        record = run_shot(config32, 1, trace=True)
        assert record.trace
        section, opcode, widths, totals = record.trace[0].split("\t")
        assert section == "loop1"
        assert opcode == "lookup"

    def test_skipped_vent_flush_is_dirty(self, config32):
        with pytest.raises(DirtyFinish) as info:
            run_shot(config32, 0, inject_bug="skip-vent-flush")
        assert info.value.open_vents == config32.params.W1

    def test_skipped_loop4_correction_is_caught(self, config32):
        records = [run_shot(config32, seed, inject_bug="skip-loop4-correction", raise_on_dirty=False)
                   for seed in range(20)]
        assert not all(r.clean for r in records)
        assert all(r.matches_oracle for r in records)

    def test_unknown_bug(self, config32):
        with pytest.raises(SimulationError):
            run_shot(config32, 0, inject_bug="skip-everything")

    def test_run_shots_keeps_seed_order(self, config32):
        records = run_shots(config32, [5, 3, 9], workers=1)
        assert [r.seed for r in records] == [5, 3, 9]
        assert all(r.passed for r in records)

    def test_failed_shots_are_recorded(self, config32):
        records = run_shots(config32, [0, 1], workers=1, inject_bug="skip-vent-flush")
        assert not any(r.passed for r in records)
        assert all("open vent" in r.error for r in records)

    def test_serialized_shot(self, config32):
        line = serialize_shot(run_shot(config32, 2))
        assert line.startswith("seed=2 ")
        assert "clean=1" in line
        counters = json.loads(line.split("counters=", 1)[1])
        assert counters["loop4"]["additions"] == int(tally(config32.params, config32.prime_count)
                                                     .row("loop4").totals["additions"])


class TestEkeraHastadMode:
    def test_shots_verify(self, semiprimes):
        N = semiprimes[24]
        config = build_config(N, 2, desk_params(N), mode="eh", seed=3, workers=1)
        assert config.h == pow(2, N - 1, N)
        for seed in range(10):
            assert run_shot(config, seed).passed
