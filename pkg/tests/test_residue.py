import math
import random
from fractions import Fraction

import pytest

from exceptions import (BudgetExhausted, DlogUndefined, InsufficientPrimes, ResidueError,
                        ResidueFormatError)
from residue import (RSA2048_MODULUS, BabyStepGiantStep, Modulus, ResidueSystem,
                     certify_challenge_modulus, contribution_factors, contribution_table,
                     crt_reconstruct, divides_any,
                     dlog_tables, ell_bit_prime_count, find_generator, find_prime_set,
                     find_prime_set_with_retry, modular_deviation, parse_system,
                     prime_candidates, published_prime_set, random_semiprime,
                     serialize_system, verify_system, windowed_multipliers)


class TestModulus:
    def test_rejects_even_and_tiny(self):
        with pytest.raises(ResidueError):
            Modulus(10)
        with pytest.raises(ResidueError):
            Modulus(1)

    def test_bit_length_is_ceil_log2(self):
        assert Modulus(15).bit_length == 4
        assert Modulus(17).bit_length == 5
        assert Modulus(2 ** 10 + 1).bit_length == 11


class TestModularDeviation:
    def test_multiple_of_modulus(self):
        assert modular_deviation(7, 7) == 0

    def test_nearest_side(self):
        assert modular_deviation(13, 7) == Fraction(1, 7)
        assert modular_deviation(10, 7) == Fraction(3, 7)

    def test_never_above_half(self):
        N = 1001
        assert max(modular_deviation(a, N) for a in range(3 * N)) <= Fraction(1, 2)


class TestPrimeCandidates:
    def test_four_bit_primes(self):
        assert prime_candidates(4) == [11, 13]
        assert ell_bit_prime_count(4) == 2

    def test_two_bit_primes_exclude_two(self):
        assert ell_bit_prime_count(2) == 1

    def test_exclusion_predicate(self):
        assert prime_candidates(4, divides_any([22])) == [13]

    def test_count_matches_enumeration(self):
        assert ell_bit_prime_count(12) == len(prime_candidates(12))

    def test_factors_of_modulus_excluded(self):
        N = 2707 * 3389
        kept = prime_candidates(12, N=N)
        assert 2707 not in kept and 3389 not in kept
        assert len(kept) == ell_bit_prime_count(12) - 2


class TestWindowedMultipliers:
    def test_products_per_window(self):
        tables = windowed_multipliers([2, 3, 5], 2, 101)
        assert tables == [[1, 2, 3, 6], [1, 5, 1, 5]]

    def test_reduced_mod_n(self):
        tables = windowed_multipliers([10, 20], 2, 7)
        assert tables == [[1, 3, 6, 200 % 7]]


class TestFindPrimeSet:
    def test_single_prime_with_vacuous_target(self):
        system = find_prime_set(101, 1, 8, 0, seed=1, workers=1)
        assert len(system.primes) == 1
        assert system.primes[0].bit_length() == 8
        assert verify_system(system, 101)

    def test_desk_search_certifies(self):
        N = random_semiprime(64, seed=3)
        system = find_prime_set(N, 1, 16, 12, seed=5, workers=1)
        assert system.deviation < Fraction(1, 2 ** 12)
        assert system.L >= N
        assert math.prod(system.primes) % N == system.l_mod_n
        assert all(p.bit_length() == 16 for p in system.primes)
        assert verify_system(system, N)

    def test_modulus_with_ell_bit_factors(self):
        N = 2707 * 3389
        system = find_prime_set(N, 1, 12, 6, seed=0, workers=1)
        assert all(N % p for p in system.primes)
        assert verify_system(system, N)

    def test_excluded_primes_never_appear(self):
        N = random_semiprime(48, seed=4)
        banned = set(prime_candidates(14)[::2])
        system = find_prime_set(N, 1, 14, 8, lambda p: p in banned, seed=2, workers=1)
        assert not banned & set(system.primes)

    def test_deterministic_for_a_seed(self):
        N = random_semiprime(48, seed=8)
        first = find_prime_set(N, 1, 14, 10, seed=11, workers=1)
        second = find_prime_set(N, 1, 14, 10, seed=11, workers=1)
        assert first.primes == second.primes

    def test_budget_exhausted(self):
        N = random_semiprime(64, seed=9)
        with pytest.raises(BudgetExhausted) as info:
            find_prime_set(N, 1, 16, 40, seed=0, budget=10, workers=1)
        assert info.value.best_deviation is not None

    def test_insufficient_primes(self):
        with pytest.raises(InsufficientPrimes):
            find_prime_set(random_semiprime(64, seed=1), 1, 4, 0, workers=1)

    def test_retry_widens_primes(self):
        N = random_semiprime(40, seed=6)
        system = find_prime_set_with_retry(N, 1, 10, 6, lambda p: p < 1 << 10, seed=0, workers=1)
        assert system.ell == 11

    @pytest.mark.slow
    def test_thousand_bit_search(self):
        N = random_semiprime(1021, seed=21)
        system = find_prime_set(N, 1, 20, 20, seed=0, budget=4_000_000)
        assert system.deviation < Fraction(1, 2 ** 20)
        assert modular_deviation(math.prod(system.primes), N) == system.deviation


class TestContributions:
    def test_contribution_factor_residues(self):
        u = contribution_factors((3, 5, 7))
        assert u[0] == 70
        for j, p in enumerate((3, 5, 7)):
            assert [uj % p for uj in u] == [int(i == j) for i in range(3)]

    def test_single_prime(self):
        assert contribution_factors((13,)) == (1,)

    def test_untruncated_table(self):
        system = ResidueSystem.from_primes((11, 13, 17), 101)
        table = contribution_table(system, 101, Modulus(101).bit_length)
        assert table.t == 0
        for j, uj in enumerate(table.u):
            assert table.C[j] == tuple((uj << k) % system.L % 101 for k in range(system.ell))

    def test_truncation_shift(self):
        N = random_semiprime(32, seed=2)
        system = ResidueSystem.from_primes((251, 241, 239, 233), N)
        table = contribution_table(system, N, 20)
        assert table.t == Modulus(N).bit_length - 20
        assert all(c < N >> table.t for row in table.C for c in row)

    def test_too_many_kept_bits(self):
        with pytest.raises(ResidueError):
            contribution_table(ResidueSystem.from_primes((11,), 101), 101, 8)


class TestCrtReconstruct:
    def test_small_example(self):
        system = ResidueSystem.from_primes((3, 5), 1009)
        assert crt_reconstruct(system, (2, 3)) == 8

    def test_zero_residues(self):
        system = ResidueSystem.from_primes((3, 5, 7), 1009)
        assert crt_reconstruct(system, (0, 0, 0)) == 0

    def test_recovers_value(self):
        system = ResidueSystem.from_primes((3, 5, 7), 1009)
        assert crt_reconstruct(system, (52 % 3, 52 % 5, 52 % 7)) == 52

    def test_exhaustive_small_system(self):
        primes = (251, 241, 239)
        N = 1001
        system = ResidueSystem.from_primes(primes, N)
        rng = random.Random(0)
        for x in rng.sample(range(system.L), 2000):
            assert crt_reconstruct(system, [x % p for p in primes], N) == x % N

    def test_length_mismatch(self):
        system = ResidueSystem.from_primes((3, 5), 1009)
        with pytest.raises(ResidueError):
            crt_reconstruct(system, (1,))


class TestDiscreteLogs:
    def test_generator(self):
        assert find_generator(7) == 3

    def test_baby_step_giant_step(self):
        solver = BabyStepGiantStep(3, 7)
        assert solver.log(4) == 4
        assert solver.log(1) == 0

    def test_zero_has_no_log(self):
        with pytest.raises(DlogUndefined):
            BabyStepGiantStep(3, 7).log(0)

    def test_tables_and_diffs(self):
        system = ResidueSystem.from_primes((7, 11), 1009)
        table = dlog_tables(system, [4])
        assert table.logs[7] == [[0, 4]]
        assert len(table.diffs) == 3
        assert table.diffs[0] == table.logs[7]
        assert table.diffs[-1] == [[-d for d in row] for row in table.logs[11]]

    def test_every_entry_checks(self):
        N = 1009
        system = ResidueSystem.from_primes((251, 241), N)
        multipliers = [2, 4, 16, 256]
        table = dlog_tables(system, multipliers, 2, N)
        products = windowed_multipliers(multipliers, 2, N)
        for p in system.primes:
            g = table.generators[p]
            for i, row in enumerate(table.logs[p]):
                for v, D in enumerate(row):
                    assert pow(g, D, p) == products[i][v] % p

    def test_repeated_prime_gives_zero_diff(self):
        system = ResidueSystem.from_primes((7, 7), 1009)
        table = dlog_tables(system, [4, 2])
        assert all(d == 0 for row in table.diffs[1] for d in row)

    def test_divisible_multiplier(self):
        system = ResidueSystem.from_primes((7,), 1009)
        with pytest.raises(DlogUndefined):
            dlog_tables(system, [14])


class TestSerialization:
    def test_parse_reverifies(self):
        N = random_semiprime(48, seed=5)
        system = find_prime_set(N, 1, 14, 8, seed=3, workers=1)
        parsed, parsed_N = parse_system(serialize_system(system, N))
        assert parsed_N == N
        assert parsed.primes == system.primes
        assert parsed.deviation == system.deviation

    def test_tampered_prime_rejected(self):
        N = random_semiprime(48, seed=5)
        system = find_prime_set(N, 1, 14, 8, seed=3, workers=1)
        lines = serialize_system(system, N).splitlines()
        lines[6] = str(system.primes[0] + 2)
        with pytest.raises(ResidueFormatError):
            parse_system("\n".join(lines))

    def test_missing_header(self):
        with pytest.raises(ResidueFormatError):
            parse_system("N ff\n")

    def test_verify_rejects_factor_of_modulus(self, caplog):
        N = 2707 * 3389
        system = ResidueSystem.from_primes((2707, 4093), N)
        with caplog.at_level("ERROR"):
            assert not verify_system(system, N)
        assert "divides N" in caplog.text
        assert all(r.name == "root" for r in caplog.records)

    def test_verify_catches_stale_remainder(self):
        N = random_semiprime(48, seed=5)
        system = find_prime_set(N, 1, 14, 8, seed=3, workers=1)
        stale = ResidueSystem(primes=system.primes, ell=system.ell, L=system.L,
                              deviation=system.deviation, f_target=system.f_target,
                              W1=system.W1, l_mod_n=(system.l_mod_n + 1) % N)
        assert not verify_system(stale, N)


class TestPublishedSet:
    def test_shape(self):
        primes = published_prime_set()
        assert 24_000 < len(primes) < 26_000
        assert all(p.bit_length() == 22 for p in primes)
        assert 2097769 in primes
        assert list(primes) == sorted(primes)

    def test_challenge_modulus_is_certified(self):
        assert RSA2048_MODULUS.bit_length() == 2048
        assert len(str(RSA2048_MODULUS)) == 617
        certified, deviation = certify_challenge_modulus(RSA2048_MODULUS)
        assert certified
        assert deviation < Fraction(1, 2 ** 32)
        assert deviation == modular_deviation(math.prod(published_prime_set()), RSA2048_MODULUS)

    def test_random_modulus_is_not_certified(self):
        N = random_semiprime(2048, seed=1)
        certified, deviation = certify_challenge_modulus(N)
        assert not certified
        assert 0 <= deviation <= Fraction(1, 2)


class TestRandomSemiprime:
    @pytest.mark.parametrize("bits", [8, 24, 33, 64])
    def test_exact_width(self, bits):
        N = random_semiprime(bits, seed=0)
        assert N.bit_length() == bits
        assert N % 2 == 1

    def test_reproducible(self):
        assert random_semiprime(40, seed=5) == random_semiprime(40, seed=5)
