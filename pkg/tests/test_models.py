import dataclasses
from fractions import Fraction

import pytest

from app import get_session
from costs import estimate, estimate_rows
from modexp import AlgorithmParams, run_shot
from models import (MaskRun, ResidueCertificate, ScanEstimate, ShotRun, certificate_row,
                    mask_rows, new_run_id, scan_rows, shot_rows, store)
from periodfind import suppression_experiment
from residue import ResidueSystem, serialize_system


@pytest.fixture
def db(tmp_path):
    return f"sqlite:///{tmp_path / 'store.db'}"


def test_store_without_database(monkeypatch):
    import app
    monkeypatch.setattr(app, "settings", dataclasses.replace(app.settings, database_url=None))
    result = store([], None)
    assert result == {'success': False, 'message': 'No result store configured'}


def test_scan_rows_round_trip(db):
    cost = estimate(AlgorithmParams(n=2048, s=8, ell=21, w1=6, w3=3, w4=5, f=33))
    run_id = new_run_id()
    assert store(scan_rows(run_id, estimate_rows([cost])), db) == {'success': True, 'count': 1}
    session = get_session(db)
    try:
        row = session.query(ScanEstimate).filter_by(run_id=run_id).one()
        assert row.qubits == 1409
        assert row.pareto_flag is True
        assert row.toffolis == pytest.approx(cost.expected_toffolis)
    finally:
        session.close()


def test_shot_rows_keep_big_integers(db, config32):
    record = run_shot(config32, 0)
    run_id = new_run_id()
    assert store(shot_rows(run_id, config32.modulus.value, [record]), db)['success']
    session = get_session(db)
    try:
        row = session.query(ShotRun).filter_by(run_id=run_id).one()
        assert int(row.e) == record.e
        assert row.passed
        assert row.counters["loop4"]["phaseups"] == int(record.counters["loop4"]["phaseups"])
    finally:
        session.close()


def test_certificate_and_mask_rows(db):
    system = ResidueSystem.from_primes((251, 241, 239), 1001)
    text = serialize_system(system, 1001)
    result = suppression_experiment(1007, 2, 0.1, 20, seed=0)
    assert store([certificate_row(system, 1001, text)] + mask_rows(new_run_id(), [result]), db)['success']
    session = get_session(db)
    try:
        cert = session.query(ResidueCertificate).one()
        assert Fraction(cert.deviation) == system.deviation
        assert cert.certificate == text
        assert session.query(MaskRun).one().N == 1007
    finally:
        session.close()


def test_failed_commit_is_rolled_back(db):
    bad = ScanEstimate(run_id=None, n=1, s=1, ell=1, w1=1, w3=1, w4=1, f=1, m=1)
    result = store([bad], db)
    assert result['success'] is False
    assert 'Could not store results' in result['message']
