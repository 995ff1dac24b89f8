import logging
import uuid
from datetime import datetime

from sqlalchemy import Boolean, Column, DateTime, Float, Integer, JSON, String, Text

from app import Base, get_session
from modexp import counters_as_json


def new_run_id():
    return uuid.uuid4().hex


class ScanEstimate(Base):
    __tablename__ = 'scan_estimates'

    id = Column(Integer, primary_key=True)
    run_id = Column(String(32), nullable=False, index=True)
    n = Column(Integer, nullable=False)
    s = Column(Integer, nullable=False)
    ell = Column(Integer, nullable=False)
    w1 = Column(Integer, nullable=False)
    w3 = Column(Integer, nullable=False)
    w4 = Column(Integer, nullable=False)
    f = Column(Integer, nullable=False)
    m = Column(Integer, nullable=False)
    p_deviant = Column(Float)
    expected_shots = Column(Float)
    toffolis = Column(Float)
    qubits = Column(Integer)
    q3t = Column(Float)
    pareto_flag = Column(Boolean, default=False)
    created_at = Column(DateTime, default=datetime.utcnow)


class ShotRun(Base):
    __tablename__ = 'shot_runs'

    id = Column(Integer, primary_key=True)
    run_id = Column(String(32), nullable=False, index=True)
    modulus_hex = Column(Text, nullable=False)
    seed = Column(Integer, nullable=False)
    # Exponents and masks outgrow 64-bit columns, so they are stored as text
    e = Column(Text)
    mask = Column(Text)
    measurement = Column(Text)
    clean = Column(Boolean, default=False)
    passed = Column(Boolean, default=False)
    counters = Column(JSON)
    error = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)


class ResidueCertificate(Base):
    __tablename__ = 'residue_certificates'

    id = Column(Integer, primary_key=True)
    modulus_hex = Column(Text, nullable=False)
    ell = Column(Integer, nullable=False)
    f = Column(Integer, nullable=False)
    w1_products = Column(Integer, nullable=False)  # W1
    prime_count = Column(Integer, nullable=False)
    deviation = Column(Text, nullable=False)  # "num/den"
    certificate = Column(Text)  # full serialized system
    created_at = Column(DateTime, default=datetime.utcnow)


class MaskRun(Base):
    __tablename__ = 'mask_runs'

    id = Column(Integer, primary_key=True)
    run_id = Column(String(32), nullable=False, index=True)
    N = Column(Integer, nullable=False)
    g = Column(Integer, nullable=False)
    S = Column(Float, nullable=False)
    shots = Column(Integer, nullable=False)
    estimator = Column(String(20))
    masked_success = Column(Float)
    unmasked_success = Column(Float)
    suppression = Column(Float)
    ci_low = Column(Float)
    ci_high = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)


def store(rows, database_url=None):
    """
    Persist model instances to the result store.
    A failed commit is rolled back and reported, never raised.
    """
    session = get_session(database_url)
    if session is None:
        return {'success': False, 'message': 'No result store configured'}
    try:
        session.add_all(rows)
        session.commit()
        return {'success': True, 'count': len(rows)}
    except Exception as e:
        logging.error(f"Error storing {len(rows)} result rows: {e}")
        session.rollback()
        return {
            'success': False,
            'message': f'Could not store results: {e}'
        }
    finally:
        session.close()


def scan_rows(run_id, cost_rows):
    rows = []
    for row in cost_rows:
        row = dict(row)
        row["p_deviant"] = row.pop("P_deviant")
        row["toffolis"] = float(row["toffolis"])
        row["q3t"] = float(row["q3t"])
        row["pareto_flag"] = bool(row["pareto_flag"])
        rows.append(ScanEstimate(run_id=run_id, **row))
    return rows


def shot_rows(run_id, modulus, records):
    return [ShotRun(run_id=run_id, modulus_hex=f"{modulus:x}", seed=r.seed, e=str(r.e),
                    mask=str(r.mask), measurement=str(r.measurement), clean=r.clean,
                    passed=r.passed, counters=counters_as_json(r.counters),
                    error=r.error)
            for r in records]


def certificate_row(system, modulus, text):
    return ResidueCertificate(modulus_hex=f"{modulus:x}", ell=system.ell, f=system.f_target,
                              w1_products=system.W1, prime_count=len(system.primes),
                              deviation=f"{system.deviation.numerator}/{system.deviation.denominator}",
                              certificate=text)


def mask_rows(run_id, results):
    return [MaskRun(run_id=run_id, N=r.N, g=r.g, S=r.S, shots=r.shots, estimator=r.estimator,
                    masked_success=r.masked_success, unmasked_success=r.unmasked_success,
                    suppression=r.suppression, ci_low=r.ci_low, ci_high=r.ci_high)
            for r in results]
