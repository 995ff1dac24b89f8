import os
import logging
import zlib
from dataclasses import dataclass
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()
import numpy as np
from sqlalchemy import create_engine
from sqlalchemy.orm import DeclarativeBase, sessionmaker

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Base(DeclarativeBase):
    pass


@dataclass(frozen=True)
class Settings:
    """
    Process-wide settings read from the environment.

    Command line flags override these values; library functions take explicit
    arguments and only fall back to the settings when none are given.
    """
    threads: int
    log_level: str
    database_url: str | None
    seed: int
    data_dir: str
    challenge_modulus_file: str | None

    @classmethod
    def from_env(cls):
        here = os.path.dirname(os.path.abspath(__file__))
        threads = os.environ.get("QFE_THREADS")
        return cls(
            threads=max(1, int(threads)) if threads else (os.cpu_count() or 1),
            log_level=os.environ.get("QFE_LOG_LEVEL", "INFO").upper(),
            database_url=os.environ.get("QFE_DATABASE_URL") or None,
            seed=int(os.environ.get("QFE_SEED", "0")),
            data_dir=os.environ.get("QFE_DATA_DIR", os.path.join(here, "data")),
            challenge_modulus_file=os.environ.get("QFE_CHALLENGE_MODULUS_FILE") or None,
        )


settings = Settings.from_env()


def configure_logging(level=None):
    """Configure root logging once; later calls only adjust the level."""
    level_name = (level or settings.log_level).upper()
    numeric = getattr(logging, level_name, None)
    if not isinstance(numeric, int):
        logging.warning(f"Unknown log level '{level_name}', using INFO")
        numeric = logging.INFO
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)


# Configure logging for the whole package
configure_logging()


def worker_count(requested=None):
    """Number of worker processes, capped by QFE_THREADS."""
    if requested is None:
        return settings.threads
    return max(1, min(int(requested), settings.threads))


def rng_stream(seed, name):
    """
    Independent numpy generator for a named consumer of the root seed.

    The stream depends only on (seed, name), so adding a new consumer never
    shifts the numbers drawn by an existing one.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key]))


def random_bits(rng, bits):
    """Uniform integer in [0, 2**bits) of arbitrary size."""
    if bits <= 0:
        return 0
    nbytes = (bits + 7) // 8
    return int.from_bytes(rng.bytes(nbytes), "little") & ((1 << bits) - 1)


def random_below(rng, bound):
    """Uniform integer in [0, bound) of arbitrary size, by rejection."""
    if bound <= 1:
        return 0
    bits = (bound - 1).bit_length()
    while True:
        value = random_bits(rng, bits)
        if value < bound:
            return value


_session_factories = {}


def get_session(database_url=None):
    """
    Open a session on the result store, creating tables on first use.
    Returns None when no database is configured.
    """
    url = database_url or settings.database_url
    if not url:
        return None
    if url not in _session_factories:
        engine = create_engine(url, pool_pre_ping=True)
        # Import models to ensure tables are registered on Base
        import models  # noqa: F401
        Base.metadata.create_all(engine)
        _session_factories[url] = sessionmaker(bind=engine)
        logging.info(f"Result store ready at {engine.url.render_as_string(hide_password=True)}")
    return _session_factories[url]()
