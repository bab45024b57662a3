import numpy as np
import pytest

from oranlat.dataset import Scaler
from oranlat.forecaster import Checkpoint, ModelConfig, init_weights
from oranlat.kpm import KpmRecord


def make_record(ts_ms=0, **overrides) -> KpmRecord:
    base = dict(
        ts_ms=ts_ms, ue_count=1, latency_ms=12.5, prb_avail_ul=40, prb_total_ul=106,
        ul_pkt_success_rate=0.99, ul_sdu_volume=300.0, ul_throughput=24.0,
        air_if_delay_ms=2.6, snr_db=18.0, cqi=11,
    )
    base.update(overrides)
    return KpmRecord(**base)


def random_checkpoint(units=4, lookback=6, seed=0, dtype="float64") -> Checkpoint:
    """Untrained but fully formed checkpoint with a plausible scaler."""
    cfg = ModelConfig(units=units, lookback=lookback, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed)
    w = init_weights(cfg, rng)
    w.b_dense[...] = 0.3
    lo = np.array([1, 5, 0, 106, 0.8, 0, 0, 2.5, 10, 5], dtype=float)
    hi = np.array([1, 40, 106, 106, 1.0, 800, 60, 5.0, 26, 15], dtype=float)
    return Checkpoint(cfg, Scaler(lo, hi, 5.0, 40.0), w, 0.01, 1)


@pytest.fixture
def record_factory():
    return make_record


# Acceptance criteria register their outcome here; the summary hook prints them.
ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        digits = "".join(ch for ch in key if ch.isdigit())
        return int(digits), key

    for key in sorted(ACCEPTANCE_RESULTS, key=order):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
