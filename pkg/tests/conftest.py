import json
import pathlib
import types

import numpy as np
import pytest

from dsdsim.dsd_simkit import SyntheticPairSpec, make_pair
from dsdsim.dsd_transport import ChannelConfig


@pytest.fixture(scope="session")
def test_paths():
    test_paths = types.SimpleNamespace()

    test_path = pathlib.Path(__file__).parent.resolve()
    test_paths.data_dir = test_path / "data"
    test_paths.reference_tables = test_paths.data_dir / "reference_tables.json"
    test_paths.golden_wire = test_paths.data_dir / "golden_wire.json"
    test_paths.golden_trace = test_paths.data_dir / "golden_trace.json"
    test_paths.golden_k_table = test_paths.data_dir / "golden_k_table.csv"

    return test_paths


@pytest.fixture(scope="session")
def reference_tables(test_paths):
    with open(test_paths.reference_tables, "r") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def golden_wire(test_paths):
    with open(test_paths.golden_wire, "r") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def golden_trace(test_paths):
    with open(test_paths.golden_trace, "r") as f:
        return json.load(f)


@pytest.fixture(scope="session")
def top_k_channel(reference_tables):
    """32k-vocabulary FP16 channel with full-vocabulary b=0.23 and c=0.07."""
    params = reference_tables["top_k_latency"]
    return ChannelConfig.from_ratios(
        b_full=params["b_full"],
        c=params["c"],
        vocab_size=params["vocab_size"],
        prob_bits=params["prob_bits"],
    )


@pytest.fixture(scope="session")
def small_pair():
    pair = types.SimpleNamespace()

    pair.spec = SyntheticPairSpec(
        vocab_size=16, overlap_lambda=0.6, target_temp=1.0, seed=7
    )
    pair.slm, pair.llm = make_pair(pair.spec)
    pair.channel = ChannelConfig.from_ratios(b_full=0.23, c=0.07, vocab_size=16)

    return pair


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
