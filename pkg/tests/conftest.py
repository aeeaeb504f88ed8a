import numpy as np
import pytest
import torch

from groundcap.adapter import AdapterConfig, FeatureAdapter
from groundcap.dataset import SyntheticSpec, gen_synthetic_dataset
from groundcap.language import prepare_lm
from groundcap.training import CaptionData, TrainItem


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_adapter(n=4, c=8, depth=1, heads=4, d_lm=8, seed=0, dtype=torch.float64, std=None):
    model = FeatureAdapter(AdapterConfig(n, c, depth, heads, d_lm), generator=torch.Generator().manual_seed(seed))
    model = model.to(dtype)
    if std is not None:  # larger weights make oracle comparisons non-trivial
        g = torch.Generator().manual_seed(seed + 1)
        with torch.no_grad():
            for p in model.parameters():
                p.add_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(dtype) * std)
    return model


@pytest.fixture(scope="session")
def overfit_data():
    """8-sample synthetic corpus with a frozen LM pretrained on a disjoint caption corpus."""
    samples, bundles = gen_synthetic_dataset(SyntheticSpec(8, seed=3))
    corpus, _ = gen_synthetic_dataset(SyntheticSpec(1000, seed=100), shape=None)
    vocab, lm = prepare_lm([s.caption for s in corpus] + [s.caption for s in samples], prefix_len=32)
    items = [TrainItem(b, tuple(vocab.encode(s.caption))) for s, b in zip(samples, bundles)]
    return CaptionData(vocab, lm, items, bundles, [[s.caption] for s in samples])


ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d} {name}: {detail}")
