import numpy as np
import pytest

from zsdet.model import ModelConfig, ModelParams
from zsdet.semantics import ClassVocabulary, SemanticTable, build_similarity_matrix


class TinyWorld:
    """4 seen / 3 unseen classes with random embeddings and a fresh model."""

    def __init__(self, seed=0, n_s=4, n_u=3, d_r=6, d_c=5):
        rng = np.random.default_rng(seed)
        self.vocab = ClassVocabulary.build([f"s{i}" for i in range(n_s)], [f"u{i}" for i in range(n_u)])
        self.table = SemanticTable(rng.standard_normal((n_s + n_u, d_c)))
        self.S = build_similarity_matrix(self.table, self.vocab)
        self.config = ModelConfig(d_r=d_r, d_c=d_c, d_e=7, g_hidden=6, h_dim=4)
        self.params = ModelParams.init(self.config, self.table, self.vocab, rng)
        # zero biases put all-zero fused vectors exactly on a ReLU kink;
        # random biases keep finite differences on smooth ground
        for name, arr in self.params.flat().items():
            if name.endswith(".b"):
                arr += rng.normal(0, 0.1, arr.shape)
        self.rng = rng

    def batch(self, n_r=12):
        f = self.rng.standard_normal((n_r, self.config.d_r))
        labels = self.rng.integers(0, self.vocab.n_seen + 1, n_r)
        labels[:3] = [0, 1, 1]  # guarantee background and a positive pair
        targets = np.where(labels[:, None] > 0, self.rng.normal(0, 0.5, (n_r, 4)), 0.0)
        return f, labels, targets


@pytest.fixture
def tiny():
    return TinyWorld()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the
    terminal summary so they show up even when output is captured."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split("criterion ")[1]):
            terminalreporter.write_line(line)
