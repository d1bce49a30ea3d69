import pytest

from seqrank.model import ModelConfig
from seqrank.sequence import ActionVocab, UserAction, build_sequence

# one line per end-to-end acceptance check, printed after the run so the
# verdicts survive pytest's output capture
ACCEPTANCE_RESULTS = []


def record_acceptance(num, name, passed, elapsed):
    line = (f"acceptance {num:02d} {name}: "
            f"{'PASS' if passed else 'FAIL'} ({elapsed:.1f}s)")
    ACCEPTANCE_RESULTS.append((num, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocab():
    return ActionVocab()


def tiny_model_config(**overrides):
    """Small dims so coordinate-wise gradient checks stay fast."""
    base = dict(seq_len=4, d_pinsage=2, d_action=2, batch_emb_dim=2,
                other_dim=2, n_layers=2, n_heads=1, d_hidden=3,
                dropout=0.0, K=2, head_hidden=4)
    base.update(overrides)
    return ModelConfig(**base)


def random_actions(rng, n, d_pinsage=2, t_max=10_000):
    ts = rng.choice(t_max, size=n, replace=False)
    return [UserAction(timestamp=int(t), action_type=int(rng.integers(0, 4)),
                       pin_embedding=rng.normal(size=d_pinsage),
                       pin_id=int(rng.integers(0, 10_000)),
                       cluster_id=int(rng.integers(0, 5)))
            for t in ts]


def random_sequence(rng, n_real, max_len, d_pinsage=2, t_request=10_000):
    return build_sequence(random_actions(rng, n_real, d_pinsage), t_request, max_len)
