import pytest
import torch

from lipvsr.config import DecoderConfig, EncoderConfig, FrontendConfig, ModelConfig

torch.set_num_threads(1)

_ACCEPTANCE_LINES = []


def tiny_model_config(variant="e_branchformer", dim=8, channels=(1, 2, 4, 8), dropout=0.0):
    """Two encoder layers, one decoder layer per direction, width ``dim``."""
    return ModelConfig(
        frontend=FrontendConfig(
            block_depths=(1, 1, 1, 1), block_channels=channels, stem_channels=channels[0],
            stem_kernel=(3, 3, 3),
        ),
        encoder=EncoderConfig(
            variant=variant, num_layers=2, model_dim=dim, num_heads=2, feedforward_dim=2 * dim,
            cgmlp_dim=2 * dim, conv_kernel=3, dropout=dropout,
        ),
        decoder=DecoderConfig(
            num_layers=1, model_dim=dim, num_heads=2, feedforward_dim=2 * dim, dropout=dropout
        ),
    )


@pytest.fixture
def tiny_config():
    return tiny_model_config


@pytest.fixture
def acceptance_report():
    def report(criterion, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
