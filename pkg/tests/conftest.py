import pytest
import torch

from vidinflate.data import generate_corpus
from vidinflate.diffusion import make_schedule
from vidinflate.inflation import inflate
from vidinflate.model import ModelConfig, build_image_unet

torch.set_num_threads(1)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        base_channels=8,
        stage_multipliers=(1, 2, 2, 4),
        text_embed_dim=8,
        vocab_size=32,
        image_size=32,
        frames=4,
        adapter_dim=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def image_params(cfg):
    return build_image_unet(cfg, seed=0)


@pytest.fixture(scope="session")
def video_params(image_params, cfg):
    return inflate(image_params, cfg, adapter_seed=1)


@pytest.fixture(scope="session")
def schedule():
    return make_schedule(100, 1e-4, 0.02)


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(12, 4, 32, 32, seed=3)


def random_video(cfg, batch=2, frames=4, seed=0):
    gen = torch.Generator().manual_seed(seed)
    v = torch.rand(batch, frames, cfg.in_channels, cfg.image_size, cfg.image_size, generator=gen) * 2 - 1
    t = torch.randint(0, 100, (batch,), generator=gen)
    text = torch.randint(0, cfg.vocab_size, (batch, cfg.text_length), generator=gen)
    return v, t, text


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(verdicts):
        terminalreporter.write_line(verdicts[ac])
