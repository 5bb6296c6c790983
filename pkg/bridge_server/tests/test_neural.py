import numpy as np
import pytest

torch = pytest.importorskip("torch")

from scorebridge import NeuralCheckpoint, respaced_schedule


class HalfNoise(torch.nn.Module):
    """Toy denoiser: predicts half the input as the injected noise."""

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return 0.5 * x


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "half.pt"
    torch.jit.script(HalfNoise()).save(str(path))
    return str(path)


def test_noise_prediction_converted_to_score(checkpoint):
    schedule = respaced_schedule(100)
    model = NeuralCheckpoint(schedule, checkpoint)
    x = np.random.default_rng(0).normal(size=(1, 4, 4))
    for t in (1, 50, 100):
        got = model.score(x, t)
        expect = -(0.5 * x.astype(np.float32).astype(np.float64)) / schedule.beta_hat(t)
        assert np.max(np.abs(got - expect)) < 1e-6


def test_neural_rejects_t_zero(checkpoint):
    schedule = respaced_schedule(100)
    model = NeuralCheckpoint(schedule, checkpoint)
    with pytest.raises(ValueError):
        model.score(np.zeros((1, 2, 2)), 0)
