import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# One line per release criterion, filled in by test_acceptance.py. Replayed
# after the run because pytest's capture swallows prints from inside tests.
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def synth_samples():
    from strokeless import dataset

    return dataset.synth_generate(dataset.SynthSpec(count=6, size=64, seed=5))


@pytest.fixture(scope="session")
def tiny_checkpoint(synth_samples, tmp_path_factory):
    """Checkpoint of a 1-epoch tiny-geometry training run, shared by CLI and
    service tests."""
    from strokeless.training import run_training

    out = tmp_path_factory.mktemp("ckpt_run")
    cfg = tiny_train_config(epochs=1, batch_size=4)
    run_training(cfg, synth_samples, out)
    return out / "checkpoint"


def tiny_train_config(**overrides):
    """Small geometry that keeps unit tests fast; contract-relevant values
    (losses, update order, defaults under test) stay at their real defaults."""
    from strokeless.training import TrainConfig

    base = dict(
        epochs=1,
        batch_size=2,
        image_size=64,
        base_channels=4,
        levels=3,
        disc_base_channels=8,
        disc_layers=3,
        seed=7,
    )
    base.update(overrides)
    return TrainConfig(**base)


def finite_diff_grad(fn, tensor: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite differences of scalar fn w.r.t. every element of tensor.

    The tensor is perturbed in place element by element; fn must re-read it on
    each call. Use float64 inputs for meaningful comparisons.
    """
    flat = tensor.reshape(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = float(fn())
            flat[i] = orig - eps
            lo = float(fn())
            flat[i] = orig
            grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(tensor.shape)


def max_rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Largest elementwise relative error, ignoring entries where both
    gradients are negligibly small."""
    a = analytic.detach().reshape(-1)
    n = numeric.reshape(-1)
    denom = torch.maximum(a.abs(), n.abs())
    keep = denom > 1e-8
    if not bool(keep.any()):
        return 0.0
    return float(((a - n).abs()[keep] / denom[keep]).max())


def brute_force_point_in_polygon(polygon: np.ndarray, x: float, y: float) -> bool:
    """Even-odd ray crossing test; agrees with nonzero winding on simple
    (non-self-intersecting) polygons."""
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 <= y) != (y2 <= y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside
