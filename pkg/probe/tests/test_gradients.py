"""Autograd against central finite differences at double precision.

The blend scalar and the fusion gates sit at zero after construction,
which silences the gradients of everything they multiply, so the check
first kicks every parameter to a generic position.
"""

import numpy as np
import pytest
import torch

from cma_probe.dataset import to_tensors
from cma_probe.model import CmaModel

from util import NAMED_GROUPS, fd_group_error, random_windows, tiny_hyperparams


@pytest.fixture(scope="module")
def checked_model():
    hp = tiny_hyperparams()
    torch.manual_seed(42)
    model = CmaModel(hp).double()
    model.eval()
    gen = torch.Generator().manual_seed(7)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(0.05 * torch.randn(param.shape, generator=gen, dtype=torch.float64))
        model.gates.uniform_(-0.4, 0.4, generator=gen)
        model.text_encoder.alpha.fill_(0.3)
    rng = np.random.default_rng(21)
    data = to_tensors(random_windows(rng, 3, hp), dtype=torch.float64)
    return hp, model, data


@pytest.mark.parametrize("group", sorted(NAMED_GROUPS))
def test_group_gradient_matches_finite_differences(checked_model, group):
    hp, model, data = checked_model
    param = dict(model.named_parameters())[NAMED_GROUPS[group]]
    error = fd_group_error(model, data, param, hp.lambda_aux)
    assert error <= 1e-6, f"{group}: relative error {error:.3e}"


def test_gradients_flow_into_every_group(checked_model):
    hp, model, data = checked_model
    model.zero_grad(set_to_none=True)
    from util import total_loss

    total_loss(model, data, hp.lambda_aux).backward()
    named = dict(model.named_parameters())
    for group, name in NAMED_GROUPS.items():
        grad = named[name].grad
        assert grad is not None and float(grad.abs().sum()) > 0.0, group
