import math

import numpy as np
import pytest
import torch

from gaitrecon.nn import (LAYER_KINDS, Adam, AdamConfig, AdamState, CheckpointError, LayerSpec, ShapeError,
                          adam_step, backward, bce_loss, build_layer, forward, mse_loss, read_checkpoint,
                          save_checkpoint)
from gaitrecon.nn.checkpoint import load_state
from gaitrecon.nn.training import Saturation

H = 1e-5
TOL = 1e-4


def _numeric_grad(f, t: torch.Tensor) -> torch.Tensor:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``t`` (mutated in place)."""
    g = torch.zeros_like(t)
    flat, gflat = t.view(-1), g.view(-1)
    for k in range(flat.numel()):
        old = flat[k].item()
        flat[k] = old + H
        up = f()
        flat[k] = old - H
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * H)
    return g


def _rel_err(a: torch.Tensor, n: torch.Tensor) -> float:
    diff = float((a - n).norm())
    if diff < 1e-9:
        # gradients that are exactly zero analytically (a conv bias feeding batchnorm)
        # leave only rounding noise in the difference quotient
        return 0.0
    return diff / float(a.norm() + n.norm())


SMALL = {
    "conv2d": (LayerSpec.conv2d(2, 3), (2, 2, 6, 5)),
    "maxpool2d": (LayerSpec.maxpool2d(2), (2, 2, 5, 6)),
    "upsample2d_nearest": (LayerSpec.upsample2d_nearest(2), (2, 2, 3, 4)),
    "dense": (LayerSpec.dense(12, 4), (3, 3, 2, 2)),
    "lstm_cell": (LayerSpec.lstm_cell(5, 3), (2, 5)),
    "batchnorm": (LayerSpec.batchnorm(3), (4, 3, 3, 3)),
    "residual_block": (LayerSpec.residual_block(2), (3, 2, 4, 4)),
    "sigmoid": (LayerSpec.sigmoid(), (2, 3, 4)),
    "relu": (LayerSpec.relu(), (2, 3, 4)),
    "crop_rows": (LayerSpec.crop_rows(1), (2, 2, 5, 3)),
}


def test_every_kind_has_a_gradient_case():
    assert set(SMALL) == set(LAYER_KINDS)


def gradient_errors(kind: str) -> dict[str, float]:
    """Relative error of every analytic input and parameter gradient of one layer kind."""
    spec, shape = SMALL[kind]
    gen = torch.Generator().manual_seed(7)
    layer = build_layer(spec, torch.Generator().manual_seed(3), torch.float64)
    layer.train()
    x = torch.randn(shape, generator=gen, dtype=torch.float64)
    if kind == "relu":
        x = x + torch.sign(x) * 0.05  # keep inputs away from the kink
    if kind == "lstm_cell":
        state = (torch.randn(shape[0], 3, generator=gen, dtype=torch.float64),
                 torch.randn(shape[0], 3, generator=gen, dtype=torch.float64))
        inp = (x, state)
        up = (torch.randn(shape[0], 3, generator=gen, dtype=torch.float64),
              torch.randn(shape[0], 3, generator=gen, dtype=torch.float64))
        leaves = [x, state[0], state[1]]

        def loss():
            h, c = forward(layer, inp)
            return float((h * up[0]).sum() + (c * up[1]).sum())
    else:
        inp = x
        with torch.no_grad():
            up = torch.randn(forward(layer, x).shape, generator=gen, dtype=torch.float64)
        leaves = [x]

        def loss():
            with torch.no_grad():
                return float((forward(layer, inp) * up).sum())

    in_grad, param_grads = backward(layer, inp, up)
    analytic_inputs = [in_grad] if kind != "lstm_cell" else [in_grad[0], in_grad[1][0], in_grad[1][1]]
    errors = {}
    with torch.no_grad():
        for k, (a, leaf) in enumerate(zip(analytic_inputs, leaves)):
            errors[f"input{k}"] = _rel_err(a, _numeric_grad(loss, leaf))
        for name, p in layer.named_parameters():
            errors[name] = _rel_err(param_grads[name], _numeric_grad(loss, p.data))
    return errors


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_gradients_match_central_differences(kind):
    errors = gradient_errors(kind)
    assert errors and max(errors.values()) < TOL, errors


def test_dense_gradient_of_output_sum_is_input():
    layer = build_layer(LayerSpec.dense(3, 2))
    x = torch.tensor([[1.0, -2.0, 0.5]], dtype=torch.float64)
    _, grads = backward(layer, x, torch.ones(1, 2, dtype=torch.float64))
    assert torch.equal(grads["weight"], x.expand(2, 3))
    assert torch.equal(grads["bias"], torch.ones(2, dtype=torch.float64))


def test_relu_blocks_gradient_at_negative_input():
    layer = build_layer(LayerSpec.relu())
    x = torch.tensor([-1.0, 2.0], dtype=torch.float64)
    g, _ = backward(layer, x, torch.ones(2, dtype=torch.float64))
    assert g.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("spec,shape,expected", [
    (LayerSpec.maxpool2d(2), (1, 32, 150, 200), (1, 32, 75, 100)),
    (LayerSpec.maxpool2d(2), (1, 8, 75, 100), (1, 8, 38, 50)),
    (LayerSpec.upsample2d_nearest(2), (1, 8, 38, 50), (1, 8, 76, 100)),
    (LayerSpec.crop_rows(1), (1, 32, 152, 200), (1, 32, 150, 200)),
    (LayerSpec.conv2d(1, 32), (1, 1, 150, 200), (1, 32, 150, 200)),
    (LayerSpec.dense(15200, 7), (2, 8, 38, 50), (2, 7)),
])
def test_shape_algebra(spec, shape, expected):
    with torch.no_grad():
        assert tuple(forward(build_layer(spec), torch.zeros(shape, dtype=torch.float64)).shape) == expected


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        forward(build_layer(LayerSpec.conv2d(2, 4)), torch.zeros(1, 3, 5, 5, dtype=torch.float64))
    with pytest.raises(ShapeError):
        forward(build_layer(LayerSpec.dense(4, 2)), torch.zeros(1, 5, dtype=torch.float64))
    with pytest.raises(ShapeError):
        forward(build_layer(LayerSpec.crop_rows(2)), torch.zeros(1, 1, 4, 4, dtype=torch.float64))


def test_layer_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        LayerSpec("softmax")
    with pytest.raises(ValueError):
        LayerSpec.conv2d(1, 4, kernel=0)
    with pytest.raises(ValueError):
        LayerSpec("dense", {"in_features": 3})
    spec = LayerSpec.lstm_cell(10, 4)
    assert LayerSpec.from_dict(spec.to_dict()) == spec


def test_adam_first_step_moves_by_learning_rate():
    p = torch.tensor([1.0], dtype=torch.float64)
    adam_step([p], [torch.tensor([1.0], dtype=torch.float64)], AdamState(), AdamConfig())
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert p.item() == pytest.approx(1.0 - 1e-3 / (1 + 1e-7), abs=1e-15)


def test_adam_zero_gradient_is_identity():
    p = torch.tensor([0.3, -2.0], dtype=torch.float64)
    state = AdamState()
    before = p.clone()
    for _ in range(3):
        adam_step([p], [torch.zeros(2, dtype=torch.float64)], state, AdamConfig())
    assert torch.equal(p, before)
    assert state.step == 3


def test_adam_is_deterministic():
    def run():
        torch.manual_seed(0)
        layer = build_layer(LayerSpec.dense(4, 2), torch.Generator().manual_seed(1))
        opt = Adam(layer.parameters())
        x = torch.linspace(-1, 1, 12, dtype=torch.float64).reshape(3, 4)
        for _ in range(5):
            opt.zero_grad()
            mse_loss(layer(x), torch.ones(3, 2, dtype=torch.float64)).backward()
            opt.step()
        return layer.weight.detach().clone()

    assert torch.equal(run(), run())


@pytest.mark.parametrize("bad", [dict(learning_rate=0), dict(beta1=1.0), dict(beta2=-0.1), dict(epsilon=0)])
def test_adam_config_validation(bad):
    with pytest.raises(ValueError):
        AdamConfig(**bad)


def test_bce_values():
    half = torch.tensor([0.5], dtype=torch.float64)
    assert float(bce_loss(half, torch.tensor([1.0], dtype=torch.float64))) == pytest.approx(0.693147, abs=1e-6)
    assert float(bce_loss(half, torch.tensor([0.0], dtype=torch.float64))) == pytest.approx(math.log(2), abs=1e-12)
    one = torch.tensor([1.0 - 1e-7], dtype=torch.float64)
    assert float(bce_loss(one, torch.tensor([1.0], dtype=torch.float64))) < 1e-6
    # summed, not averaged
    p = torch.full((2, 3), 0.5, dtype=torch.float64)
    assert float(bce_loss(p, torch.ones(2, 3, dtype=torch.float64))) == pytest.approx(6 * math.log(2))


def test_mse_values():
    t = torch.zeros(2, dtype=torch.float64)
    assert float(mse_loss(torch.tensor([1.0, 2.0], dtype=torch.float64), t)) == 2.5
    assert float(mse_loss(t + 1, t)) == 1.0
    assert float(mse_loss(t, t)) == 0.0


def test_losses_reject_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(torch.zeros(2), torch.zeros(3))
    with pytest.raises(ValueError):
        mse_loss(torch.zeros(2), torch.zeros(2, 1))


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    specs = (LayerSpec.conv2d(1, 2), LayerSpec.batchnorm(2))
    a = torch.nn.Sequential(*[build_layer(s, torch.Generator().manual_seed(5)) for s in specs])
    path = save_checkpoint(tmp_path / "m.ckpt", "toy", a, {"x": 1}, specs)
    header, tensors = read_checkpoint(path)
    assert header["model_kind"] == "toy" and header["config"] == {"x": 1}
    assert [LayerSpec.from_dict(d) for d in header["layers"]] == list(specs)
    b = torch.nn.Sequential(*[build_layer(s, torch.Generator().manual_seed(9)) for s in specs])
    load_state(b, tensors)
    for (n1, t1), (n2, t2) in zip(a.state_dict().items(), b.state_dict().items()):
        assert n1 == n2 and torch.equal(t1, t2)
    assert save_checkpoint(tmp_path / "again.ckpt", "toy", b, {"x": 1}, specs).read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_saturation_stops_after_patience():
    stop = Saturation(tol=1e-4, patience=3)
    assert not stop.update(1.0)
    assert not stop.update(0.5)
    flags = [stop.update(0.5) for _ in range(3)]
    assert flags == [False, False, True]


def test_glorot_init_is_seeded():
    a = build_layer(LayerSpec.dense(6, 3), torch.Generator().manual_seed(11))
    b = build_layer(LayerSpec.dense(6, 3), torch.Generator().manual_seed(11))
    assert torch.equal(a.weight, b.weight)
    limit = math.sqrt(6 / (6 + 3))
    assert float(a.weight.detach().abs().max()) <= limit
    assert np.all(a.bias.detach().numpy() == 0)
