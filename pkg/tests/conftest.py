from __future__ import annotations

import numpy as np
import pytest

from mqa.numcore import Tensor, backward, no_grad, numerical_gradient, relative_error


def grad_error(build, arrays, step=1e-4):
    """Relative error between backward() and central differences for ``build``.

    ``build`` maps a list of Tensors to a scalar Tensor.
    """
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    analytic = backward(build(leaves), leaves)
    work = [a.copy() for a in arrays]

    def f():
        with no_grad():
            return build([Tensor(w) for w in work]).item()

    return relative_error(analytic, numerical_gradient(f, work, step))


def module_grad_error(module, loss_fn, step=1e-4):
    """Same check over every parameter of ``module``; ``loss_fn()`` runs the forward pass."""
    module.zero_grad()
    params = module.parameters()
    analytic = backward(loss_fn(), params)

    def f():
        with no_grad():
            return loss_fn().item()

    return relative_error(analytic, numerical_gradient(f, [p.data for p in params], step))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# a configuration small enough to run every CLI command in seconds
SMALL_CONFIG = {
    "seed": 0,
    "synth": {"subjects": 3, "correct_per_subject": 5, "incorrect_per_subject": 5, "min_frames": 30,
              "max_frames": 40},
    "scoregen": {"canonical_T": 24, "latent_dim": 2, "hidden": [32, 16], "epochs": 60, "lr": 0.002,
                 "components": 1, "sd_folds": 3},
    "train": {"W": 4, "K": 8, "heads": 2, "blocks": 1, "canonical_T": 16, "lr": 0.002, "K_part": 6,
              "hfe_attention_heads": 2, "mlp_hidden": [16, 16], "cnn_channels": [8, 8], "cnn_kernels": [3, 2],
              "hfe_channels": 4, "head_hidden": [16, 8], "max_epochs": 15, "patience": 5, "runs": 2},
}


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a criterion outcome; the lines are printed in the terminal summary."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
