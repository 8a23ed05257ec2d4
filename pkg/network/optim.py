"""
Adam updates over explicit gradient lists.
"""
from dataclasses import dataclass, field

import torch

from errors import InvalidArgument

__all__ = ['AdamState', 'adam_step']


@dataclass
class AdamState:
    params: list[torch.Tensor]
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    optimizer: torch.optim.Adam = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.optimizer = torch.optim.Adam(self.params, lr=self.lr, betas=self.betas, eps=self.eps)

    def moments(self, param: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """First and second moment estimates of a parameter."""
        state = self.optimizer.state[param]
        return state['exp_avg'], state['exp_avg_sq']


def adam_step(state: AdamState, grads: list[torch.Tensor]) -> list[torch.Tensor]:
    """Applies one bias-corrected Adam update in place and returns the parameters."""
    if len(grads) != len(state.params):
        raise InvalidArgument(f'{len(grads)} gradients for {len(state.params)} parameters')
    for param, grad in zip(state.params, grads):
        if grad.shape != param.shape:
            raise InvalidArgument(f'Gradient shape {tuple(grad.shape)} does not match parameter {tuple(param.shape)}')

    for param, grad in zip(state.params, grads):
        param.grad = grad.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step_count += 1
    return state.params
