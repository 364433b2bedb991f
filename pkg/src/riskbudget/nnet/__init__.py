"""Minimal reverse-mode differentiation and the recurrent actor/critic networks."""

from . import autodiff
from .autodiff import Tape, Tensor
from .networks import (
    ActorStepper,
    NetParams,
    actor_forward,
    cdf_critic_forward,
    risk_critic_forward,
)
from .optim import AdamW, StepScheduler, opt_step, soft_update


def backward(tape: Tape, loss: Tensor, net: NetParams, leaves: dict):
    """Run the backward pass and return the flat gradient for ``net``."""
    tape.backward(loss)
    return net.gradient(leaves)


__all__ = [
    "autodiff", "Tape", "Tensor", "ActorStepper", "NetParams", "actor_forward", "cdf_critic_forward",
    "risk_critic_forward", "AdamW", "StepScheduler", "opt_step", "soft_update", "backward",
]
