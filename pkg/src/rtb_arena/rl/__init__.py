from .mlp import Adam, Mlp, mlp_gradient_check
from .buffer import ReplayBuffer
from .updates import ActorCriticNets, ValueNets, polyak_update, q_update, twin_critic_update

__all__ = [
    "Adam", "Mlp", "mlp_gradient_check", "ReplayBuffer",
    "ActorCriticNets", "ValueNets", "polyak_update", "q_update", "twin_critic_update",
]
