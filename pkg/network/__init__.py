"""
The differentiable core: network, surface codes and optimiser
"""
from .optim import AdamState, adam_step
from .sdf_net import DTYPE, ImplicitNet, LatentPartitionSDF, SurfaceCodes, blend_codes, check_finite, input_gradient
