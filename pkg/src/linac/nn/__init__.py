from .layers import (BlockLinear, ChannelAffine, Conv2d, Dense, Flatten, GlobalAvgPool, Layer,
                     ReLU, ShapeError, Swish)
from .losses import margin, soft_cross_entropy, softmax, softmax_cross_entropy, targeted_margin
from .network import NonFiniteError, Sequential, cast_params, tree_leaves, tree_map
from .optim import (AdamState, EmaState, MomentumState, adam_init, adam_step, cosine_lr, ema_init,
                    ema_update, momentum_init, nesterov_step, step_lr)
