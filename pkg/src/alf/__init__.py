"""ALF: autoencoder-based low-rank filter sharing for CNN compression."""
from .autograd import Tape, grad_check
from .block import ALFBlock, alf_forward, decode_filters, encode_filters, reconstruction_loss
from .cost import CostReport, code_max, gain_ratio, layer_cost
from .deploy import DeployedModel, compact, deploy, export, import_model
from .factorizer import FactorizerState, compute_importances, step_schedule, update_mask
from .kernels import BACKEND
from .tensor import ConvGeometry, Tensor4, activation, conv2d_fast, conv2d_naive, pointwise_conv

__version__ = "0.1.0"
