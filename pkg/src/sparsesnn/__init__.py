"""Software model of a sparse spiking-network accelerator."""

from .dataflow import MemoryConfig, PeOrg, SimReport, ktbc_schedule, parallelism_latency
from .engine import GateStats, block_conv, dense_conv_oracle, encode_layer_conv, layer_forward
from .model import miout, network_forward, op_count
from .netspec import LayerSpec, NetworkSpec, expand, mixed_timestep_plan, reference_network
from .neuron import LifParams, lif_step
from .tensor import MultibitTensor, SpikeTensor, Tile
from .weights import LayerWeights, prune_magnitude, quantize8, storage_bits

__version__ = "0.1.0"
