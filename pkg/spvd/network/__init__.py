from spvd.network.config import (
    PRESETS,
    BlockSpec,
    NetworkConfig,
    preset_config,
    scaled_config,
)
from spvd.network.layers import ParamStore, res_conv_block
from spvd.network.spvd_unet import (
    Network,
    build_network,
    network_forward,
    param_count,
    spv_block_forward,
)
