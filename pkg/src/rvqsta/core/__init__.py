from .config import (
    ArchConfig,
    ConfigError,
    MaskAxisConfig,
    MaskConfig,
    ModelConfig,
    OptimizerConfig,
    Toggles,
    TrainingConfig,
    check_config,
    config_from_dict,
    desk_config,
    dump_config,
    load_config,
    full_config,
    save_config,
    toy_config,
    validate_config,
    with_overrides,
)
from .io import (
    FormatError,
    load_codebooks,
    load_features,
    load_params,
    load_token_streams,
    load_tokens,
    save_codebooks,
    save_features,
    save_params,
    save_token_streams,
    save_tokens,
)
from .types import (
    Codebook,
    CodebookStack,
    FeatureSequence,
    LatentSequence,
    RvqStaError,
    ShapeError,
    TokenRangeError,
    TokenSequence,
)
