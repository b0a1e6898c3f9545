from .gradcheck import GradCheckResult, check_config_stages, gradient_check, relative_error, toy_batch
from .loop import (
    DISTILLED,
    GROUND_TRUTH,
    CorpusError,
    StepReport,
    TrainState,
    Utterance,
    as_corpus,
    backward_and_step,
    check_corpus,
    init_state,
    load_checkpoint,
    rng_stream,
    sample_batch,
    save_checkpoint,
    train,
)
from .model import ForwardResult, backward, forward, init_params
from .optim import AdamState, NonFiniteError, adam_step, cosine_lr
