"""Trainable toy network, hand-written backpropagation and training loop."""

from .features import OBS_DIM, Batch, DescriptorNoise, make_batch, observation_features
from .model import Discriminator, ModelConfig, Outputs, SddrModel, discriminator_loss_and_grads, loss_and_grads
from .nn import Adam, Mlp
from .train import (
    VARIANTS,
    HistoryRow,
    TrainConfig,
    TrainResult,
    ModelEvaluation,
    evaluate_model,
    load_checkpoint,
    oracle_predictions,
    predict,
    read_history,
    save_checkpoint,
    train,
    variant_config,
    write_history,
)
