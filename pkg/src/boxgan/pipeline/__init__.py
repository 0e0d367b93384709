"""Training, augmentation, evaluation and diagnostics built on the core modules."""
from .checkpoint import (CheckpointError, file_digest, infer_critic_spec, infer_detector_spec, infer_generator_spec,
                         load_critic, load_detector, load_generator, load_state, parameter_digest, save_checkpoint)
from .config import ConfigError, TrainConfig
from .metrics import COLUMNS, HEADER, MetricsError, MetricsLog, MetricsRow
from .requests import PRESETS, BoxSampler, SceneSampler, make_sampler
from .training import (DetectorReport, DivergenceError, PositionLoss, TrainResult, evaluate_detector,
                       instance_noise_sigma, learning_rate, position_loss, pretrain_detector, score_gates,
                       split_indices, train_step1, train_step2)
from .augment import augment
from .diagnose import BALANCED, CRITIC_DOMINANT, WEAK_CRITIC, BalanceThresholds, DiagnosisError, diagnose_balance
from .evaluate import (ConditioningReport, ConditioningRow, evaluate_conditioning, generate_for,
                       random_box_iou_baseline)
