"""Landmark regression with a self-assessed per-landmark validity output,
loss-proportional batch balancing, and Kabsch-based head-pose recovery."""

from .core import (Dataset, EyeScheme, GrayImage, LandmarkSet, Sample,
                   TripletVector, interocular_distance, load_pgm, load_pts,
                   save_pgm, save_pts)
from .losses import LossConfig, loss_gradient, pointwise_loss, total_loss, validation_residual
from .balancer import SampleWeightTable, assign_ranges, draw_batch, update_losses
from .augment import AugmentConfig, augment
from .net import MicroNet, NetConfig, OptimConfig, load_checkpoint, save_checkpoint, sgd_step
from .train import TrainConfig, apply_schedule, train
from .evaluate import EvalRecord, availability, discard_worst, evaluate, nme, pearson
from .pose import (RigidTransform, Template3D, euler_from_rotation, fit_head_pose,
                   kabsch, make_face_template, rotation_distance, rotation_from_euler,
                   translation_distance)
from .synth import SynthConfig, generate, load_dataset, save_dataset

__version__ = "0.1.0"
