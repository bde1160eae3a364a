"""Small numpy neural-network stack used for the autoencoder, classifier and regressor roles."""
from .network import Network, sequential
from .roles import (build_ae_1d, build_ae_2d, build_classifier, build_denoiser, build_regressor,
                    classify, denoise, regress_tau, transfer_encoder)
from .train import Phase, TrainConfig, train

__all__ = ["Network", "sequential", "build_ae_1d", "build_ae_2d", "build_classifier",
           "build_denoiser", "build_regressor", "classify", "denoise", "regress_tau",
           "transfer_encoder", "Phase", "TrainConfig", "train"]
