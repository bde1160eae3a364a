"""Network roles: autoencoders, transferred encoders, classifier/regressor heads, denoiser.

Default widths (conv 16 -> 32 channels, kernel 3, latent 128, heads of 256
and 64 units) are choices of this package; every one is a keyword argument.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .layers import (Conv1D, Conv2D, Dense, Flatten, Linear, MaxPool1D, MaxPool2D, ReLU, Reshape,
                     Sigmoid, Upsample1D, Upsample2D)
from .network import Network

DESK_LATENT = 128
PAPER_LATENT = 1024


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _check(latent, channels, kernel):
    if latent < 1:
        raise ConfigError(f"latent must be >= 1, got {latent}")
    if len(channels) != 2 or min(channels) < 1:
        raise ConfigError("channels must be two positive widths")
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError("kernel must be a positive odd integer")


def build_ae_1d(latent=DESK_LATENT, channels=(16, 32), kernel=3, seed=0) -> Network:
    """1-D convolutional autoencoder on the 36-vector viewed as (36, 1).

    Two conv+pool stages take 36 -> 18 -> 9 positions; the decoder mirrors
    them with nearest-neighbour upsampling. The encoder is the first
    ``net.encoder_end`` layers and ends in a linear latent layer.
    """
    _check(latent, channels, kernel)
    c1, c2 = channels
    s = _seeds(seed, 5)
    enc = [Reshape((36, 1)), Conv1D(1, c1, kernel, rng=s[0]), ReLU(), MaxPool1D(2),
           Conv1D(c1, c2, kernel, rng=s[1]), ReLU(), MaxPool1D(2), Flatten(),
           Dense(9 * c2, latent, rng=s[2])]
    dec = [Dense(latent, 9 * c2, rng=s[3]), ReLU(), Reshape((9, c2)), Upsample1D(2),
           Conv1D(c2, c1, kernel, rng=s[4]), ReLU(), Upsample1D(2),
           Conv1D(c1, 1, kernel, rng=s[4] + 1), Linear(), Flatten()]
    return Network(enc + dec, (36,), {"role": "ae1d", "latent": latent, "seed": seed},
                   encoder_end=len(enc))


def build_ae_2d(latent=DESK_LATENT, channels=(16, 32), kernel=3, seed=0) -> Network:
    """2-D convolutional autoencoder on the 6x6 row-major view of the vector.

    A single 2x2 pool (6x6 -> 3x3); a second would leave a 1x1 map.
    """
    _check(latent, channels, kernel)
    c1, c2 = channels
    s = _seeds(seed, 5)
    enc = [Reshape((6, 6, 1)), Conv2D(1, c1, kernel, rng=s[0]), ReLU(), MaxPool2D(2),
           Conv2D(c1, c2, kernel, rng=s[1]), ReLU(), Flatten(), Dense(9 * c2, latent, rng=s[2])]
    dec = [Dense(latent, 9 * c2, rng=s[3]), ReLU(), Reshape((3, 3, c2)),
           Conv2D(c2, c1, kernel, rng=s[4]), ReLU(), Upsample2D(2),
           Conv2D(c1, 1, kernel, rng=s[4] + 1), Linear(), Flatten()]
    return Network(enc + dec, (36,), {"role": "ae2d", "latent": latent, "seed": seed},
                   encoder_end=len(enc))


def encoder_layers(ae: Network, trainable=False) -> list:
    if ae.encoder_end is None:
        raise ConfigError("network has no encoder section")
    layers = ae.clone().layers[:ae.encoder_end]
    for layer in layers:
        layer.trainable = trainable
    return layers


def transfer_encoder(ae: Network) -> Network:
    """Frozen copy of the encoder prefix; the source network is untouched."""
    layers = encoder_layers(ae)
    return Network(layers, ae.input_shape, {"role": "encoder", "source": ae.meta.get("role")},
                   encoder_end=len(layers))


def _attach(encoder: Network, head: list, meta: dict) -> Network:
    layers = [layer for layer in encoder.clone().layers]
    n_enc = encoder.encoder_end if encoder.encoder_end is not None else len(layers)
    return Network(layers + head, encoder.input_shape, meta, encoder_end=n_enc)


def _latent(encoder: Network) -> int:
    return int(np.prod(encoder.output_shape))


def build_classifier(encoder: Network, hidden=64, seed=0) -> Network:
    """Frozen encoder followed by dense(hidden, relu) -> dense(1) -> sigmoid."""
    s = _seeds(seed, 2)
    head = [Dense(_latent(encoder), hidden, rng=s[0]), ReLU(), Dense(hidden, 1, rng=s[1]), Sigmoid()]
    return _attach(encoder, head, {"role": "classifier", "seed": seed})


def classify(net: Network, X) -> np.ndarray:
    """Probability of the positive class per row, shape (n,)."""
    return net.predict(np.asarray(X, dtype=float)).reshape(-1)


def build_regressor(encoder: Network, hidden=256, n_out=16, seed=0) -> Network:
    """Frozen encoder followed by dense(hidden, relu) -> dense(n_out, linear)."""
    s = _seeds(seed, 2)
    head = [Dense(_latent(encoder), hidden, rng=s[0]), ReLU(), Dense(hidden, n_out, rng=s[1])]
    return _attach(encoder, head, {"role": "regressor", "seed": seed})


def regress_tau(net: Network, X) -> np.ndarray:
    return net.predict(np.asarray(X, dtype=float))


def build_denoiser(ae: Network) -> Network:
    """Fully trainable clone of an autoencoder, to be fit on noisy -> clean pairs."""
    net = ae.clone()
    for layer in net.layers:
        layer.trainable = True
    net.meta = {**ae.meta, "role": "denoiser"}
    return net


def denoise(net: Network, X_noisy) -> np.ndarray:
    return np.clip(net.predict(np.asarray(X_noisy, dtype=float)), 0.0, 1.0)
