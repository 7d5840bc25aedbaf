"""Variational autoencoders: training loss, marginal-likelihood estimation, sampling.

The generative model per class is a Gaussian-observation VAE: an encoder
mapping x to the mean and log-sigma of a diagonal Gaussian posterior over
latents, a unit-Gaussian latent prior, and a decoder whose output is the
mean of a unit-variance Gaussian over inputs.

Two reconstruction conventions coexist deliberately.  Training uses the
plain summed squared error (``recon_scale="sum_sq"``), while likelihood
estimation always uses the exact unit-variance Gaussian log-density with
all normalizing constants -- classification needs calibrated densities,
the training objective does not.  ``recon_scale="exact"`` switches the
training loss to the exact density scaling, which is what makes the
variational bound on the negative log-likelihood testable.
"""

from __future__ import annotations

import numpy as np

from . import nets
from .exceptions import DomainError, NumericError
from .numerics import LOG_2PI, gaussian_log_density_diag, log_sum_exp
from .rng import Rng

SIGMA_FLOOR = 1e-6
RECON_SUM_SQ = "sum_sq"
RECON_EXACT = "exact"

# decoder passes during likelihood estimation are blocked to roughly this
# many float64 cells to bound peak memory
_DECODE_CELL_BUDGET = 1 << 24


class VaeModel:
    """Encoder/decoder pair; encoder output is [mu, log_sigma] of the posterior."""

    def __init__(self, encoder: nets.DenseNet, decoder: nets.DenseNet):
        latent = decoder.input_dim
        if encoder.output_dim != 2 * latent:
            raise DomainError("encoder must output 2 * latent_dim values")
        if encoder.input_dim != decoder.output_dim:
            raise DomainError("encoder input and decoder output dims differ")
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = latent
        self.input_dim = encoder.input_dim
        self.sigma_clamp_events = 0   # posterior sigmas hit the floor during estimation

    def copy(self) -> "VaeModel":
        dup = VaeModel(self.encoder.copy(), self.decoder.copy())
        dup.sigma_clamp_events = self.sigma_clamp_events
        return dup


def new_vae(input_dim: int, latent_dim: int, hidden, rng: Rng) -> VaeModel:
    """Fresh VAE with mirrored fully-connected hidden stacks."""
    hidden = list(hidden)
    enc = nets.glorot_net([input_dim] + hidden + [2 * latent_dim], rng.derive("encoder"))
    dec = nets.glorot_net([latent_dim] + hidden[::-1] + [input_dim], rng.derive("decoder"))
    return VaeModel(enc, dec)


def net_infer(net: nets.DenseNet, x: np.ndarray) -> np.ndarray:
    """Cache-free forward pass for inference-only paths."""
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    for layer in net.layers:
        a = a @ layer.W + layer.b
        if layer.activation == nets.RELU:
            np.maximum(a, 0.0, out=a)
    return a[0] if single else a


def encode(vae: VaeModel, x: np.ndarray):
    """Posterior parameters (mu, log_sigma) for x; no cache kept."""
    out = net_infer(vae.encoder, x)
    k = vae.latent_dim
    return out[..., :k], out[..., k:]


def elbo_loss_and_grads(vae: VaeModel, batch: np.ndarray, rng: Rng | None = None,
                        eps: np.ndarray | None = None,
                        recon_scale: str = RECON_SUM_SQ):
    """Single-sample reparameterized loss and its parameter gradients.

    loss = mean over the batch of [reconstruction + latent-regularizer] with
    reconstruction = sum of squared errors between x and the decoded mean of
    one sample z = mu + sigma * eps, and the latent regularizer the closed
    form KL of the diagonal posterior against the unit prior:
    -(1/2) sum_j (1 + log sigma_j^2 - mu_j^2 - sigma_j^2).

    Pass `eps` to freeze the noise (finite-difference checks); otherwise one
    standard-normal draw per datapoint is taken from `rng`.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise DomainError("empty batch")
    B = X.shape[0]
    k = vae.latent_dim

    enc_out, enc_cache = nets.net_forward(vae.encoder, X)
    mu = enc_out[:, :k]
    log_sigma = enc_out[:, k:]
    sigma = np.exp(log_sigma)
    if eps is None:
        if rng is None:
            raise DomainError("need rng or frozen eps")
        eps = rng.standard_normal((B, k))
    z = mu + sigma * eps

    dec_out, dec_cache = nets.net_forward(vae.decoder, z)
    diff = dec_out - X
    if recon_scale == RECON_SUM_SQ:
        recon = float(np.sum(diff * diff) / B)
        d_dec_out = 2.0 * diff / B
    elif recon_scale == RECON_EXACT:
        recon = float((0.5 * np.sum(diff * diff) + 0.5 * B * vae.input_dim * LOG_2PI) / B)
        d_dec_out = diff / B
    else:
        raise DomainError(f"unknown recon_scale {recon_scale!r}")

    sig_sq = sigma * sigma
    latent = float(-0.5 * np.sum(1.0 + 2.0 * log_sigma - mu * mu - sig_sq) / B)
    loss = recon + latent
    if not np.isfinite(loss):
        bad = "reconstruction" if not np.isfinite(recon) else "latent-regularizer"
        raise NumericError(f"{bad} term diverged (recon={recon}, latent={latent})")

    dec_grads, g_z = nets.net_backward(vae.decoder, dec_cache, d_dec_out)
    g_mu = g_z + mu / B
    g_log_sigma = g_z * eps * sigma + (sig_sq - 1.0) / B
    enc_grads, _ = nets.net_backward(vae.encoder, enc_cache, np.hstack([g_mu, g_log_sigma]))
    stats = {"recon": recon, "latent": latent}
    return loss, enc_grads, dec_grads, stats


def _clamped_sigma(vae: VaeModel, log_sigma: np.ndarray) -> np.ndarray:
    sigma = np.exp(log_sigma)
    n_low = int(np.count_nonzero(sigma < SIGMA_FLOOR))
    if n_low:
        vae.sigma_clamp_events += n_low
        sigma = np.maximum(sigma, SIGMA_FLOOR)
    return sigma


def _log_weights(vae: VaeModel, x: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                 eps: np.ndarray) -> np.ndarray:
    """Log importance weights log p(x|z) + log p(z) - log q(z|x) for S draws."""
    z = mu + sigma * eps                       # (S, k)
    dec_mean = net_infer(vae.decoder, z)       # (S, d)
    diff = dec_mean - x
    log_px_z = -0.5 * (vae.input_dim * LOG_2PI + np.sum(diff * diff, axis=1))
    log_pz = -0.5 * (vae.latent_dim * LOG_2PI + np.sum(z * z, axis=1))
    log_qz = gaussian_log_density_diag(z, mu, sigma * sigma)
    return log_px_z + log_pz - log_qz


def importance_log_likelihood(vae: VaeModel, x: np.ndarray, S: int, rng: Rng) -> float:
    """Estimate log p(x) as log-mean-exp of S importance weights.

    Latents are proposed from the encoder posterior; all three densities
    keep their full normalizing constants and everything stays in the log
    domain.  Posterior sigmas below 1e-6 are clamped (counted on the model).
    """
    if S < 1:
        raise DomainError("need at least one importance sample")
    x = np.asarray(x, dtype=np.float64)
    mu, log_sigma = encode(vae, x)
    sigma = _clamped_sigma(vae, log_sigma)
    block = max(1, _DECODE_CELL_BUDGET // max(vae.input_dim, 1))
    parts = []
    done = 0
    while done < S:
        take = min(block, S - done)
        eps = rng.standard_normal((take, vae.latent_dim))
        parts.append(_log_weights(vae, x, mu, sigma, eps))
        done += take
    lw = np.concatenate(parts)
    return float(log_sum_exp(lw) - np.log(S))


def importance_log_likelihood_batch(vae: VaeModel, X: np.ndarray, S: int,
                                    rng_for_point) -> np.ndarray:
    """Vectorized estimates for many points; rng_for_point(i) names each
    point's private noise stream, so results are independent of how the
    points and samples are blocked."""
    X = np.asarray(X, dtype=np.float64)
    N = len(X)
    mu, log_sigma = encode(vae, X)
    sigma = _clamped_sigma(vae, log_sigma)
    out = np.empty(N)
    s_block = max(1, _DECODE_CELL_BUDGET // max(vae.input_dim, 1))
    group = max(1, _DECODE_CELL_BUDGET // max(min(S, s_block) * vae.input_dim, 1))
    for start in range(0, N, group):
        stop = min(start + group, N)
        g = stop - start
        rngs = [rng_for_point(i) for i in range(start, stop)]
        lw = np.empty((g, S))
        done = 0
        while done < S:   # sequential blocks drain each stream like one big draw
            take = min(s_block, S - done)
            eps = np.stack([r.standard_normal((take, vae.latent_dim)) for r in rngs])
            z = mu[start:stop, None, :] + sigma[start:stop, None, :] * eps
            dec_mean = net_infer(vae.decoder, z.reshape(g * take, -1)).reshape(g, take, -1)
            diff = dec_mean - X[start:stop, None, :]
            log_px_z = -0.5 * (vae.input_dim * LOG_2PI + np.sum(diff * diff, axis=2))
            log_pz = -0.5 * (vae.latent_dim * LOG_2PI + np.sum(z * z, axis=2))
            log_qz = gaussian_log_density_diag(z, mu[start:stop, None, :],
                                               (sigma * sigma)[start:stop, None, :])
            lw[:, done:done + take] = log_px_z + log_pz - log_qz
            done += take
        out[start:stop] = log_sum_exp(lw, axis=1) - np.log(S)
    return out


def sample(vae: VaeModel, rng: Rng) -> np.ndarray:
    """One draw: decode a prior latent and clamp the mean into [0, 1]."""
    return sample_batch(vae, 1, rng)[0]


def sample_batch(vae: VaeModel, n: int, rng: Rng) -> np.ndarray:
    z = rng.standard_normal((n, vae.latent_dim))
    return np.clip(net_infer(vae.decoder, z), 0.0, 1.0)
