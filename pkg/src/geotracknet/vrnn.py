"""Variational recurrent network over four-hot sequences.

Generative structure per timestep::

    h_1 = 0,   h_t = LSTM(x_{t-1}, z_{t-1}, h_{t-1})
    prior      p(z_t | h_t)       diagonal Gaussian, one tanh hidden layer
    posterior  q(z_t | x_t, h_t)  diagonal Gaussian, one tanh hidden layer
    emission   p(x_t | z_t, h_t)  independent Bernoulli over the D entries

The per-timestep bound is ``E_q[log p(x_t|z_t,h_t)] - KL(q || p)``; the
expectation is a Monte Carlo mean over S reparameterized samples and the KL
term is analytic.  The first sample feeds the recurrence.
"""
from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import compute as C
from .compute import Tape, Tensor
from .container import PayloadWriter, pack, read_array, unpack
from .errors import (DomainError, NonFiniteGradient, NonFiniteValue, ShapeError,
                     SpecMismatch, TrainingAborted)
from .fourhot import EncodedTrack, FourHotSpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"GTNMODEL"
SIGMA_FLOOR = 1e-6
PROB_CLAMP = 1e-6
LSTM_INIT = 0.08


@dataclass
class GaussianParams:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class ElboBreakdown:
    recon: np.ndarray
    kl: np.ndarray

    @property
    def elbo(self) -> np.ndarray:
        return self.recon - self.kl

    @property
    def total(self) -> float:
        return float(np.sum(self.elbo))


@dataclass
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 5
    samples: int = 1
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.samples < 1 or self.batch_size < 1:
            raise ValueError("samples and batch_size must be >= 1")


class VrnnModel:
    """Parameter container; ``params`` maps names to trainable Tensors."""

    def __init__(self, spec: FourHotSpec, hidden: int = 100, dense: int = 100, seed: int = 0):
        self.spec = spec
        self.H = self.Z = int(hidden)  # latent size tied to the hidden size
        self.dense = int(dense)
        self.D = spec.dim
        self.seed = seed
        self.params = {}
        rng = np.random.default_rng(seed)
        H, Z, D, M = self.H, self.Z, self.D, self.dense

        def lstm(name, shape):
            self.params[name] = Tensor(rng.uniform(-LSTM_INIT, LSTM_INIT, shape), True, name)

        def lin(name, fan_in, fan_out):
            self.params[name + ".W"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out)),
                                              True, name + ".W")
            self.params[name + ".b"] = Tensor(np.zeros(fan_out), True, name + ".b")

        lstm("lstm.W", (D + Z + H, 4 * H))
        lstm("lstm.b", (4 * H,))
        lin("prior.hidden", H, M)
        lin("prior.mu", M, Z)
        lin("prior.sigma", M, Z)
        lin("post.hidden", D + H, M)
        lin("post.mu", M, Z)
        lin("post.sigma", M, Z)
        lin("emit.hidden", Z + H, M)
        lin("emit.logits", M, D)

    @property
    def param_list(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name]

    def copy(self):
        return copy.deepcopy(self)

    def snapshot(self):
        return {k: p.value.copy() for k, p in self.params.items()}

    def restore(self, snap):
        for k, v in snap.items():
            self.params[k].value = v.copy()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, p in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
        return h.hexdigest()


# ------------------------------------------------------------------- blocks

def lstm_step(model: VrnnModel, x_prev, z_prev, state):
    """One LSTM update on ``concat(x_prev, z_prev)``; state is ``(h, c)``."""
    h, c = state
    H = model.H
    W, b = model["lstm.W"], model["lstm.b"]
    inp = C.concat([x_prev, z_prev, h], axis=-1)
    if inp.shape[-1] != W.shape[0]:
        raise ShapeError(f"lstm input width {inp.shape[-1]} != {W.shape[0]}")
    gates = inp @ W + b
    i = C.sigmoid(gates[..., 0:H])
    f = C.sigmoid(gates[..., H:2 * H])
    g = C.tanh(gates[..., 2 * H:3 * H])
    o = C.sigmoid(gates[..., 3 * H:4 * H])
    c = f * c + i * g
    h = o * C.tanh(c)
    return h, c


def _gaussian_head(model, prefix, inp):
    hid = C.tanh(inp @ model[prefix + ".hidden.W"] + model[prefix + ".hidden.b"])
    mu = hid @ model[prefix + ".mu.W"] + model[prefix + ".mu.b"]
    sigma = C.softplus(hid @ model[prefix + ".sigma.W"] + model[prefix + ".sigma.b"]) + SIGMA_FLOOR
    return mu, sigma


def prior_net(model, h):
    return _gaussian_head(model, "prior", h)


def posterior_net(model, x, h):
    return _gaussian_head(model, "post", C.concat([x, h], axis=-1))


def emission_net(model, z, h):
    """Bernoulli probabilities, clamped to [1e-6, 1 - 1e-6]."""
    hid = C.tanh(C.concat([z, h], axis=-1) @ model["emit.hidden.W"] + model["emit.hidden.b"])
    logits = hid @ model["emit.logits.W"] + model["emit.logits.b"]
    return C.clip(C.sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)


def kl_terms(mu_q, sigma_q, mu_p, sigma_p):
    """Per-row KL(q || p) between diagonal Gaussians, summed over the last axis."""
    d = mu_q - mu_p
    ratio = C.div(sigma_q * sigma_q + d * d, sigma_p * sigma_p * 2.0)
    return C.sum_(C.log(sigma_p) - C.log(sigma_q) + ratio - 0.5, axis=-1)


def kl_diag_gaussians(q: GaussianParams, p: GaussianParams) -> float:
    mq, sq = np.asarray(q.mu, float), np.asarray(q.sigma, float)
    mp, sp = np.asarray(p.mu, float), np.asarray(p.sigma, float)
    if mq.shape != mp.shape or sq.shape != sp.shape or mq.shape != sq.shape:
        raise ShapeError("kl_diag_gaussians: length mismatch")
    if np.any(sq <= 0) or np.any(sp <= 0):
        raise DomainError("standard deviations must be positive")
    return float(kl_terms(Tensor(mq), Tensor(sq), Tensor(mp), Tensor(sp)).value)


# ------------------------------------------------------------------ forward

def draw_noise(track_len: int, samples: int, latent: int, seed):
    """Standard-normal reparameterization noise, shape (T, S, Z)."""
    return np.random.default_rng(seed).standard_normal((track_len, samples, latent))


def _check_spec(model, tracks):
    for tr in tracks:
        if tr.spec != model.spec:
            raise SpecMismatch(f"track {tr.track_id} encoded with a different spec than the model")


def forward(model: VrnnModel, tracks, noises, samples: int = 1):
    """Run the model over a batch of tracks.

    ``noises[i]`` has shape (T_i, S, Z).  Returns ``(total, recon, kl, mask)``
    where ``total`` is a scalar Tensor (sum over tracks and valid timesteps of
    the per-step bound) and ``recon``, ``kl``, ``mask`` are (T_max, B) arrays.
    """
    _check_spec(model, tracks)
    B = len(tracks)
    S = samples
    lens = np.array([len(tr) for tr in tracks])
    T = int(lens.max())
    D, Z, H = model.D, model.Z, model.H
    mask = (np.arange(T)[:, None] < lens[None, :]).astype(np.float64)

    xs = np.zeros((T, B, D))
    for b, tr in enumerate(tracks):
        act = tr.active()
        rows = np.arange(len(tr))[:, None]
        xs[rows, b, act] = 1.0
    eta = np.zeros((T, S, B, Z))
    for b, (tr, nz) in enumerate(zip(tracks, noises)):
        nz = np.asarray(nz)
        if nz.shape != (len(tr), S, Z):
            raise ShapeError(f"noise for track {b} has shape {nz.shape}, need {(len(tr), S, Z)}")
        eta[:len(tr), :, b, :] = nz

    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    x_prev = Tensor(np.zeros((B, D)))
    z_prev = Tensor(np.zeros((B, Z)))
    recon_out = np.zeros((T, B))
    kl_out = np.zeros((T, B))
    total = None
    for t in range(T):
        if t > 0:
            h, c = lstm_step(model, x_prev, z_prev, (h, c))
        x_t = Tensor(xs[t])
        mu_p, sig_p = prior_net(model, h)
        mu_q, sig_q = posterior_net(model, x_t, h)
        if S == 1:
            z = mu_q + sig_q * eta[t, 0]
            hz = h
        else:
            z = C.tile_rows(mu_q, S) + C.tile_rows(sig_q, S) * eta[t].reshape(S * B, Z)
            hz = C.tile_rows(h, S)
        theta = emission_net(model, z, hz)
        # log p(x|theta) = log((1 - x) + (2x - 1) * theta) for binary x
        x_rep = np.tile(xs[t], (S, 1))
        ll = C.sum_(C.log((2.0 * x_rep - 1.0) * theta + (1.0 - x_rep)), axis=-1)
        if S == 1:
            recon = ll
        else:
            recon = C.sum_(C.reshape(ll, (S, B)), axis=0) * (1.0 / S)
        kl = kl_terms(mu_q, sig_q, mu_p, sig_p)
        step = C.sum_((recon - kl) * mask[t])
        if not np.isfinite(step.value):
            raise NonFiniteValue(f"non-finite bound at timestep {t}", timestep=t)
        recon_out[t] = recon.value
        kl_out[t] = kl.value
        total = step if total is None else total + step
        x_prev = x_t
        z_prev = z if S == 1 else z[0:B]
    return total, recon_out * mask, kl_out * mask, mask


def elbo(model: VrnnModel, track: EncodedTrack, samples: int = 1, seed=0, noise=None) -> ElboBreakdown:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if noise is None:
        noise = draw_noise(len(track), samples, model.Z, seed)
    _, recon, kl, _ = forward(model, [track], [noise], samples)
    return ElboBreakdown(recon[:, 0].copy(), kl[:, 0].copy())


def score_track(model: VrnnModel, track: EncodedTrack, samples: int = 16, seed=0) -> np.ndarray:
    """Per-message scores: the per-timestep bound with ``samples`` draws."""
    return elbo(model, track, samples, seed).elbo


def score_tracks(model, tracks, samples=16, seed=0, threads=1):
    """Score many tracks; track ``i`` uses noise seed ``(seed, i)``."""
    jobs = [(tr, (seed, i)) for i, tr in enumerate(tracks)]
    if threads and threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: score_track(model, j[0], samples, j[1]), jobs))
    return [score_track(model, tr, samples, s) for tr, s in jobs]


def batch_loss(model, tracks, noises, samples=1):
    """Negative mean (over tracks) total bound, recorded on a fresh tape."""
    with Tape() as tape:
        total, _, _, _ = forward(model, tracks, noises, samples)
        loss = total * (-1.0 / len(tracks))
    return tape, loss


def mean_elbo(model, tracks, samples=1, seed=0, batch_size=64) -> float:
    """Mean over tracks of the total bound; track ``i`` uses noise seed ``(seed, i)``."""
    totals = []
    for start in range(0, len(tracks), batch_size):
        chunk = tracks[start:start + batch_size]
        noises = [draw_noise(len(tr), samples, model.Z, (seed, start + j)) for j, tr in enumerate(chunk)]
        _, recon, kl, _ = forward(model, chunk, noises, samples)
        totals.extend((recon - kl).sum(axis=0))
    return float(np.mean(totals))


# ----------------------------------------------------------------- training

def train(model: VrnnModel, train_set, val_set, cfg: TrainConfig):
    """Adam on the negative mean bound with early stopping.

    Returns ``(model, history)``; the model holds the parameters of the
    epoch with the best validation bound.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    _check_spec(model, list(train_set) + list(val_set))
    params = model.param_list
    state = C.AdamState.for_params(params, lr=cfg.lr)
    val_seed = cfg.seed + 1_000_003

    def validate(when):
        try:
            return mean_elbo(model, val_set, seed=val_seed)
        except NonFiniteValue as exc:
            raise TrainingAborted(f"validation bound not finite {when}: {exc}") from exc

    best = validate("before training")
    best_snap = model.snapshot()
    history = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_set))
        losses, n_ok, n_batches = [], 0, 0
        for start in range(0, len(order), cfg.batch_size):
            n_batches += 1
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            noises = [rng.standard_normal((len(tr), cfg.samples, model.Z)) for tr in batch]
            try:
                tape, loss = batch_loss(model, batch, noises, cfg.samples)
            except NonFiniteValue as exc:
                log.warning("epoch %d: skipping batch (%s)", epoch, exc)
                state.skipped += 1
                continue
            grads = C.backward(tape, loss, params)
            grads, _ = C.clip_by_global_norm(grads, cfg.clip_norm)
            try:
                C.adam_step(params, grads, state)
            except NonFiniteGradient as exc:
                log.warning("epoch %d: %s", epoch, exc)
                continue
            n_ok += 1
            losses.append(-float(loss.value))
        if n_ok == 0:
            raise TrainingAborted(f"epoch {epoch}: all {n_batches} batches non-finite "
                                  f"(skipped total {state.skipped})")
        val = validate(f"after epoch {epoch}")
        history.append({"epoch": epoch, "train_elbo": float(np.mean(losses)),
                        "val_elbo": val, "skipped": state.skipped})
        log.info("epoch %d train %.3f val %.3f", epoch, history[-1]["train_elbo"], val)
        if val > best:
            best, best_snap, stale = val, model.snapshot(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best_snap)
    return model, history


# -------------------------------------------------------------- persistence

def model_to_bytes(model: VrnnModel, seed=None, history=None) -> bytes:
    writer = PayloadWriter()
    tensors = []
    for name, p in model.params.items():
        entry = writer.add(p.value)
        entry["name"] = name
        tensors.append(entry)
    summary = None
    if history:
        summary = {"epochs": len(history),
                   "best_val_elbo": max(h["val_elbo"] for h in history),
                   "last_train_elbo": history[-1]["train_elbo"]}
    header = {"format_version": FORMAT_VERSION, "kind": "vrnn", "spec": model.spec.to_dict(),
              "H": model.H, "Z": model.Z, "D": model.D, "dense": model.dense,
              "tensors": tensors, "training_seed": model.seed if seed is None else seed,
              "history_summary": summary}
    return pack(MAGIC, header, writer.getvalue())


def model_from_bytes(blob: bytes) -> VrnnModel:
    header, payload = unpack(blob, MAGIC)
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    spec = FourHotSpec.from_dict(header["spec"])
    if spec.dim != header["D"]:
        raise SpecMismatch(f"header D={header['D']} but spec gives {spec.dim}")
    model = VrnnModel.__new__(VrnnModel)
    model.spec, model.H, model.Z = spec, header["H"], header["Z"]
    model.D, model.dense, model.seed = header["D"], header["dense"], header["training_seed"]
    model.params = {}
    for entry in header["tensors"]:
        model.params[entry["name"]] = Tensor(read_array(payload, entry), True, entry["name"])
    return model


def save_model(model, path, history=None):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model, history=history))


def load_model(path) -> VrnnModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
