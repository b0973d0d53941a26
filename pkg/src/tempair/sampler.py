"""Stochastic-gradient Langevin sampling with tempering.

Two tempering modes are supported:

``"posterior"``
    targets ``exp(-U(theta) / T)``: the whole energy, prior included, is
    divided by ``T``.
``"likelihood"``
    targets ``p(y | theta)^(1/T) p(theta)``.  The step size is
    re-parameterised as ``gamma = T * alpha`` so the likelihood drift is
    independent of ``T``, while prior drift and injected noise grow with it.

The likelihood term is scaled by ``dataset_scale`` (``N``): the number of
datapoints the sampler believes it has, ``B * n`` when every source is
augmented ``B`` times.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from . import augment as _augment
from .exceptions import ConfigError, EmptyChainError, InvalidArgumentError
from .net.network import NetworkSpec, forward, init_params, loss_and_grad, per_example_nll

MODES = ("posterior", "likelihood")
SCHEDULES = ("cyclical", "constant")
PRECOND_DECAY = 0.99
PRECOND_EPS = 1e-8


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic Gaussian prior ``N(0, sigma_prior_sq I)``."""

    sigma_prior_sq: float = 1.0

    def __post_init__(self):
        if not (self.sigma_prior_sq > 0 and math.isfinite(self.sigma_prior_sq)):
            raise InvalidArgumentError(f"sigma_prior_sq must be > 0, got {self.sigma_prior_sq!r}")

    def energy(self, params):
        """``-log p(theta)`` including the ``p/2 * log(2 pi sigma^2)`` constant."""
        params = np.asarray(params)
        p = params.shape[-1]
        return 0.5 * np.sum(params**2, axis=-1) / self.sigma_prior_sq + 0.5 * p * np.log(
            2 * np.pi * self.sigma_prior_sq
        )

    def grad(self, params):
        return np.asarray(params) / self.sigma_prior_sq


class NetworkLikelihood:
    """Adapts a :class:`NetworkSpec` to the sampler's model interface."""

    batched = False

    def __init__(self, spec):
        self.spec = spec
        self.n_params = spec.n_params

    def loss_and_grad(self, params, X, y):
        return loss_and_grad(self.spec, params, X, y)

    def nll(self, params, X, y):
        return per_example_nll(self.spec, params, X, y)

    def layer_groups(self):
        return self.spec.layer_groups()

    def initial_params(self, rng):
        return init_params(self.spec, rng)

    def predict(self, params, X):
        return forward(self.spec, params, X)


class GaussianMeanLikelihood:
    """``y_i ~ N(mu, sigma_sq)`` with the single parameter ``mu``.

    Accepts parameter arrays of shape ``(1,)`` or ``(K, 1)`` (``K``
    independent chains evaluated at once).
    """

    batched = True
    n_params = 1

    def __init__(self, sigma_sq):
        if not sigma_sq > 0:
            raise InvalidArgumentError("sigma_sq must be > 0")
        self.sigma_sq = float(sigma_sq)

    def _resid(self, params, y):
        mu = np.asarray(params, dtype=float)[..., 0]
        return mu[..., None] - np.asarray(y, dtype=float)

    def nll(self, params, X, y):
        r = self._resid(params, y)
        return 0.5 * r**2 / self.sigma_sq + 0.5 * np.log(2 * np.pi * self.sigma_sq)

    def loss_and_grad(self, params, X, y):
        r = self._resid(params, y)
        nll = 0.5 * np.mean(r**2, axis=-1) / self.sigma_sq + 0.5 * np.log(2 * np.pi * self.sigma_sq)
        return nll, (np.mean(r, axis=-1) / self.sigma_sq)[..., None]

    def layer_groups(self):
        return [("mean", 0, 1)]

    def initial_params(self, rng):
        return np.zeros(1)

    def predict(self, params, X):
        return np.full(len(X), float(np.asarray(params)[0]))


def as_model(model):
    return NetworkLikelihood(model) if isinstance(model, NetworkSpec) else model


@dataclass(frozen=True)
class SgMcmcConfig:
    alpha0: float
    cycle_len: int
    burn_in: int
    epochs: int
    batch_size: int
    temperature: float = 1.0
    mode: str = "likelihood"
    dataset_scale: int | None = None
    precondition: bool = False
    seed: int = 0
    schedule: str = "cyclical"
    couple_step_to_temperature: bool | None = None

    def validate(self):
        problems = []
        if not (self.alpha0 > 0 and math.isfinite(self.alpha0)):
            problems.append("alpha0 must be > 0")
        for name in ("cycle_len", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        if self.burn_in < 0:
            problems.append("burn_in must be >= 0")
        if self.epochs < self.burn_in:
            problems.append("epochs must be >= burn_in")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            problems.append("temperature must be > 0")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if self.schedule not in SCHEDULES:
            problems.append(f"schedule must be one of {SCHEDULES}")
        if self.dataset_scale is not None and self.dataset_scale < 1:
            problems.append("dataset_scale must be >= 1")
        if problems:
            raise ConfigError("invalid sampler config: " + "; ".join(problems))
        return self

    @property
    def coupled(self):
        if self.couple_step_to_temperature is None:
            return self.mode == "likelihood"
        return bool(self.couple_step_to_temperature)


@dataclass
class Chain:
    samples: list
    sample_epochs: list
    trace: dict = field(default_factory=dict)
    diverged: bool = False
    config: SgMcmcConfig | None = None

    def __len__(self):
        return len(self.samples)

    def as_array(self):
        return np.array(self.samples).reshape(len(self.samples), -1)


def cyclical_step_size(t, config):
    """Cosine schedule restarting every ``cycle_len`` epochs:
    ``alpha0 / 2 * (cos(pi * (t mod C) / C) + 1)``."""
    if config.schedule == "constant":
        return float(config.alpha0)
    C = config.cycle_len
    return 0.5 * config.alpha0 * (math.cos(math.pi * (t % C) / C) + 1.0)


def step_size(t, config):
    """Step actually applied at epoch ``t`` (``T * alpha`` when coupled)."""
    alpha = cyclical_step_size(t, config)
    return config.temperature * alpha if config.coupled else alpha


def combine_gradients(lik_grad_mean, prior_grad, N, T, mode):
    """Energy gradient from the mean per-example likelihood gradient."""
    if mode == "likelihood":
        return (N / T) * lik_grad_mean + prior_grad
    if mode == "posterior":
        return (N * lik_grad_mean + prior_grad) / T
    raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")


def minibatch_grad(params, model, X, y, batch_indices, prior, N, T, mode):
    """Stochastic estimate of the (tempered) energy gradient on a minibatch."""
    idx = np.asarray(batch_indices)
    if idx.size == 0:
        raise InvalidArgumentError("minibatch must be nonempty")
    if N < idx.size:
        raise InvalidArgumentError(f"dataset scale N={N} smaller than the batch ({idx.size})")
    if not T > 0:
        raise InvalidArgumentError("T must be > 0")
    model = as_model(model)
    Xb = None if X is None else np.asarray(X)[idx]
    _, g = model.loss_and_grad(params, Xb, np.asarray(y)[idx])
    return combine_gradients(g, prior.grad(params), N, T, mode)


def posterior_energy(params, model, X, y, prior):
    """Full-data energy ``-sum log p(y_i | theta) - log p(theta)`` including
    normalising constants of each factor."""
    y = np.asarray(y)
    if y.size == 0:
        raise InvalidArgumentError("posterior_energy needs a nonempty dataset")
    model = as_model(model)
    mean_nll, _ = model.loss_and_grad(params, X, y)
    return len(y) * mean_nll + prior.energy(params)


def sgld_step(params, grad, step, noise_scale, rng):
    """``theta - step/2 * grad + sqrt(step) * noise_scale * xi``."""
    if step < 0:
        raise InvalidArgumentError(f"step size must be >= 0, got {step}")
    xi = rng.standard_normal(np.shape(params))
    return params - 0.5 * step * grad + math.sqrt(step) * noise_scale * xi


def init_precondition_state(layout, value=None):
    return None if value is None else np.full(len(layout), float(value))


def precondition(grad, state, layout):
    """Layer-wise RMS preconditioning.

    Each layer keeps ``v <- 0.99 v + 0.01 mean(grad^2)``; its drift is
    divided by ``M = sqrt(v) + 1e-8`` and its noise by ``sqrt(M)``.  A
    ``None`` state starts from the first gradient's mean square.
    """
    grad = np.asarray(grad, dtype=float)
    if not layout or layout[-1][2] != grad.shape[-1]:
        raise InvalidArgumentError("preconditioner layout does not cover the gradient")
    sq = np.array([np.mean(grad[..., a:b] ** 2) for _, a, b in layout])
    if state is None:
        v = sq
    else:
        if len(state) != len(layout):
            raise InvalidArgumentError("preconditioner state does not match layout")
        v = PRECOND_DECAY * np.asarray(state) + (1 - PRECOND_DECAY) * sq
    m = np.sqrt(v) + PRECOND_EPS
    drift_scale = np.empty(grad.shape[-1])
    for (_, a, b), mi in zip(layout, m):
        drift_scale[a:b] = 1.0 / mi
    return grad * drift_scale, np.sqrt(drift_scale), v


def _batches(n, batch_size, rng):
    if batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _is_sample_epoch(e, config):
    return (e + 1) % config.cycle_len == 0 and e + 1 > config.burn_in


def resolve_scale(config, n, bank):
    N = config.dataset_scale if config.dataset_scale is not None else n * (bank.B if bank is not None else 1)
    if N < n:
        raise ConfigError(f"dataset_scale {N} is smaller than the dataset ({n} points)")
    if bank is not None and config.dataset_scale is not None and N != n * bank.B:
        # allowed (the n-normalised update), but worth being explicit about
        pass
    return N


@np.errstate(over="ignore", invalid="ignore")
def run_chain(model, X, y, prior, config, bank=None, init=None):
    """Run one SG-MCMC chain.

    Every epoch visits the data once in shuffled minibatches (one batch when
    ``batch_size >= n``).  With a ``bank``, epoch ``e`` trains on bank entry
    ``e mod B``.  A sample is kept at the end of every cycle that finishes
    after burn-in.  Non-finite energies stop the chain and set ``diverged``.
    """
    config.validate()
    model = as_model(model)
    y = np.asarray(y)
    n = len(y)
    if n == 0:
        raise ConfigError("empty dataset")
    N = resolve_scale(config, n, bank)
    T = config.temperature
    rng = np.random.default_rng(config.seed)
    params = np.array(init, dtype=float) if init is not None else np.asarray(model.initial_params(rng), dtype=float)
    layout = model.layer_groups()
    state = None
    aug_cache = {}
    samples, sample_epochs = [], []
    cols = {k: np.full(config.epochs, np.nan) for k in ("step_size", "energy_estimate", "grad_norm")}
    diverged = False
    last = config.epochs
    for e in range(config.epochs):
        step = step_size(e, config)
        if bank is not None:
            b = bank.index_for_epoch(e)
            if b not in aug_cache:
                aug_cache[b] = _augment.augment_array(X, bank, b)
            Xe = aug_cache[b]
        else:
            Xe = X
        energy_sum = grad_sq = 0.0
        batches = _batches(n, config.batch_size, rng)
        for idx in batches:
            Xb = None if Xe is None else Xe[idx]
            mean_nll, g_lik = model.loss_and_grad(params, Xb, y[idx])
            grad = combine_gradients(g_lik, prior.grad(params), N, T, config.mode)
            energy_sum += N * float(mean_nll) + float(prior.energy(params))
            grad_sq += float(np.sum(grad**2))
            noise = 1.0
            if config.precondition:
                grad, noise, state = precondition(grad, state, layout)
            params = sgld_step(params, grad, step, noise, rng)
        cols["step_size"][e] = step
        cols["energy_estimate"][e] = energy_sum / len(batches)
        cols["grad_norm"][e] = math.sqrt(grad_sq / len(batches))
        if not (np.isfinite(cols["energy_estimate"][e]) and np.all(np.isfinite(params))):
            diverged = True
            last = e + 1
            break
        if _is_sample_epoch(e, config):
            samples.append(params.copy())
            sample_epochs.append(e)
    trace = {"epoch": np.arange(last)}
    trace.update({k: v[:last] for k, v in cols.items()})
    return Chain(samples, sample_epochs, trace, diverged, config)


def chain_seeds(master_seed, n_chains):
    return [_augment.derive_seed(master_seed, k) for k in range(n_chains)]


def run_chains(model, X, y, prior, config, n_chains, bank=None, init=None, workers=1):
    """Independent chains with seeds ``derive_seed(config.seed, k)``.

    Full-batch chains of models that evaluate many parameter vectors at
    once run in lockstep; each chain still owns its RNG stream, so the
    result matches running the chains one by one.
    """
    config.validate()
    model = as_model(model)
    seeds = chain_seeds(config.seed, n_chains)
    configs = [replace(config, seed=s) for s in seeds]
    y = np.asarray(y)
    if getattr(model, "batched", False) and bank is None and config.batch_size >= len(y) and not config.precondition:
        return _run_lockstep(model, X, y, prior, configs, init)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda c: run_chain(model, X, y, prior, c, bank, init), configs))
    return [run_chain(model, X, y, prior, c, bank, init) for c in configs]


def _run_lockstep(model, X, y, prior, configs, init):
    config = configs[0]
    n = len(y)
    N = resolve_scale(config, n, None)
    T = config.temperature
    rngs = [np.random.default_rng(c.seed) for c in configs]
    if init is not None:
        params = np.tile(np.asarray(init, dtype=float), (len(configs), 1))
    else:
        params = np.stack([np.asarray(model.initial_params(r), dtype=float) for r in rngs])
    K = len(configs)
    samples = [[] for _ in range(K)]
    epochs_kept = []
    cols = {k: np.full((config.epochs, K), np.nan) for k in ("step_size", "energy_estimate", "grad_norm")}
    for e in range(config.epochs):
        step = step_size(e, config)
        mean_nll, g_lik = model.loss_and_grad(params, X, y)
        grad = combine_gradients(g_lik, prior.grad(params), N, T, config.mode)
        cols["step_size"][e] = step
        cols["energy_estimate"][e] = N * mean_nll + prior.energy(params)
        cols["grad_norm"][e] = np.sqrt(np.sum(grad**2, axis=-1))
        xi = np.stack([r.standard_normal(params.shape[1]) for r in rngs])
        params = params - 0.5 * step * grad + math.sqrt(step) * xi
        if _is_sample_epoch(e, config):
            for k in range(K):
                samples[k].append(params[k].copy())
            epochs_kept.append(e)
    chains = []
    for k, c in enumerate(configs):
        trace = {"epoch": np.arange(config.epochs)}
        trace.update({name: col[:, k].copy() for name, col in cols.items()})
        diverged = not np.all(np.isfinite(trace["energy_estimate"]))
        chains.append(Chain(samples[k], list(epochs_kept), trace, diverged, c))
    return chains


def bma_predict(chain, model, X):
    """Average of per-sample predictions ``(1/K) sum_k p(y | x, theta_k)``."""
    if len(chain.samples) == 0:
        raise EmptyChainError("cannot average predictions over an empty chain")
    model = as_model(model)
    return np.mean([model.predict(theta, X) for theta in chain.samples], axis=0)


def save_chain(chain, prefix, layout=None):
    """Write ``<prefix>.bin`` (float64 little-endian, samples x params),
    ``<prefix>.json`` metadata and ``<prefix>_trace.csv``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    arr = chain.as_array().astype("<f8")
    arr.tofile(prefix.with_suffix(".bin"))
    meta = {
        "n_samples": int(arr.shape[0]),
        "n_params": int(arr.shape[1]) if arr.ndim == 2 and arr.shape[0] else 0,
        "sample_epochs": [int(e) for e in chain.sample_epochs],
        "diverged": bool(chain.diverged),
        "config": asdict(chain.config) if chain.config is not None else None,
        "layout": [list(map(lambda v: v if isinstance(v, str) else int(v), entry)) for entry in (layout or [])],
    }
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_trace_csv(chain, prefix.parent / (prefix.name + "_trace.csv"))


def load_chain(prefix):
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    arr = flat.reshape(meta["n_samples"], meta["n_params"]) if meta["n_samples"] else np.zeros((0, 0))
    config = SgMcmcConfig(**meta["config"]) if meta["config"] else None
    return Chain(list(arr), meta["sample_epochs"], {}, meta["diverged"], config), meta


def write_trace_csv(chain, path):
    t = chain.trace
    lines = ["epoch,step_size,energy_estimate,grad_norm"]
    for i in range(len(t.get("epoch", []))):
        lines.append(f"{int(t['epoch'][i])},{t['step_size'][i]!r},{t['energy_estimate'][i]!r},{t['grad_norm'][i]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


class SGMCMCClassifier(ClassifierMixin, BaseEstimator):
    """Bayesian network classifier sampled with tempered SG-MCMC.

    ``predict_proba`` is the Bayesian model average over the retained
    samples.  With ``augmentation`` set, a bank of ``n_augmentations``
    transforms is replayed across epochs and the likelihood is scaled to
    ``n_augmentations * n`` points.
    """

    def __init__(self, network=None, prior_var=1.0, alpha0=1e-3, cycle_len=10, burn_in=50,
                 epochs=200, batch_size=32, temperature=1.0, mode="likelihood", augmentation=None,
                 n_augmentations=1, precondition=False, schedule="cyclical",
                 couple_step_to_temperature=None, random_state=0):
        self.network = network
        self.prior_var = prior_var
        self.alpha0 = alpha0
        self.cycle_len = cycle_len
        self.burn_in = burn_in
        self.epochs = epochs
        self.batch_size = batch_size
        self.temperature = temperature
        self.mode = mode
        self.augmentation = augmentation
        self.n_augmentations = n_augmentations
        self.precondition = precondition
        self.schedule = schedule
        self.couple_step_to_temperature = couple_step_to_temperature
        self.random_state = random_state

    def _spec(self):
        if isinstance(self.network, NetworkSpec):
            return self.network
        if isinstance(self.network, dict):
            return NetworkSpec.from_config(self.network)
        raise InvalidArgumentError("network must be a NetworkSpec or its config dict")

    def sampler_config(self):
        return SgMcmcConfig(
            alpha0=self.alpha0, cycle_len=self.cycle_len, burn_in=self.burn_in, epochs=self.epochs,
            batch_size=self.batch_size, temperature=self.temperature, mode=self.mode,
            precondition=self.precondition, seed=int(self.random_state), schedule=self.schedule,
            couple_step_to_temperature=self.couple_step_to_temperature,
        )

    def fit(self, X, y):
        spec = self._spec()
        X = np.asarray(X, dtype=float)
        if X.shape[1:] != spec.input_shape:
            raise InvalidArgumentError(f"X rows must have shape {spec.input_shape}, got {X.shape[1:]}")
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        if len(self.classes_) > spec.output_shape[0]:
            raise InvalidArgumentError("more classes than network outputs")
        bank = None
        if self.augmentation is not None:
            bank = _augment.make_bank(self.augmentation, self.n_augmentations, self.random_state)
        self.spec_ = spec
        self.chain_ = run_chain(spec, X, y_idx, PriorSpec(self.prior_var), self.sampler_config(), bank=bank)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "chain_")
        return bma_predict(self.chain_, self.spec_, np.asarray(X, dtype=float))[:, : len(self.classes_)]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
