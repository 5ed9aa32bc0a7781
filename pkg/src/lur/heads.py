"""Probabilistic classifier heads over frozen latents.

Every head maps a batch of latents ``Z`` (N x D) to a :class:`Predictions`
holding ``N x S x C`` class probabilities, where S is the number of members
or samples the head produces per instance:

* ``regular``       one linear softmax layer, S = 1
* ``sub_ensemble``  n independent linear layers on the shared latent, S = n
* ``lur``           n affine transforms of the latent, all read by one
                    shared linear layer, S = n + 1 (the untransformed path first)
* ``rlur``          ``lur`` with the transforms trained as repelling particles
* ``rlle``          ``sub_ensemble`` with the layers trained as repelling particles
* ``bbb_ll``        Bayes-by-backprop mean-field Gaussian linear layer, S = n samples
* ``gda``           class-wise Gaussian discriminant with a density OOD score, S = 1

All trainable heads use plain mini-batch SGD with analytic gradients.
"""
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, InvalidInputError, NumericError, TrainingDiverged
from .numerics import batch_cross_entropy, make_rng, sigmoid, softmax, softplus
from .repulsion import KernelConfig, PriorConfig, estimate_repulsion, repulsive_step

VARIANTS = ("regular", "sub_ensemble", "lur", "rlur", "rlle", "bbb_ll", "gda")
PARTICLE_VARIANTS = ("rlur", "rlle")

# RNG sub-streams derived from the config seed
_SHUFFLE, _INIT, _BBB_TRAIN, _BBB_PREDICT = 0, 1, 2, 3

FUNCTION_SPACE_BATCH = 64


@dataclass
class HeadConfig:
    variant: str = "lur"
    num_members: int = 5
    latent_dim: int | None = None
    num_classes: int | None = None
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    init_stdev: float = 0.02
    transform_init: str = "gaussian"  # or "identity"
    bbb_prior_stdev: float = 1.0
    bbb_kl_weight: float = 1.0
    bbb_init_rho: float = -5.0
    gda_reg: float = 1e-6
    gda_covariance: str = "shared"  # or "per_class"
    kernel: KernelConfig = field(default_factory=KernelConfig)
    prior_stdev: float = 1.0

    def validate(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant in PARTICLE_VARIANTS and self.num_members < 2:
            raise InvalidInputError(f"{self.variant} needs at least two particles (num_members >= 2)")
        if self.variant in ("sub_ensemble", "bbb_ll") and self.num_members < 1:
            raise InvalidInputError("num_members must be >= 1")
        if self.num_members < 0:
            raise InvalidInputError("num_members must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidInputError("batch_size and epochs must be >= 1")
        if self.transform_init not in ("gaussian", "identity"):
            raise InvalidInputError(f"unknown transform_init {self.transform_init!r}")
        if self.gda_covariance not in ("shared", "per_class"):
            raise InvalidInputError(f"unknown gda_covariance {self.gda_covariance!r}")
        if not (self.bbb_prior_stdev > 0 and self.prior_stdev > 0 and self.gda_reg >= 0):
            raise InvalidInputError("prior stdevs must be > 0 and gda_reg >= 0")
        self.kernel.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown head config fields: {', '.join(sorted(unknown))}")
        kernel = d.pop("kernel", None) or {}
        if not isinstance(kernel, KernelConfig):
            kfields = {f.name for f in fields(KernelConfig)}
            bad = set(kernel) - kfields
            if bad:
                raise InvalidInputError(f"unknown kernel fields: {', '.join(sorted(bad))}")
            kernel = KernelConfig(**kernel)
        return cls(kernel=kernel, **d)


@dataclass(frozen=True, eq=False)
class Predictions:
    """Per-instance predictive distributions for a batch.

    ``probs`` is N x S x C. ``latent_reps`` (N x (n+1) x D) is present for
    the LUR family only; ``density`` (N,) for the GDA head only.
    """

    probs: np.ndarray
    latent_reps: np.ndarray | None = None
    density: np.ndarray | None = None

    def mean_probs(self):
        return self.probs.mean(axis=1)

    def predicted(self):
        return np.argmax(self.mean_probs(), axis=1)


class Head:
    variant = None
    param_names = ()

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @property
    def num_samples(self):
        raise NotImplementedError

    def predict(self, Z):
        raise NotImplementedError

    def _check_input(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.ndim != 2 or Z.shape[1] != self.config.latent_dim:
            raise InvalidInputError(f"expected latents with D={self.config.latent_dim}, got shape {Z.shape}")
        if not np.all(np.isfinite(Z)):
            raise InvalidInputError("latents contain non-finite values")
        return Z


class RegularHead(Head):
    variant = "regular"
    param_names = ("W", "b")

    @property
    def num_samples(self):
        return 1

    def predict(self, Z):
        Z = self._check_input(Z)
        p = self.params
        return Predictions(softmax(Z @ p["W"] + p["b"])[:, None, :])


def regular_loss_and_grads(params, Z, y):
    losses, g = batch_cross_entropy(Z @ params["W"] + params["b"], y)
    g /= Z.shape[0]
    return float(losses.mean()), {"W": Z.T @ g, "b": g.sum(axis=0)}


class LurHead(Head):
    """Shared classifier ``W, b`` plus ``n`` affine transforms ``T[i], t[i]``."""

    variant = "lur"
    param_names = ("W", "b", "T", "t")

    def __init__(self, config, params, variant="lur"):
        super().__init__(config, params)
        self.variant = variant

    @property
    def num_transforms(self):
        return self.params["T"].shape[0]

    @property
    def num_samples(self):
        return self.num_transforms + 1

    def representations(self, Z):
        """List of n+1 (N, D) arrays: ``Z`` itself, then each transformed copy."""
        p = self.params
        return [Z] + [Z @ p["T"][i].T + p["t"][i] for i in range(self.num_transforms)]

    def predict(self, Z):
        Z = self._check_input(Z)
        reps = self.representations(Z)
        W, b = self.params["W"], self.params["b"]
        probs = np.stack([softmax(r @ W + b) for r in reps], axis=1)
        return Predictions(probs, latent_reps=np.stack(reps, axis=1))

    def transform_particles(self):
        p = self.params
        n, d = p["t"].shape
        return np.concatenate([p["T"].reshape(n, d * d), p["t"]], axis=1)


def lur_forward(head, z):
    """Predictions of a LUR head for one latent vector or a batch."""
    return head.predict(z)


def lur_loss_and_grads(params, Z, y):
    """Summed cross-entropy over the original and every transformed path.

    Returns the batch-mean loss and gradients for ``W, b, T, t``. The shared
    classifier collects gradient from all n+1 paths; transform i only from
    its own path.
    """
    W, b, T, t = params["W"], params["b"], params["T"], params["t"]
    bsz = Z.shape[0]
    losses, g = batch_cross_entropy(Z @ W + b, y)
    g /= bsz
    gW = Z.T @ g
    gb = g.sum(axis=0)
    total = losses.copy()
    gT = np.zeros_like(T)
    gt = np.zeros_like(t)
    for i in range(T.shape[0]):
        rep = Z @ T[i].T + t[i]
        li, gi = batch_cross_entropy(rep @ W + b, y)
        gi /= bsz
        total += li
        gW += rep.T @ gi
        gb += gi.sum(axis=0)
        grep = gi @ W.T
        gT[i] = grep.T @ Z
        gt[i] = grep.sum(axis=0)
    return float(total.mean()), {"W": gW, "b": gb, "T": gT, "t": gt}


class EnsembleHead(Head):
    """``n`` independent linear softmax layers ``W[k], b[k]`` over one latent."""

    variant = "sub_ensemble"
    param_names = ("W", "b")

    def __init__(self, config, params, variant="sub_ensemble"):
        super().__init__(config, params)
        self.variant = variant

    @property
    def num_samples(self):
        return self.params["W"].shape[0]

    def predict(self, Z):
        Z = self._check_input(Z)
        W, b = self.params["W"], self.params["b"]
        return Predictions(np.stack([softmax(Z @ W[k] + b[k]) for k in range(W.shape[0])], axis=1))

    def member_particles(self):
        W, b = self.params["W"], self.params["b"]
        return np.concatenate([W.reshape(W.shape[0], -1), b], axis=1)


def ensemble_loss_and_grads(params, Z, y):
    W, b = params["W"], params["b"]
    bsz = Z.shape[0]
    total = np.zeros(bsz)
    gW = np.empty_like(W)
    gb = np.empty_like(b)
    for k in range(W.shape[0]):
        lk, gk = batch_cross_entropy(Z @ W[k] + b[k], y)
        gk /= bsz
        total += lk
        gW[k] = Z.T @ gk
        gb[k] = gk.sum(axis=0)
    return float(total.mean()), {"W": gW, "b": gb}


class BbbHead(Head):
    """Mean-field Gaussian last layer, ``w = mu + softplus(rho) * eps``."""

    variant = "bbb_ll"
    param_names = ("mu_W", "mu_b", "rho_W", "rho_b")

    @property
    def num_samples(self):
        return max(1, self.config.num_members)

    def predict(self, Z, samples=None, rng=None):
        return bbb_forward(self, Z, samples or self.num_samples, rng)


def bbb_forward(head, Z, samples, rng=None):
    """Monte Carlo predictive with ``samples`` weight draws.

    Without ``rng`` a fresh stream derived from the head seed is used, so
    repeated calls return identical predictions.
    """
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    Z = head._check_input(Z)
    p = head.params
    rng = make_rng(head.config.seed, _BBB_PREDICT) if rng is None else rng
    sW, sb = softplus(p["rho_W"]), softplus(p["rho_b"])
    probs = []
    for _ in range(samples):
        W = p["mu_W"] + sW * rng.standard_normal(sW.shape)
        b = p["mu_b"] + sb * rng.standard_normal(sb.shape)
        probs.append(softmax(Z @ W + b))
    return Predictions(np.stack(probs, axis=1))


def gaussian_kl(mu, sigma, prior_stdev):
    """KL(N(mu, sigma^2) || N(0, prior_stdev^2)) summed over all entries."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    ratio = (sigma / prior_stdev) ** 2
    return float(np.sum(0.5 * (ratio + (mu / prior_stdev) ** 2 - 1.0 - np.log(ratio))))


def bbb_loss_and_grads(params, Z, y, eps_W, eps_b, kl_scale, prior_stdev):
    """Single-sample reparameterised loss ``CE + kl_scale * KL`` and its gradients."""
    sW, sb = softplus(params["rho_W"]), softplus(params["rho_b"])
    W = params["mu_W"] + sW * eps_W
    b = params["mu_b"] + sb * eps_b
    losses, g = batch_cross_entropy(Z @ W + b, y)
    g /= Z.shape[0]
    gW, gb = Z.T @ g, g.sum(axis=0)
    if kl_scale == 0:
        # beta = 0 skips the KL term entirely (it is infinite once sigma underflows to 0)
        return float(losses.mean()), {
            "mu_W": gW, "mu_b": gb,
            "rho_W": gW * eps_W * sigmoid(params["rho_W"]), "rho_b": gb * eps_b * sigmoid(params["rho_b"]),
        }
    kl = gaussian_kl(params["mu_W"], sW, prior_stdev) + gaussian_kl(params["mu_b"], sb, prior_stdev)
    pv = prior_stdev**2
    grads = {
        "mu_W": gW + kl_scale * params["mu_W"] / pv,
        "mu_b": gb + kl_scale * params["mu_b"] / pv,
        "rho_W": (gW * eps_W + kl_scale * (sW / pv - 1.0 / sW)) * sigmoid(params["rho_W"]),
        "rho_b": (gb * eps_b + kl_scale * (sb / pv - 1.0 / sb)) * sigmoid(params["rho_b"]),
    }
    return float(losses.mean() + kl_scale * kl), grads


class GdaHead(Head):
    """Class-wise Gaussian fit; ``score`` is the negative log mixture density."""

    variant = "gda"
    param_names = ("means", "cov", "log_priors")

    def __init__(self, config, params):
        super().__init__(config, params)
        cov = params["cov"]
        covs = cov if cov.ndim == 3 else cov[None]
        try:
            self._chol = np.stack([np.linalg.cholesky(c) for c in covs])
        except np.linalg.LinAlgError:
            raise NumericError(
                f"class covariance is singular with gda_reg={config.gda_reg}; use a larger regulariser"
            ) from None
        self._logdet = 2.0 * np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)

    @property
    def num_samples(self):
        return 1

    def class_log_likelihoods(self, Z):
        means = self.params["means"]
        d = means.shape[1]
        out = np.empty((Z.shape[0], means.shape[0]))
        for c in range(means.shape[0]):
            k = c if self._chol.shape[0] > 1 else 0
            diff = (Z - means[c]).T
            sol = np.linalg.solve(self._chol[k], diff)
            maha = np.sum(sol * sol, axis=0)
            out[:, c] = -0.5 * (maha + self._logdet[k] + d * np.log(2 * np.pi))
        return out

    def score(self, Z):
        """Higher means less likely under the fitted class mixture."""
        Z = self._check_input(Z)
        joint = self.class_log_likelihoods(Z) + self.params["log_priors"]
        return -logsumexp(joint, axis=1)

    def __call__(self, z):
        return self.score(z)

    def predict(self, Z):
        Z = self._check_input(Z)
        joint = self.class_log_likelihoods(Z) + self.params["log_priors"]
        return Predictions(softmax(joint)[:, None, :], density=-logsumexp(joint, axis=1))


def gda_fit_score(ds, eps=1e-6, covariance="shared", config=None):
    """Fit class means and a (shared or per-class) covariance on train rows.

    Returns a :class:`GdaHead`; call it or its ``score`` method on latents.
    """
    train = ds.train()
    counts = np.bincount(train.labels, minlength=ds.num_classes)
    if np.any(counts < 2):
        raise InvalidInputError("every class needs at least two train rows for GDA")
    X, y = train.features, train.labels
    d = X.shape[1]
    means = np.stack([X[y == c].mean(axis=0) for c in range(ds.num_classes)])
    centred = X - means[y]
    if covariance == "shared":
        cov = centred.T @ centred / X.shape[0] + eps * np.eye(d)
    else:
        cov = np.stack([np.cov(X[y == c], rowvar=False, bias=True).reshape(d, d) + eps * np.eye(d)
                        for c in range(ds.num_classes)])
    if config is None:
        config = HeadConfig(variant="gda", latent_dim=d, num_classes=ds.num_classes, gda_reg=eps,
                            gda_covariance=covariance)
    params = {"means": means, "cov": cov, "log_priors": np.log(counts / counts.sum())}
    return GdaHead(config, params)


# ---------------------------------------------------------------------------
# training


def _init_params(config):
    d, c, n, s = config.latent_dim, config.num_classes, config.num_members, config.init_stdev
    rng = make_rng(config.seed, _INIT)
    v = config.variant
    if v == "regular":
        return {"W": rng.normal(0.0, s, (d, c)), "b": np.zeros(c)}
    if v in ("lur", "rlur"):
        W = rng.normal(0.0, s, (d, c))
        if config.transform_init == "identity":
            T = np.tile(np.eye(d), (n, 1, 1))
        else:
            T = rng.normal(0.0, s, (n, d, d))
        return {"W": W, "b": np.zeros(c), "T": T, "t": np.zeros((n, d))}
    if v in ("sub_ensemble", "rlle"):
        W = np.stack([make_rng(config.seed, _INIT, k).normal(0.0, s, (d, c)) for k in range(n)])
        return {"W": W, "b": np.zeros((n, c))}
    if v == "bbb_ll":
        return {
            "mu_W": rng.normal(0.0, s, (d, c)),
            "mu_b": np.zeros(c),
            "rho_W": np.full((d, c), config.bbb_init_rho),
            "rho_b": np.full(c, config.bbb_init_rho),
        }
    raise InvalidInputError(f"no SGD initialisation for variant {v!r}")


def make_head(config, params):
    v = config.variant
    if v == "regular":
        return RegularHead(config, params)
    if v in ("lur", "rlur"):
        return LurHead(config, params, variant=v)
    if v in ("sub_ensemble", "rlle"):
        return EnsembleHead(config, params, variant=v)
    if v == "bbb_ll":
        return BbbHead(config, params)
    if v == "gda":
        return GdaHead(config, params)
    raise InvalidInputError(f"unknown variant {v!r}")


def _sgd_update(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


class _ParticleUpdater:
    """Attraction-repulsion update for the transforms (rlur) or layers (rlle)."""

    def __init__(self, config, X_train):
        self.config = config
        self.n_train = X_train.shape[0]
        self.prior = PriorConfig(config.prior_stdev)
        self.X_rep = X_train[: min(FUNCTION_SPACE_BATCH, self.n_train)]

    def _flatten(self, params, grads=None):
        src = params if grads is None else grads
        if self.config.variant == "rlur":
            n, d = src["t"].shape
            return np.concatenate([src["T"].reshape(n, d * d), src["t"]], axis=1)
        n = src["W"].shape[0]
        return np.concatenate([src["W"].reshape(n, -1), src["b"]], axis=1)

    def _unflatten(self, params, flat):
        if self.config.variant == "rlur":
            n, d = params["t"].shape
            params["T"][...] = flat[:, : d * d].reshape(n, d, d)
            params["t"][...] = flat[:, d * d:]
        else:
            n, d, c = params["W"].shape
            params["W"][...] = flat[:, : d * c].reshape(n, d, c)
            params["b"][...] = flat[:, d * c:]

    def _function_repulsion(self, params):
        X = self.X_rep
        kernel = self.config.kernel
        if self.config.variant == "rlur":
            W, b, T, t = params["W"], params["b"], params["T"], params["t"]
            f = np.stack([((X @ T[i].T + t[i]) @ W + b).ravel() for i in range(T.shape[0])])
            rf = estimate_repulsion(f, kernel)
            out = []
            for i in range(T.shape[0]):
                grep = rf[i].reshape(X.shape[0], -1) @ W.T
                out.append(np.concatenate([(grep.T @ X).ravel(), grep.sum(axis=0)]))
            return np.stack(out)
        W, b = params["W"], params["b"]
        f = np.stack([(X @ W[k] + b[k]).ravel() for k in range(W.shape[0])])
        rf = estimate_repulsion(f, kernel)
        out = []
        for k in range(W.shape[0]):
            r = rf[k].reshape(X.shape[0], -1)
            out.append(np.concatenate([(X.T @ r).ravel(), r.sum(axis=0)]))
        return np.stack(out)

    def __call__(self, params, grads):
        lr = self.config.learning_rate
        theta = self._flatten(params)
        # grads are of the batch-mean loss; rescale to the full-data log-likelihood
        attraction = -self.n_train * self._flatten(params, grads) + self.prior.grad_log_prior(theta)
        repulsion = None
        if self.config.kernel.space == "function":
            repulsion = self._function_repulsion(params)
        new = repulsive_step(theta, attraction, self.config.kernel, lr / self.n_train, repulsion=repulsion)
        if self.config.variant == "rlur":
            params["W"] -= lr * grads["W"]
            params["b"] -= lr * grads["b"]
        self._unflatten(params, new)


def train_head(config, ds, on_epoch=None):
    """Train a head on the train rows of ``ds``.

    Missing ``latent_dim`` / ``num_classes`` in ``config`` are filled from the
    dataset. Training is deterministic in ``(config, ds)``. ``on_epoch`` is
    called with ``(epoch, mean_loss, params)`` after every epoch.
    """
    config = HeadConfig.from_dict(config.to_dict())
    config.latent_dim = ds.dim if config.latent_dim is None else config.latent_dim
    config.num_classes = ds.num_classes if config.num_classes is None else config.num_classes
    config.validate()
    if config.latent_dim != ds.dim or config.num_classes != ds.num_classes:
        raise InvalidInputError(
            f"config expects D={config.latent_dim}, C={config.num_classes}; data has D={ds.dim}, C={ds.num_classes}"
        )
    train = ds.train()
    if train.n == 0:
        raise InvalidInputError("dataset has no train rows")
    if config.variant == "gda":
        return gda_fit_score(ds, config.gda_reg, config.gda_covariance, config=config)

    X, y = train.features, train.labels
    n_train = X.shape[0]
    params = _init_params(config)
    v = config.variant
    if v == "regular":
        loss_fn = regular_loss_and_grads
    elif v in ("lur", "rlur"):
        loss_fn = lur_loss_and_grads
    elif v in ("sub_ensemble", "rlle"):
        loss_fn = ensemble_loss_and_grads
    else:
        eps_rng = make_rng(config.seed, _BBB_TRAIN)
        kl_scale = config.bbb_kl_weight / n_train

        def loss_fn(p, Zb, yb):
            eps_W = eps_rng.standard_normal(p["mu_W"].shape)
            eps_b = eps_rng.standard_normal(p["mu_b"].shape)
            return bbb_loss_and_grads(p, Zb, yb, eps_W, eps_b, kl_scale, config.bbb_prior_stdev)

    if v in PARTICLE_VARIANTS:
        update = _ParticleUpdater(config, X)
    else:
        def update(p, g):
            _sgd_update(p, g, config.learning_rate)

    shuffle_rng = make_rng(config.seed, _SHUFFLE)
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, bs):
            idx = perm[start:start + bs]
            loss, grads = loss_fn(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged("loss is not finite", epoch=epoch)
            try:
                update(params, grads)
            except TrainingDiverged as exc:
                raise TrainingDiverged(str(exc), epoch=epoch) from None
            epoch_loss += loss * len(idx)
        if not all(np.all(np.isfinite(a)) for a in params.values()):
            raise TrainingDiverged("parameters became non-finite", epoch=epoch)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / n_train, params)
    return make_head(config, params)


# ---------------------------------------------------------------------------
# serialisation: "LURH" blob with float64 arrays plus a JSON config sidecar

LURH_MAGIC = b"LURH"
LURH_VERSION = 1


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def head_to_bytes(head):
    cfg = head.config
    tag = head.variant.encode("ascii")
    out = [LURH_MAGIC, struct.pack("<IB", LURH_VERSION, len(tag)), tag]
    out.append(struct.pack("<III", cfg.latent_dim, cfg.num_classes, cfg.num_members))
    out.append(struct.pack("<I", len(head.param_names)))
    for name in head.param_names:
        arr = np.ascontiguousarray(head.params[name], dtype="<f8")
        nb = name.encode("ascii")
        out.append(struct.pack("<B", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def head_from_bytes(raw, config):
    try:
        if raw[:4] != LURH_MAGIC:
            raise FormatError(f"bad head magic {raw[:4]!r}")
        version, tag_len = struct.unpack_from("<IB", raw, 4)
        if version != LURH_VERSION:
            raise FormatError(f"unsupported head version {version}")
        off = 9
        variant = raw[off:off + tag_len].decode("ascii")
        off += tag_len
        d, c, n = struct.unpack_from("<III", raw, off)
        off += 12
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        params = {}
        for _ in range(count):
            (nl,) = struct.unpack_from("<B", raw, off)
            name = raw[off + 1:off + 1 + nl].decode("ascii")
            off += 1 + nl
            (ndim,) = struct.unpack_from("<B", raw, off)
            shape = struct.unpack_from(f"<{ndim}I", raw, off + 1)
            off += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(raw):
                raise FormatError("truncated parameter array")
            params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except struct.error as exc:
        raise FormatError(f"truncated head blob ({exc})") from None
    if off != len(raw):
        raise FormatError("trailing bytes after head parameters")
    if variant != config.variant or (d, c, n) != (config.latent_dim, config.num_classes, config.num_members):
        raise FormatError("head blob does not match its config sidecar")
    head = make_head(config, params)
    missing = set(head.param_names) - set(params)
    if missing:
        raise FormatError(f"head blob lacks parameters: {', '.join(sorted(missing))}")
    return head


def save_head(head, path):
    path = Path(path)
    path.write_bytes(head_to_bytes(head))
    sidecar_path(path).write_text(json.dumps(head.config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_head(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such head file: {path}")
    side = sidecar_path(path)
    if not side.is_file():
        raise FormatError(f"missing config sidecar {side}")
    try:
        config = HeadConfig.from_dict(json.loads(side.read_text()))
    except (json.JSONDecodeError, TypeError, InvalidInputError) as exc:
        raise FormatError(f"{side}: {exc}") from None
    return head_from_bytes(path.read_bytes(), config)
