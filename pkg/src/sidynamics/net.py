"""A tiny fully scale-invariant MLP with hand-written backpropagation.

Every trainable weight matrix is followed by batch normalization without
affine parameters, and the output layer is frozen at a random direction of
fixed norm.  The loss is therefore invariant to rescaling the trainable
parameter vector, which makes the network a drop-in objective for the
dynamics engine.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import OptimizerConfig, Trajectory, run
from .objectives import Objective, register_prefix

__all__ = [
    "NetSpec",
    "BlobSpec",
    "SyntheticDataset",
    "SINet",
    "Checkpoint",
    "TrainResult",
    "make_dataset",
    "bayes_error",
    "build",
    "train",
    "checkpoint_similarity",
    "similarity_csv",
    "DESK_NET",
    "DESK_DATA",
    "DESK_ETA",
    "DESK_LAM",
    "DESK_STEPS",
    "DESK_DELTA",
    "SimilarityStudy",
    "similarity_study",
]


@dataclass(frozen=True)
class NetSpec:
    input_dim: int = 16
    hidden: tuple[int, ...] = (32, 32)
    classes: int = 4
    last_layer_norm: float = 10.0
    activation: str = "tanh"
    bn_eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.classes < 2 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("widths must be >= 1 and classes >= 2")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.last_layer_norm > 0:
            raise ValueError("last_layer_norm must be positive")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_dim,) + self.hidden
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(a * b for a, b in self.shapes)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian blobs: class means ~ N(0, center_scale^2 I), noise std ``spread``."""

    dim: int = 16
    classes: int = 4
    n_train: int = 512
    n_test: int = 512
    spread: float = 1.0
    center_scale: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.n_train < 2 * self.classes or self.n_test < 2 * self.classes:
            raise ValueError("need n >= 2k samples in each split")
        if not (self.spread > 0 and self.center_scale > 0):
            raise ValueError("spread and center_scale must be positive")


@dataclass(frozen=True)
class SyntheticDataset:
    spec: BlobSpec
    seed: int
    centers: np.ndarray = field(repr=False)
    x_train: np.ndarray = field(repr=False)
    y_train: np.ndarray = field(repr=False)
    x_test: np.ndarray = field(repr=False)
    y_test: np.ndarray = field(repr=False)

    def digest(self) -> str:
        h = hashlib.sha1()
        for a in (self.x_train, self.y_train, self.x_test, self.y_test):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:12]


def _blobs(centers, n, spread, rng):
    k, d = centers.shape
    y = np.arange(n) % k
    rng.shuffle(y)
    return centers[y] + spread * rng.standard_normal((n, d)), y


def make_dataset(spec: BlobSpec, seed: int = 0) -> SyntheticDataset:
    """Deterministic blobs dataset; every class appears in both splits."""
    rng = np.random.default_rng(seed)
    centers = spec.center_scale * rng.standard_normal((spec.classes, spec.dim))
    x_tr, y_tr = _blobs(centers, spec.n_train, spec.spread, rng)
    x_te, y_te = _blobs(centers, spec.n_test, spec.spread, rng)
    return SyntheticDataset(spec, seed, centers, x_tr, y_tr, x_te, y_te)


def bayes_error(dataset: SyntheticDataset, samples: int = 200_000, seed: int = 1) -> float:
    """Monte-Carlo Bayes error of the generating mixture (nearest-centre rule is optimal)."""
    rng = np.random.default_rng(seed)
    x, y = _blobs(dataset.centers, samples, dataset.spec.spread, rng)
    d2 = ((x[:, None, :] - dataset.centers[None]) ** 2).sum(-1)
    return float(np.mean(np.argmin(d2, axis=1) != y))


def _tanh(z):
    a = np.tanh(z)
    return a, 1.0 - a * a


def _softplus(z):
    return np.logaddexp(0.0, z), 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(z):
    return np.maximum(z, 0.0), (z > 0).astype(float)


_ACTIVATIONS = {"tanh": _tanh, "softplus": _softplus, "relu": _relu}


class SINet(Objective):
    """Mean cross-entropy of the network as a function of its trainable weights.

    ``batch`` is an index array into the training split (``None``: all of
    it).  Normalization always uses the statistics of the batch at hand.
    """

    def __init__(self, spec: NetSpec, dataset: SyntheticDataset, seed: int = 0, batch_size: int = 64,
                 name: str | None = None):
        if dataset.spec.dim != spec.input_dim or dataset.spec.classes != spec.classes:
            raise ValueError("dataset and network dimensions disagree")
        self.spec = spec
        self.data = dataset
        self.seed = seed
        self.batch_size = batch_size
        self.dim = spec.n_params
        self.n_samples = dataset.spec.n_train
        self.name = name or f"si-net:{spec.digest()}"
        self.certification_tol = 1e-6
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((spec.hidden[-1], spec.classes))
        self.w_out = w * (spec.last_layer_norm / np.linalg.norm(w))
        self.w_out.setflags(write=False)
        self._act = _ACTIVATIONS[spec.activation]
        self._offsets = np.cumsum([0] + [a * b for a, b in spec.shapes])

    @property
    def kind(self) -> str:
        return "si-net"

    def init_params(self, seed: int = 0) -> np.ndarray:
        """Fan-in scaled Gaussian initialisation of the trainable weights."""
        rng = np.random.default_rng(seed)
        return np.concatenate([rng.standard_normal(a * b) / np.sqrt(a) for a, b in self.spec.shapes])

    def unflatten(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[lo:hi].reshape(shape) for lo, hi, shape in
                zip(self._offsets[:-1], self._offsets[1:], self.spec.shapes)]

    def sample_batch(self, rng):
        return rng.choice(self.n_samples, size=self.batch_size, replace=False)

    def _forward(self, weights, inputs):
        if inputs.shape[0] < 2:
            raise ValueError("normalization needs a batch of at least 2 samples")
        h = inputs
        cache = []
        for w in weights:
            z = h @ w
            mu = z.mean(axis=0)
            zc = z - mu
            sigma = np.sqrt((zc * zc).mean(axis=0) + self.spec.bn_eps)
            zhat = zc / sigma
            h_in = h
            h, dact = self._act(zhat)
            cache.append((h_in, zhat, sigma, dact))
        return h @ self.w_out, h, cache

    def logits(self, x: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return self._forward(self.unflatten(np.asarray(x, dtype=float)), inputs)[0]

    def value_and_grad(self, x, batch=None):
        v, g, _ = self.value_grad_error(x, batch)
        return v, g

    def value_grad_error(self, x, batch=None):
        xs = self.data.x_train if batch is None else self.data.x_train[batch]
        ys = self.data.y_train if batch is None else self.data.y_train[batch]
        weights = self.unflatten(x)
        logits, h_last, cache = self._forward(weights, xs)
        m = xs.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted - logz[:, None]
        loss = -float(logp[np.arange(m), ys].mean())
        err = float(np.mean(np.argmax(logits, axis=1) != ys))

        dlogits = np.exp(logp)
        dlogits[np.arange(m), ys] -= 1.0
        dlogits /= m
        dh = dlogits @ self.w_out.T
        grads = [None] * len(weights)
        for i in range(len(weights) - 1, -1, -1):
            h_in, zhat, sigma, dact = cache[i]
            dzhat = dh * dact
            dz = (dzhat - dzhat.mean(axis=0) - zhat * (dzhat * zhat).mean(axis=0)) / sigma
            grads[i] = h_in.T @ dz
            if i:
                dh = dz @ weights[i].T
        return loss, np.concatenate([g.ravel() for g in grads]), err

    def predict_proba(self, x: np.ndarray, inputs: np.ndarray, batch_size: int | None = None) -> np.ndarray:
        """Class probabilities using normalization statistics of fixed-size evaluation batches.

        A trailing remainder is evaluated inside a full-size batch made of the
        last ``batch_size`` rows, so every prediction sees the same batch size.
        """
        bs = batch_size or self.batch_size
        n = inputs.shape[0]
        bs = min(bs, n)
        weights = self.unflatten(np.asarray(x, dtype=float))
        out = np.empty((n, self.spec.classes))
        for lo in range(0, n, bs):
            hi = min(lo + bs, n)
            a = max(hi - bs, 0)
            logits = self._forward(weights, inputs[a:hi])[0]
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            out[lo:hi] = p[lo - a:]
        return out

    def error(self, x: np.ndarray, split: str = "test") -> float:
        xs, ys = (self.data.x_test, self.data.y_test) if split == "test" else (self.data.x_train, self.data.y_train)
        return float(np.mean(np.argmax(self.predict_proba(x, xs), axis=1) != ys))


def build(spec: NetSpec, dataset: SyntheticDataset, seed: int = 0, batch_size: int = 64) -> SINet:
    """Network objective with its frozen output layer drawn from ``seed``."""
    if batch_size < 2:
        raise ValueError("batch size must be >= 2 for batch normalization")
    return SINet(spec, dataset, seed, batch_size)


@dataclass(frozen=True)
class Checkpoint:
    step: int
    params: np.ndarray = field(repr=False)
    test_error: float
    spec_digest: str = ""

    def to_dict(self) -> dict:
        return {"step": self.step, "test_error": self.test_error, "spec_digest": self.spec_digest,
                "params": [repr(float(v)) for v in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        return cls(int(d["step"]), np.array([float(v) for v in d["params"]]), float(d["test_error"]),
                   d.get("spec_digest", ""))


@dataclass
class TrainResult:
    trajectory: Trajectory
    checkpoints: list[Checkpoint]
    epochs: dict[str, np.ndarray]
    net: SINet


def train(net: SINet, config: OptimizerConfig, x0: np.ndarray | None = None, checkpoint_steps=(),
          eval_every: int | None = None) -> TrainResult:
    """Trains through :func:`run`, adding epoch-level train/test error and checkpoints.

    ``eval_every`` defaults to one epoch of ``config.batch_size`` steps.
    """
    if x0 is None:
        x0 = net.init_params(config.seed)
    bs = config.batch_size or net.n_samples
    every = eval_every or max(1, net.n_samples // bs)
    wanted = set(int(s) for s in checkpoint_steps)
    epochs = {"step": [], "train_loss": [], "train_error": [], "test_error": []}
    ckpts: list[Checkpoint] = []

    def observer(t, x):
        at_epoch = t % every == 0
        if not (at_epoch or t in wanted):
            return
        test_err = net.error(x, "test")
        if at_epoch:
            loss, _, err = net.value_grad_error(x)
            epochs["step"].append(t)
            epochs["train_loss"].append(loss)
            epochs["train_error"].append(err)
            epochs["test_error"].append(test_err)
        if t in wanted:
            ckpts.append(Checkpoint(t, x.copy(), test_err, net.spec.digest()))

    traj = run(net, config, x0, objective_id=net.name, observer=observer)
    traj.meta["net_spec"] = asdict(net.spec)
    traj.meta["dataset_digest"] = net.data.digest()
    cols = {k: np.asarray(v, dtype=int if k == "step" else float) for k, v in epochs.items()}
    return TrainResult(traj, ckpts, cols, net)


def checkpoint_similarity(net: SINet, anchor: Checkpoint, others: list[Checkpoint]) -> list[dict]:
    """Cosine similarity to the anchor and test error of the two-model probability average.

    Each row also carries the single-model error of the compared checkpoint
    and of the anchor.
    """
    p_anchor = net.predict_proba(anchor.params, net.data.x_test)
    y = net.data.y_test
    anchor_err = float(np.mean(np.argmax(p_anchor, axis=1) != y))
    rows = []
    for ck in others:
        if ck.params.shape != anchor.params.shape:
            raise ValueError("checkpoint dimensions differ")
        if anchor.spec_digest and ck.spec_digest and anchor.spec_digest != ck.spec_digest:
            raise ValueError("checkpoints come from different network specs")
        p = net.predict_proba(ck.params, net.data.x_test)
        cos = float(anchor.params @ ck.params / (np.linalg.norm(anchor.params) * np.linalg.norm(ck.params)))
        rows.append({
            "step": ck.step,
            "cosine_sim": cos,
            "ensemble_err": float(np.mean(np.argmax(p + p_anchor, axis=1) != y)),
            "single_err": float(np.mean(np.argmax(p, axis=1) != y)),
            "anchor_err": anchor_err,
        })
    return rows


def similarity_csv(rows: list[dict], path=None) -> str:
    lines = ["step,cosine_sim,ensemble_err,single_err"]
    lines += [f"{r['step']},{r['cosine_sim']!r},{r['ensemble_err']!r},{r['single_err']!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


@dataclass
class SimilarityStudy:
    """Per-anchor comparison of within-period and cross-period checkpoints.

    For period ``i`` the anchor is the last checkpoint of its phase B (the
    period's minimum).  Within-period checkpoints are the earlier ones in
    the second half of the same phase B; cross-period checkpoints are those
    in the second half of phase B of period ``i + 1``, whose last one is the
    ensemble partner.
    """

    rows: list[dict]

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r["within_cos"] - r["cross_cos"] for r in self.rows])

    @property
    def sign_test_p(self) -> float:
        """One-sided sign-test p-value for ``within > cross``."""
        from scipy.stats import binomtest
        k = int(np.sum(self.gaps > 0))
        n = int(np.sum(self.gaps != 0))
        return float(binomtest(k, n, 0.5, alternative="greater").pvalue) if n else 1.0

    @property
    def median_ensemble_gain(self) -> float:
        """Median of ``anchor_err - ensemble_err`` over anchors; non-negative when ensembling helps."""
        return float(np.median([r["anchor_err"] - r["ensemble_err"] for r in self.rows]))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "median_gap": float(np.median(self.gaps)) if self.rows else None,
                "sign_test_p": self.sign_test_p, "median_ensemble_gain": self.median_ensemble_gain}


def similarity_study(net: SINet, periods, checkpoints: list[Checkpoint]) -> SimilarityStudy:
    """Runs :func:`checkpoint_similarity` around consecutive complete periods."""
    steps = sorted(c.step for c in checkpoints)
    by_step = {c.step: c for c in checkpoints}

    def in_b(p):
        a, b = p.phases["B"]
        return [by_step[s] for s in steps if a <= s <= b]

    complete = [p for p in periods if p.complete]
    rows = []
    for cur, nxt in zip(complete[:-1], complete[1:]):
        here, there = in_b(cur), in_b(nxt)
        if len(here) < 3 or len(there) < 2:
            continue
        anchor = here[-1]
        within = checkpoint_similarity(net, anchor, here[len(here) // 2:-1])
        cross = checkpoint_similarity(net, anchor, there[len(there) // 2:])
        rows.append({
            "anchor_step": anchor.step,
            "partner_step": cross[-1]["step"],
            "within_cos": float(np.median([r["cosine_sim"] for r in within])),
            "cross_cos": float(np.median([r["cosine_sim"] for r in cross])),
            "anchor_err": cross[-1]["anchor_err"],
            "partner_err": cross[-1]["single_err"],
            "ensemble_err": cross[-1]["ensemble_err"],
        })
    return SimilarityStudy(rows)


# Desk-scale configuration used by the periodicity and similarity checks:
# full-batch GD on 256 training points, eta = 1, lam = 1e-3, 20000 steps.
DESK_NET = NetSpec()
DESK_DATA = BlobSpec(n_train=256)
DESK_ETA = 1.0
DESK_LAM = 1e-3
DESK_STEPS = 20_000
DESK_DELTA = 0.01


def _resolve(name: str) -> SINet:
    if name in ("", "desk"):
        return build(DESK_NET, make_dataset(DESK_DATA, 0), seed=0)
    raise KeyError(f"unknown si-net spec {name!r}; known: desk")


register_prefix("si-net", _resolve)
