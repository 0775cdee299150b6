"""Mini-batch training with validation hit-ratio model selection."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as tl
from .data import stack_samples
from .errors import ConfigurationError, DimensionError, NumericalError, TrainingAborted, TrendlabError
from .evaluation import direction_hit_ratio, evaluate
from .losses import LossBatch, get_loss
from .models import ATTENTION_KINDS, Model, ModelConfig

log = logging.getLogger(__name__)

RUN_SCHEMA = "TRENDLAB-RUN v1"


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 25
    loss: str | None = None
    seed: int = 0
    clip_norm: float | None = 5.0
    normalize_inputs: bool = True
    log_every: int = 0
    selection_metric: str = "val_hit_ratio"

    def validate(self):
        bad = []
        if self.optimizer not in ("adam", "sgd"):
            bad.append(f"optimizer={self.optimizer!r}")
        if not self.learning_rate > 0:
            bad.append(f"learning_rate={self.learning_rate}")
        if self.batch_size < 1:
            bad.append(f"batch_size={self.batch_size}")
        if self.max_epochs < 1:
            bad.append(f"max_epochs={self.max_epochs}")
        if self.patience < 0:
            bad.append(f"patience={self.patience}")
        if self.loss not in (None, "ce", "weighted_ce"):
            bad.append(f"loss={self.loss!r}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            bad.append(f"clip_norm={self.clip_norm}")
        if self.selection_metric != "val_hit_ratio":
            bad.append(f"selection_metric={self.selection_metric!r} (only val_hit_ratio)")
        if bad:
            raise ConfigurationError("invalid train config: " + "; ".join(bad))
        return self

    def resolved_loss(self, kind):
        if self.loss is not None:
            return self.loss
        return "weighted_ce" if kind == "weighted_attention" else "ce"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown train config fields: {', '.join(sorted(extra))}")
        return cls(**d)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of named arrays.

    ``state`` maps names to ``(m, v, t)`` and is updated in place.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m, v, t = state.get(name, (np.zeros_like(p), np.zeros_like(p), 0))
        t += 1
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        state[name] = (m, v, t)
    return params, state


def sgd_step(params, grads, lr):
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        p -= lr * g
    return params


def clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and total > max_norm:
        s = max_norm / total
        for g in grads.values():
            g *= s
    return total


@dataclass
class RunManifest:
    """Everything needed to replay a training run. Wall-clock lives elsewhere."""

    model: dict
    train: dict
    data: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    seed: int = 0
    loss: str = "ce"
    input_scale: float = 1.0
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_hit_ratio: float | None = None
    stop_reason: str = ""
    status: str = "running"
    checkpoint: str | None = None
    n_train: int = 0
    n_val: int = 0
    test: dict | None = None
    error: str | None = None

    def to_dict(self):
        return {"schema": RUN_SCHEMA, **asdict(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("schema", None) != RUN_SCHEMA:
            raise ConfigurationError(f"not a {RUN_SCHEMA} manifest")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _batch_loss(model, loss_fn, X, Y, cr, rng):
    probs, _, _ = model.forward_batch(X, dropout_rng=rng)
    return probs, loss_fn(LossBatch(probs, Y, cr))


def train(model: Model, train_samples, val_samples, config: TrainConfig | None = None, manifest=None):
    """Fit ``model`` in place and return ``(model, manifest)``.

    After every epoch the validation hit ratio is measured and the
    parameters of the best epoch (earliest on ties) are kept. Training
    stops at ``max_epochs`` or once ``patience`` epochs in a row failed to
    improve on the best. The returned model holds the best parameters.
    """
    config = (config or TrainConfig()).validate()
    if not train_samples or not val_samples:
        raise ConfigurationError("training and validation sets must be nonempty")
    loss_name = config.resolved_loss(model.kind)
    loss_fn = get_loss(loss_name)
    X, Y, cr = stack_samples(train_samples)
    Xv, Yv, crv = stack_samples(val_samples)
    if config.normalize_inputs:
        sd = float(X.std())
        model.input_scale = 1.0 / sd if sd > 0 else 1.0
    if manifest is None:
        manifest = RunManifest(model=model.config.to_dict(), train=config.to_dict())
    manifest.seed = config.seed
    manifest.loss = loss_name
    manifest.input_scale = model.input_scale
    manifest.n_train, manifest.n_val = len(X), len(Xv)
    manifest.status = "running"

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    arrays = {k: t.data for k, t in params.items()}
    state = {}
    best = None
    since_best = 0
    n = len(X)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            model.zero_grad()
            try:
                with tl.Tape() as tape:
                    probs, loss = _batch_loss(model, loss_fn, X[idx], Y[idx], cr[idx], rng)
                tape.backward(loss)
            except NumericalError as exc:
                manifest.status = "aborted"
                manifest.error = f"epoch {epoch}: {exc}"
                raise TrainingAborted(f"training aborted at epoch {epoch}: {exc}", manifest) from exc
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            clip_global_norm(grads, config.clip_norm)
            if config.optimizer == "adam":
                adam_step(arrays, grads, state, config.learning_rate)
            else:
                sgd_step(arrays, grads, config.learning_rate)
            loss_sum += loss.item() * len(idx)
            hits += int(np.count_nonzero((probs.data[:, 1] >= probs.data[:, 0]) == (cr[idx] >= 0)))
        pv = model.predict_proba(Xv)
        val_loss = loss_fn(LossBatch(tl.Tensor._wrap(pv), Yv, crv)).item()
        val_hit = direction_hit_ratio(pv[:, 1] >= pv[:, 0], crv)
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_hit_ratio": hits / n,
            "val_loss": val_loss,
            "val_hit_ratio": val_hit,
        }
        manifest.history.append(record)
        if config.log_every and epoch % config.log_every == 0:
            log.info("epoch %d train_loss %.6f val_hit %.4f", epoch, record["train_loss"], val_hit)
        if best is None or val_hit > best[1]:
            best = (epoch, val_hit, {k: a.copy() for k, a in arrays.items()})
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                manifest.stop_reason = f"patience exhausted at epoch {epoch}"
                break
    else:
        manifest.stop_reason = f"reached max_epochs={config.max_epochs}"
    model.load_state_arrays(best[2])
    manifest.best_epoch, manifest.best_val_hit_ratio = best[0], best[1]
    manifest.status = "complete"
    return model, manifest


@dataclass
class RunSpec:
    """One experiment: model and train configs plus its three sample sets."""

    model: ModelConfig
    train: TrainConfig
    train_samples: list
    val_samples: list
    test_samples: list
    name: str = ""


def run_once(spec: RunSpec, offset=0):
    """Train with seeds shifted by ``offset`` and score the test set."""
    mcfg = replace(spec.model, seed=spec.model.seed + offset)
    tcfg = replace(spec.train, seed=spec.train.seed + offset)
    model = Model(mcfg)
    model, manifest = train(model, spec.train_samples, spec.val_samples, tcfg)
    report = evaluate(model, spec.test_samples)
    return model, manifest, report


def _run_job(args):
    spec, offset = args
    try:
        _, manifest, report = run_once(spec, offset)
        return {"offset": offset, "ok": True, "test_hit_ratio": report.hit_ratio,
                "best_val_hit_ratio": manifest.best_val_hit_ratio, "report": report.summary()}
    except TrendlabError as exc:
        return {"offset": offset, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def repeat_runs(specs, n_repeats, vary_seed=True, jobs=1):
    """Run every spec ``n_repeats`` times (seeds ``seed + 0 .. n - 1``).

    Returns one dict per spec with the per-run results and the mean and
    population standard deviation of the test hit ratio over successful
    runs. Failed runs are recorded and skipped. Output order never depends
    on ``jobs``.
    """
    if n_repeats < 1:
        raise ConfigurationError("n_repeats must be >= 1")
    tasks = [(spec, r if vary_seed else 0) for spec in specs for r in range(n_repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    out = []
    for i, spec in enumerate(specs):
        runs = results[i * n_repeats : (i + 1) * n_repeats]
        ok = [r["test_hit_ratio"] for r in runs if r["ok"]]
        out.append({
            "name": spec.name,
            "kind": spec.model.kind,
            "runs": runs,
            "n_ok": len(ok),
            "n_failed": len(runs) - len(ok),
            "mean_hit_ratio": float(np.mean(ok)) if ok else None,
            "std_hit_ratio": float(np.std(ok)) if ok else None,
        })
    return out


def default_loss_for(kind):
    return "weighted_ce" if kind == "weighted_attention" else "ce"


__all__ = [
    "ATTENTION_KINDS", "RunManifest", "RunSpec", "TrainConfig", "adam_step", "clip_global_norm",
    "default_loss_for", "repeat_runs", "run_once", "sgd_step", "train",
]
