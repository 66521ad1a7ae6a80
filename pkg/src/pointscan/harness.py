"""Training and evaluation harness: synthetic shape datasets, a minibatch
training loop with cosine decay, accuracy/IoU metrics, a finite-difference
gradient-check driver, and the ablation runner."""

import csv
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DomainError
from .layers import Adam, cosine_lr, grad_global_norm
from .network import (
    NetworkConfig,
    PointCloud,
    PointNetwork,
    StageConfig,
    count_params_flops,
)
from .tensor import backward, tensor

GENERATORS = ("sphere", "cube", "plane", "cylinder", "dumbbell")

_ALIASES = {"two-part-dumbbell": "dumbbell"}


@dataclass
class SyntheticSpec:
    """Recipe for a deterministic synthetic dataset.

    generator is one shape name or a tuple of names; with several names each
    position becomes one recognition class.  The dumbbell generator instead
    carries per-point part labels (label 1 where |x| > 0.5, else 0) and is
    the segmentation shape.
    """

    generator: tuple
    points: int = 128
    noise: float = 0.02
    samples_per_class: int = 4
    seed: int = 0

    def __post_init__(self):
        names = ((self.generator,) if isinstance(self.generator, str)
                 else tuple(self.generator))
        names = tuple(_ALIASES.get(n, n) for n in names)
        bad = [n for n in names if n not in GENERATORS]
        if bad:
            raise ConfigError(f"unknown generators {bad}, expected {GENERATORS}")
        self.generator = names
        if self.points < 1:
            raise ConfigError("points must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")


def _sphere(rng, l):
    v = rng.normal(size=(l, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _cube(rng, l):
    p = rng.uniform(-0.8, 0.8, size=(l, 3))
    face = rng.integers(0, 3, size=l)
    side = rng.integers(0, 2, size=l) * 2 - 1
    p[np.arange(l), face] = 0.8 * side
    return p


def _plane(rng, l):
    p = np.zeros((l, 3))
    p[:, :2] = rng.uniform(-1.0, 1.0, size=(l, 2))
    return p


def _cylinder(rng, l):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=l)
    z = rng.uniform(-1.0, 1.0, size=l)
    return np.stack([0.5 * np.cos(theta), 0.5 * np.sin(theta), z], axis=1)


def _dumbbell(rng, l):
    n_bar = l // 3
    n_lobe = l - n_bar
    bar = np.zeros((n_bar, 3))
    bar[:, 0] = rng.uniform(-0.45, 0.45, size=n_bar)
    bar[:, 1:] = rng.uniform(-0.1, 0.1, size=(n_bar, 2))
    lobe = rng.normal(size=(n_lobe, 3))
    lobe /= np.linalg.norm(lobe, axis=1, keepdims=True)
    lobe *= 0.3
    lobe[:, 0] += np.where(rng.uniform(size=n_lobe) < 0.5, -0.8, 0.8)
    return np.concatenate([bar, lobe], axis=0)


_MAKERS = {"sphere": _sphere, "cube": _cube, "plane": _plane,
           "cylinder": _cylinder, "dumbbell": _dumbbell}


def generate(spec):
    """Deterministic list of PointCloud described by a SyntheticSpec.

    Per-coordinate jitter is uniform in [-noise, +noise], so a sphere point
    stays within sqrt(3)*noise of unit norm.  Dumbbell labels are computed
    from the jittered coordinates, so |x| > 0.5 <=> label 1 holds exactly.
    """
    rng = np.random.default_rng(spec.seed)
    clouds = []
    for class_id, name in enumerate(spec.generator):
        for _ in range(spec.samples_per_class):
            coords = _MAKERS[name](rng, spec.points)
            coords = coords + rng.uniform(-spec.noise, spec.noise,
                                          size=coords.shape)
            if name == "dumbbell":
                labels = (np.abs(coords[:, 0]) > 0.5).astype(np.int64)
            else:
                labels = np.int64(class_id)
            clouds.append(PointCloud(coords, labels=labels))
    return clouds


def dataset_hash(clouds):
    """Content hash over coordinates, features, and labels of every cloud."""
    h = hashlib.sha1()
    h.update(f"dataset {len(clouds)}\0".encode())
    for c in clouds:
        for arr in (c.coords, c.features):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        lab = np.atleast_1d(np.asarray(-1 if c.labels is None else c.labels))
        h.update(np.ascontiguousarray(lab, dtype=np.int64).tobytes())
    return h.hexdigest()


def cross_entropy(logits, labels):
    """Mean negative log-likelihood; logits (C,) or (L, C), labels int or (L,)."""
    if logits.data.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    l, c = logits.shape
    if labels.shape != (l,):
        raise ContractError(f"{labels.shape} labels for logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"labels outside [0, {c})")
    onehot = np.zeros((l, c), dtype=logits.data.dtype)
    onehot[np.arange(l), labels] = 1.0
    logp = T.log_softmax(logits, axis=-1)
    return T.neg(T.reduce_mean(T.reduce_sum(T.mul(logp, tensor(onehot)), axis=1)))


def _predict(network, cloud):
    logits = network.forward(cloud).data
    return np.argmax(logits, axis=-1)


def _dataset_metrics(network, dataset):
    preds = [_predict(network, c) for c in dataset]
    labels = [c.labels for c in dataset]
    return evaluate_metrics(preds, labels, network.config.task)


def train(network, dataset, epochs, lr, batch_size=4, seed=0, lr_min=0.0,
          log_path=None, stop_metric=None):
    """Minibatch gradient training; returns (network, per-epoch metric rows).

    Each row is {"epoch", "loss", "metric"} where the metric is overall
    accuracy for recognition and instance mean-IoU for segmentation.  A
    non-finite loss aborts with the gradient norms of the last completed
    step in the message.  stop_metric halts training after the first epoch
    whose metric reaches it.
    """
    if isinstance(network, NetworkConfig):
        network = PointNetwork(network, seed=seed)
    if not dataset:
        raise ContractError("empty dataset")
    if epochs < 0:
        raise ConfigError("epochs must be non-negative")
    store = network.store
    opt = Adam(store, lr=lr)
    rng = np.random.default_rng([seed, 0x7261696e])
    n = len(dataset)
    steps_per_epoch = math.ceil(n / batch_size)
    total_steps = max(epochs * steps_per_epoch, 1)
    metric_key = "oa" if network.config.task == "recognition" else "instance_miou"
    rows = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = order[b * batch_size:(b + 1) * batch_size]
            loss = None
            for i in batch:
                cloud = dataset[i]
                sample = cross_entropy(network.forward(cloud), cloud.labels)
                loss = sample if loss is None else T.add(loss, sample)
            loss = T.mul(loss, tensor(np.asarray(1.0 / len(batch),
                                                 dtype=loss.data.dtype)))
            value = float(loss.data)
            if not np.isfinite(value):
                # grads still hold the last completed step at this point
                raise DomainError(
                    f"non-finite loss {value} at epoch {epoch} step {step}; "
                    f"last-step gradient norms: {_grad_norm_report(store)}"
                )
            store.zero_grad()
            backward(loss)
            opt.step(lr=cosine_lr(step, total_steps, lr, lr_min))
            step += 1
            epoch_loss += value * len(batch)
        metrics = _dataset_metrics(network, dataset)
        rows.append({"epoch": epoch, "loss": epoch_loss / n,
                     "metric": metrics[metric_key]})
        if stop_metric is not None and rows[-1]["metric"] >= stop_metric:
            break
    if epochs == 0:
        metrics = _dataset_metrics(network, dataset)
        rows.append({"epoch": 0, "loss": float("nan"),
                     "metric": metrics[metric_key]})
    if log_path is not None:
        write_metric_log(rows, log_path)
    return network, rows


def _grad_norm_report(store):
    parts = {}
    for name, p in store.params.items():
        group = name.split(".")[0]
        if p.grad is not None:
            parts[group] = parts.get(group, 0.0) + float((p.grad ** 2).sum())
    head = {k: round(math.sqrt(v), 6) for k, v in sorted(parts.items())}
    return f"global={grad_global_norm(store):.6f} per-group={head}"


def write_metric_log(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss", "metric"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["loss"]), repr(r["metric"])])


def write_run_manifest(path, config, seed, dataset):
    doc = {"config": config.to_dict(), "seed": int(seed),
           "dataset_sha1": dataset_hash(dataset)}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# Metrics


def _confusion(preds, labels, c):
    m = np.zeros((c, c), dtype=np.int64)
    for p, t in zip(preds, labels):
        m[t, p] += 1
    return m


def evaluate_metrics(preds, labels, task):
    """Accuracy and IoU metrics over aligned prediction/label collections.

    recognition: preds and labels are flat class-id sequences; returns
    {"oa"}.  segmentation: preds and labels are per-instance integer arrays;
    returns {"oa"} over all points, {"instance_miou"} (per-instance IoU mean
    over parts present in that instance, then over instances), and
    {"mean_iou"} (per-class IoU over the pooled points, then over classes).
    IoU classes count as present when they appear in labels or predictions.
    """
    if task == "recognition":
        preds = np.asarray(preds, dtype=np.int64).reshape(-1)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if preds.size == 0:
            raise ContractError("empty prediction set")
        if preds.shape != labels.shape:
            raise ContractError(f"{preds.shape} predictions for {labels.shape} labels")
        return {"oa": float((preds == labels).mean())}
    if task != "segmentation":
        raise ConfigError(f"unknown task {task!r}")
    if len(preds) == 0:
        raise ContractError("empty prediction set")
    if len(preds) != len(labels):
        raise ContractError(f"{len(preds)} instances for {len(labels)} label sets")
    preds = [np.asarray(p, dtype=np.int64).reshape(-1) for p in preds]
    labels = [np.asarray(t, dtype=np.int64).reshape(-1) for t in labels]
    per_instance = []
    for p, t in zip(preds, labels):
        if p.shape != t.shape:
            raise ContractError(f"{p.shape} predictions for {t.shape} labels")
        per_instance.append(np.mean([_iou(p, t, c) for c in _present(p, t)]))
    flat_p = np.concatenate(preds)
    flat_t = np.concatenate(labels)
    mean_iou = np.mean([_iou(flat_p, flat_t, c) for c in _present(flat_p, flat_t)])
    return {
        "oa": float((flat_p == flat_t).mean()),
        "instance_miou": float(np.mean(per_instance)),
        "mean_iou": float(mean_iou),
    }


def _present(p, t):
    return np.union1d(np.unique(p), np.unique(t))


def _iou(p, t, c):
    inter = np.sum((p == c) & (t == c))
    union = np.sum((p == c) | (t == c))
    return inter / union


# ---------------------------------------------------------------------------
# Gradient-check driver


def gradcheck_config(task="recognition"):
    """Default check target: full block wiring, under 10k parameters."""
    stages = (StageConfig(blocks=1, width=6, n=3, g=2, d=2, k=4),)
    return NetworkConfig(stages=stages, task=task, num_classes=3, h=6)


def gradcheck(config=None, tolerance=1e-4, seed=0, points=12, entries_per_group=4,
              h=1e-5, mutate=None):
    """Central-difference check of the whole forward/backward at float64.

    Builds a network from config (which should stay under ~10k parameters),
    drives a cross-entropy loss on one random cloud, and compares tape
    gradients against central differences on a seeded sample of entries per
    parameter tensor.  mutate(network) runs before the check; it exists for
    diagnostics such as zeroing layers or corrupting a value on purpose.

    Returns {"groups": name -> max rel. error, "max_err", "tolerance",
    "passed", "params"}.
    """
    if config is None:
        config = gradcheck_config()
    network = PointNetwork(config, seed=seed, dtype=np.float64)
    if mutate is not None:
        mutate(network)
    rng = np.random.default_rng([seed, 0x67636b])
    coords = rng.normal(size=(points, 3))
    feats = rng.normal(size=(points, config.in_features))
    if config.task == "recognition":
        labels = int(rng.integers(0, config.num_classes))
    else:
        labels = rng.integers(0, config.num_classes, size=points)
    cloud = PointCloud(coords, feats, labels)

    def loss_value():
        return cross_entropy(network.forward(cloud), cloud.labels)

    network.store.zero_grad()
    backward(loss_value())
    report = {}
    for name, p in network.store.params.items():
        grad = np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        if flat.size <= entries_per_group:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=entries_per_group, replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_value().data)
            flat[i] = orig - h
            fm = float(loss_value().data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_err(float(grad[i]), fd))
        report[name] = worst
    max_err = max(report.values())
    return {"groups": report, "max_err": max_err, "tolerance": tolerance,
            "passed": max_err < tolerance, "params": network.store.count()}


def _rel_err(a, b, floor=1e-5):
    # below the floor, central differences at h=1e-5 are dominated by
    # cancellation noise (~1e-11 absolute), so compare absolutely there
    diff = abs(a - b)
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0 if diff < floor else diff / floor
    return diff / scale


# ---------------------------------------------------------------------------
# Ablations


FACTORS = ("axes", "structure", "grouping", "prompt", "posemb")

DEFAULT_LEVELS = {
    "axes": ("None", "X", "Y", "Z", "XY", "XZ", "YZ", "XYZ"),
    "structure": ("chained", "parallel"),
    "grouping": (1, 2, 3, 6, 9),
    "prompt": (True, False),
    "posemb": (True, False),
}


@dataclass
class AblationPlan:
    """One varied factor over a shared base config, dataset, and seed."""

    factor: str
    levels: tuple = None
    repetitions: int = 1
    seed: int = 0
    base_config: NetworkConfig = None
    data: SyntheticSpec = None
    epochs: int = 1
    lr: float = 1e-3

    def __post_init__(self):
        if self.factor not in FACTORS:
            raise ConfigError(f"unknown factor {self.factor!r}, expected {FACTORS}")
        if self.levels is None:
            self.levels = DEFAULT_LEVELS[self.factor]
        self.levels = tuple(self.levels)
        if not self.levels:
            raise ConfigError("ablation needs at least one level")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be positive")
        if self.base_config is None:
            self.base_config = ablation_base_config()
        if self.data is None:
            self.data = SyntheticSpec(("sphere", "cube", "cylinder"),
                                      points=48, samples_per_class=2,
                                      seed=self.seed)


def ablation_base_config():
    """Width 18 makes E=36 divisible by every grouping level 1,2,3,6,9."""
    stages = (StageConfig(blocks=1, width=18, n=4, g=1, d=2, k=4),)
    return NetworkConfig(stages=stages, task="recognition", num_classes=3, h=18)


def apply_level(config, factor, level):
    """Base config with exactly one factor changed."""
    doc = config.to_dict()
    if factor == "axes":
        if level in (None, "None", ""):
            doc["axes"] = []
        else:
            letters = [ch for ch in str(level)]
            bad = [ch for ch in letters if ch not in ("X", "Y", "Z")]
            if bad:
                raise ConfigError(f"unknown axes level {level!r}")
            doc["axes"] = letters
    elif factor == "structure":
        doc["structure"] = level
    elif factor == "grouping":
        for st in doc["stages"]:
            st["g"] = int(level)
    elif factor == "prompt":
        doc["prompt"] = bool(level)
    elif factor == "posemb":
        doc["posemb"] = bool(level)
    else:
        raise ConfigError(f"unknown factor {factor!r}")
    return NetworkConfig.from_dict(doc)


def run_ablation(plan, csv_path=None):
    """Train every level on the shared dataset; report, never rank.

    Returns one row per (level, repetition) with the level's param count,
    final loss, and final metric.  Metric orderings between levels are not
    asserted anywhere: at this scale they are noise.
    """
    dataset = generate(plan.data)
    rows = []
    for level in plan.levels:
        config = apply_level(plan.base_config, plan.factor, level)
        params = count_params_flops(config)["params"]
        for rep in range(plan.repetitions):
            run_seed = plan.seed + rep
            network = PointNetwork(config, seed=run_seed)
            _, log = train(network, dataset, plan.epochs, plan.lr,
                           seed=run_seed)
            rows.append({
                "factor": plan.factor,
                "level": str(level),
                "rep": rep,
                "params": params,
                "loss": log[-1]["loss"],
                "metric": log[-1]["metric"],
            })
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["factor", "level", "rep",
                                              "params", "loss", "metric"])
            w.writeheader()
            w.writerows(rows)
    return rows
