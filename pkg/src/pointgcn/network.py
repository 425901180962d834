"""Stacked edge-convolution networks in baseline and accelerated modes.

Baseline runs a KNN search before every layer and the gather-then-MLP
convolution. Accelerated mode builds one neighbor pool per block of
shareholder layers, samples each layer's neighbors from it, and uses the
shuffled convolution. ``accel-s1`` and ``accel-s2`` enable one of the two
changes each.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_features, check_positive_int
from .autodiff import Tape
from .graphconv import ConvParams, edgeconv_baseline, edgeconv_shuffled, leaky_relu
from .knn import build_pool, knn_search, sample_neighbors
from .rng import derive_seed

logger = logging.getLogger(__name__)

MODES = ("baseline", "accelerated", "accel-s1", "accel-s2")
SHARED_KNN_MODES = ("accelerated", "accel-s1")
SHUFFLED_MODES = ("accelerated", "accel-s2")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class BlockSpec:
    """``n`` layers sharing one neighbor search, with output widths ``widths``."""

    n: int
    K: int
    widths: list
    P: int = 0
    dynamic: bool = True

    def validate(self):
        check_positive_int(self.n, "n")
        check_positive_int(self.K, "K")
        check_positive_int(self.P, "P", minimum=0)
        if len(self.widths) != self.n:
            raise ValueError(f"block has n={self.n} layers but {len(self.widths)} widths")
        for w in self.widths:
            check_positive_int(w, "layer width")


@dataclass
class HeadSpec:
    hidden: list = field(default_factory=lambda: [64])
    classes: int = 3
    pool: str = "max"

    def validate(self):
        if self.pool != "max":
            raise ValueError(f"only max pooling is supported, got {self.pool!r}")
        check_positive_int(self.classes, "classes")
        for w in self.hidden:
            check_positive_int(w, "hidden width")


@dataclass
class NetworkSpec:
    """Declarative description of a stacked GCN.

    JSON form::

        {"in_dim": 3, "mode": "accelerated", "seed": 0,
         "blocks": [{"n": 2, "K": 20, "P": 10, "widths": [64, 64], "dynamic": true}],
         "head": {"hidden": [64], "classes": 3, "pool": "max"}}

    Optional keys: ``points`` (default N for cost reports), ``knn_method``
    (``exact`` or ``fast``), ``keep_self`` (always retain self when sampling).
    """

    blocks: list
    head: HeadSpec = None
    mode: str = "baseline"
    seed: int = 0
    in_dim: int = 3
    points: int = None
    knn_method: str = "exact"
    keep_self: bool = False

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks]
        if isinstance(self.head, dict):
            self.head = HeadSpec(**self.head)

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.blocks:
            raise ValueError("a network needs at least one block")
        if self.knn_method not in ("exact", "fast"):
            raise ValueError(f"knn_method must be 'exact' or 'fast', got {self.knn_method!r}")
        check_positive_int(self.in_dim, "in_dim")
        for b in self.blocks:
            b.validate()
        if self.head is not None:
            self.head.validate()
        return self

    @property
    def n_layers(self):
        return sum(b.n for b in self.blocks)

    def layer_widths(self):
        """(in, out) widths of every conv layer in order."""
        d, out = self.in_dim, []
        for b in self.blocks:
            for M in b.widths:
                out.append((d, M))
                d = M
        return out

    def with_mode(self, mode):
        data = self.to_dict()
        data["mode"] = mode
        return NetworkSpec.from_dict(data)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown NetworkSpec keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def dgcnn_like_spec(mode="baseline", K=40, P=None, layers_per_block=2, classes=40, points=2048):
    """Four edge convolutions of widths 64/64/128/256, grouped into shareholder blocks."""
    widths = [64, 64, 128, 256]
    P = K // 2 if P is None else P
    blocks = [
        BlockSpec(n=len(chunk), K=K, P=P, widths=chunk)
        for chunk in (widths[i:i + layers_per_block] for i in range(0, len(widths), layers_per_block))
    ]
    return NetworkSpec(blocks=blocks, head=HeadSpec(hidden=[256], classes=classes),
                       mode=mode, points=points).validate()


def p_sweep(K):
    """Enlargement steps K/4, K/2, 3K/4, K rounded to integers."""
    return [int(round(K * f)) for f in (0.25, 0.5, 0.75, 1.0)]


# -- parameters -------------------------------------------------------------


def init_params(spec, seed=0, scale=1.0):
    """Gaussian He-style initialization keyed by ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for j, (d, M) in enumerate(spec.layer_widths()):
        std = scale * np.sqrt(2.0 / (2 * d))
        params[f"conv{j}.theta"] = rng.normal(0.0, std, (d, M))
        params[f"conv{j}.phi"] = rng.normal(0.0, std, (d, M))
        params[f"conv{j}.bias"] = np.zeros(M)
    if spec.head is not None:
        widths = [spec.layer_widths()[-1][1], *spec.head.hidden, spec.head.classes]
        for h, (a, c) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"head{h}.W"] = rng.normal(0.0, scale * np.sqrt(2.0 / a), (a, c))
            params[f"head{h}.b"] = np.zeros(c)
    return params


def check_params(spec, params):
    expected = init_params(spec, 0)
    for name, value in expected.items():
        if name not in params:
            raise KeyError(f"missing parameter {name!r}")
        if np.shape(params[name]) != value.shape:
            raise ValueError(f"parameter {name!r} has shape {np.shape(params[name])}, expected {value.shape}")


def conv_params(params, j):
    return ConvParams(params[f"conv{j}.theta"], params[f"conv{j}.phi"], params[f"conv{j}.bias"])


# -- neighbor schedule ------------------------------------------------------


def _layer_neighbors(spec, coords, layer_inputs, block_index, block, seed):
    """Yield neighbor tables for each layer of ``block``.

    ``layer_inputs`` is called with the layer position and returns that
    layer's input features (only used by dynamic baseline blocks).
    """
    K = block.K
    if spec.mode in SHARED_KNN_MODES:
        space = layer_inputs(1) if block.dynamic else coords
        pool = build_pool(space, K, block.P, block.n, method=spec.knn_method)
        block_seed = derive_seed(seed, block_index)
        for l in range(1, block.n + 1):
            yield sample_neighbors(pool, l, block_seed, keep_self=spec.keep_self).indices
    else:
        for l in range(1, block.n + 1):
            space = layer_inputs(l) if block.dynamic else coords
            yield knn_search(space, K, method=spec.knn_method).indices


# -- kernel forward ---------------------------------------------------------


def forward(spec, params, pc, seed=None, return_features=False):
    """Class logits for one point cloud.

    Args:
        spec: NetworkSpec.
        params: parameter dict as produced by :func:`init_params`.
        pc: (N, in_dim) coordinates or a PointCloud.
        seed: neighbor-sampling seed; defaults to ``spec.seed``.
        return_features: also return the per-layer features, input first.
    """
    spec.validate()
    check_params(spec, params)
    X = check_features(getattr(pc, "points", pc), name="point cloud")
    if X.shape[1] != spec.in_dim:
        raise ValueError(f"expected {spec.in_dim}-D points, got {X.shape[1]}")
    seed = spec.seed if seed is None else seed
    conv = edgeconv_shuffled if spec.mode in SHUFFLED_MODES else edgeconv_baseline
    coords = X
    feats = [X]
    j = 0
    for b, block in enumerate(spec.blocks):
        for nbrs in _layer_neighbors(spec, coords, lambda l: feats[-1], b, block, seed):
            feats.append(conv(feats[-1], nbrs, conv_params(params, j), agg="max", activation="leaky_relu"))
            j += 1
    if spec.head is None:
        logits = None
    else:
        g = feats[-1].max(axis=0)
        n_head = len(spec.head.hidden) + 1
        for h in range(n_head):
            g = g @ params[f"head{h}.W"] + params[f"head{h}.b"]
            if h < n_head - 1:
                g = leaky_relu(g)
        logits = g
    return (logits, feats) if return_features else logits


def predict_logits(spec, params, clouds, seed=None):
    return np.stack([forward(spec, params, pc, seed=seed) for pc in clouds])


# -- tape forward (training) ------------------------------------------------


def build_logits(tape, spec, nodes, X, seeds):
    """Record the batched forward pass on ``tape``; return the logits node.

    ``X`` is (B, N, d); ``seeds`` holds one sampling seed per cloud.
    Neighbor tables are data, computed from current node values.
    """
    B = X.shape[0]
    x = tape.const(X)
    j = 0
    for b, block in enumerate(spec.blocks):
        holder = {"x": x}
        per_cloud = [
            _layer_neighbors(spec, X[c], lambda l, c=c: holder["x"].value[c], b, block, seeds[c])
            for c in range(B)
        ]
        for _ in range(block.n):
            x = holder["x"]
            idx = np.stack([next(gen) for gen in per_cloud])
            theta, phi, bias = nodes[f"conv{j}.theta"], nodes[f"conv{j}.phi"], nodes[f"conv{j}.bias"]
            if spec.mode in SHUFFLED_MODES:
                u = tape.matmul(x, theta)
                v = tape.matmul(x, tape.sub(phi, theta))
                y = tape.add(tape.max_neighbors(tape.gather(u, idx)), v)
            else:
                local = tape.center_subtract(tape.gather(x, idx), x)
                edges = tape.edge_concat(local, x)
                w = tape.stack_rows(theta, phi)
                y = tape.max_neighbors(tape.matmul(edges, w))
            holder["x"] = tape.leaky_relu(tape.add_bias(y, bias))
            j += 1
        x = holder["x"]
    g = tape.global_max_pool(x)
    n_head = len(spec.head.hidden) + 1
    for h in range(n_head):
        g = tape.add_bias(tape.matmul(g, nodes[f"head{h}.W"]), nodes[f"head{h}.b"])
        if h < n_head - 1:
            g = tape.leaky_relu(g)
    return g


def network_expression(spec):
    """Loss expression ``(tape, nodes, (X, y, seeds)) -> loss`` for autodiff."""

    def expression(tape, nodes, inputs):
        X, y, seeds = inputs
        return tape.softmax_xent(build_logits(tape, spec, nodes, X, seeds), y)

    return expression


def fit_params(spec, X, y, *, epochs=10, step_size=0.01, momentum=0.9, batch_size=16,
               seed=0, freeze_sampling=False, params=None):
    """Mini-batch gradient descent with momentum on (B, N, d) clouds.

    Sampling seeds are redrawn every step (keyed by step and cloud index)
    unless ``freeze_sampling`` is set.

    Returns:
        (params, loss history per epoch)
    """
    spec.validate()
    params = {k: v.copy() for k, v in (params or init_params(spec, seed)).items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    expression = network_expression(spec)
    rng = np.random.default_rng(derive_seed(seed, 0xBA7C))
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            batch = order[start:start + batch_size]
            pass_seed = derive_seed(seed) if freeze_sampling else derive_seed(seed, step)
            seeds = [derive_seed(pass_seed, int(c)) for c in batch]
            tape = Tape()
            nodes = {k: tape.param(k, v) for k, v in params.items()}
            loss = expression(tape, nodes, (X[batch], y[batch], seeds))
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, step {step}; "
                    f"try a smaller step size (currently {step_size})"
                )
            grads = tape.backward()
            for k in params:
                velocity[k] = momentum * velocity[k] - step_size * grads[k]
                params[k] += velocity[k]
            total += value * len(batch)
            step += 1
        history.append(total / len(X))
        logger.debug("epoch %d loss %.4f", epoch, history[-1])
    return params, history


# -- synthetic data ---------------------------------------------------------


SHAPES = ("sphere", "cube", "plane", "cylinder", "torus")


@dataclass
class TrainConfig:
    """Synthetic-dataset and optimizer settings for :func:`train_synthetic`."""

    classes: int = 3
    points: int = 256
    noise: float = 0.0
    train_size: int = 400
    test_size: int = 100
    epochs: int = 10
    step_size: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0
    runs: int = 5
    rotate: bool = False
    freeze_sampling: bool = False

    def validate(self):
        if not 1 <= self.classes <= len(SHAPES):
            raise ValueError(f"classes must be in 1..{len(SHAPES)}, got {self.classes}")
        for name in ("points", "train_size", "test_size", "epochs", "batch_size", "runs"):
            check_positive_int(getattr(self, name), name)
        if self.noise < 0 or self.step_size <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("noise >= 0, step_size > 0 and 0 <= momentum < 1 are required")
        return self

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**data).validate()


def sample_shape(shape, n, rng):
    if shape == "sphere":
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    if shape == "cube":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = rng.integers(0, 3, size=n)
        pts[np.arange(n), axis] = rng.choice([-1.0, 1.0], size=n)
        return pts
    if shape == "plane":
        pts = rng.uniform(-1.0, 1.0, size=(n, 3))
        pts[:, 2] = 0.0
        return pts
    if shape == "cylinder":
        t = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([np.cos(t), np.sin(t), rng.uniform(-1.0, 1.0, n)])
    if shape == "torus":
        t, s = rng.uniform(0, 2 * np.pi, (2, n))
        r = 0.7 + 0.3 * np.cos(s)
        return np.column_stack([r * np.cos(t), r * np.sin(t), 0.3 * np.sin(s)])
    raise ValueError(f"unknown shape {shape!r}")


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def generate_synthetic_dataset(cfg, size=None, seed=None):
    """Labeled clouds ``(X, y)`` with ``X`` of shape (size, points, 3).

    Class ``c`` is shape ``SHAPES[c]``; counts are balanced, with any
    remainder going to the lowest class labels.
    """
    cfg.validate()
    size = cfg.train_size if size is None else size
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    labels = np.arange(size) % cfg.classes
    rng.shuffle(labels)
    X = np.empty((size, cfg.points, 3))
    for c, label in enumerate(labels):
        pts = sample_shape(SHAPES[label], cfg.points, rng)
        if cfg.rotate:
            pts = pts @ _random_rotation(rng).T
        if cfg.noise > 0:
            pts = pts + rng.normal(0.0, cfg.noise, pts.shape)
        X[c] = pts
    return X, labels


def train_synthetic(spec, cfg):
    """Train ``cfg.runs`` seeded models on one synthetic train/test split.

    Returns a dict with per-run accuracies, their mean and variance, and the
    parameters of the last run.
    """
    cfg.validate()
    spec = NetworkSpec.from_dict({**spec.to_dict(), "head": {**asdict(spec.head or HeadSpec()), "classes": cfg.classes}})
    X_train, y_train = generate_synthetic_dataset(cfg, cfg.train_size, derive_seed(cfg.seed, 1))
    X_test, y_test = generate_synthetic_dataset(cfg, cfg.test_size, derive_seed(cfg.seed, 2))
    runs = []
    params = None
    for r in range(cfg.runs):
        run_seed = derive_seed(cfg.seed, 100 + r)
        params, history = fit_params(
            spec, X_train, y_train, epochs=cfg.epochs, step_size=cfg.step_size,
            momentum=cfg.momentum, batch_size=cfg.batch_size, seed=run_seed,
            freeze_sampling=cfg.freeze_sampling,
        )
        train_acc = float(np.mean(predict_logits(spec, params, X_train, seed=run_seed).argmax(1) == y_train))
        test_acc = float(np.mean(predict_logits(spec, params, X_test, seed=run_seed).argmax(1) == y_test))
        runs.append({"run": r, "seed": run_seed, "train_accuracy": train_acc,
                     "test_accuracy": test_acc, "final_loss": history[-1]})
        logger.info("run %d: train %.3f test %.3f", r, train_acc, test_acc)
    acc = np.array([run["test_accuracy"] for run in runs])
    return {
        "mode": spec.mode,
        "runs": runs,
        "mean_test_accuracy": float(acc.mean()),
        "var_test_accuracy": float(acc.var()),
        "params": params,
        "spec": spec,
    }
