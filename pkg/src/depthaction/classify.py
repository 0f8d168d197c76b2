"""Histogram-kernel SVM training, prediction and cross-validated tuning.

The similarity between two nonnegative histograms is a homogeneous
chi-square kernel of degree gamma, summed over bins:

    f(a, b) = (a*b)^(gamma/2) * sech(log(b/a) / 2)   for a, b > 0
            = 2 * (a*b)^((gamma+1)/2) / (a + b)       (same thing)

and f = 0 whenever a*b = 0; gamma = 1 gives the familiar 2ab/(a+b).
One-vs-rest binary problems are solved by dual coordinate ascent on the
precomputed Gram matrix, with a constant added to the kernel so the bias
is learned as part of the dual.
"""

import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from .encode import Codebook, Representation

MODEL_MAGIC = b"MODL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class KernelParams:
    gamma: float = 0.8

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def chi2_kernel(x, y, gamma: float = 0.8) -> float:
    """Homogeneous chi-square similarity between two nonnegative vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if (x < 0).any() or (y < 0).any():
        raise ValueError("histogram entries must be nonnegative")
    m = (x > 0) & (y > 0)
    a, b = x[m], y[m]
    return float(np.sum(2.0 * (a * b) ** ((gamma + 1.0) / 2.0) / (a + b)))


def chi2_gram(xs: np.ndarray, ys: np.ndarray, gamma: float = 0.8) -> np.ndarray:
    """Gram matrix of the chi-square kernel between two histogram stacks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 2 or ys.ndim != 2 or xs.shape[1] != ys.shape[1]:
        raise ValueError("expected (n, d) and (m, d) stacks")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if (xs < 0).any() or (ys < 0).any():
        raise ValueError("histogram entries must be nonnegative")
    p = (gamma + 1.0) / 2.0
    out = np.empty((len(xs), len(ys)))
    for i, row in enumerate(xs):
        prod = row[None, :] * ys
        tot = row[None, :] + ys
        terms = np.where(prod > 0, 2.0 * prod**p / np.where(tot > 0, tot, 1.0), 0.0)
        out[i] = terms.sum(axis=1)
    return out


@dataclass
class TrainedModel:
    """One-vs-rest kernel SVM plus everything needed to encode new input."""

    classes: list
    support_values: np.ndarray  # (m, dim) histogram rows
    layout: tuple
    dual_coefs: np.ndarray  # (n_classes, m), entries alpha_i * y_i
    bias: np.ndarray  # (n_classes,)
    kernel: KernelParams
    z_ref: float = 0.0
    codebooks: list = field(default_factory=list)
    params: dict = field(default_factory=dict)


def _sdca_binary(kernel_matrix, y, c_reg, rng, max_epochs, gap_tol):
    n = len(y)
    alpha = np.zeros(n)
    f = np.zeros(n)  # decision values K @ (alpha * y)
    diag = np.diag(kernel_matrix).copy()
    prev_dual = -np.inf
    for _ in range(max_epochs):
        for i in rng.permutation(n):
            if diag[i] <= 0:
                continue
            delta = (1.0 - y[i] * f[i]) / diag[i]
            new = min(max(alpha[i] + delta, 0.0), c_reg)
            step = new - alpha[i]
            if step != 0.0:
                alpha[i] = new
                f += step * y[i] * kernel_matrix[i]
        f = kernel_matrix @ (alpha * y)
        w2 = float(np.dot(alpha * y, f))
        dual = float(alpha.sum()) - 0.5 * w2
        assert dual >= prev_dual - 1e-8 * max(1.0, abs(dual)), "dual objective decreased"
        prev_dual = dual
        primal = 0.5 * w2 + c_reg * float(np.maximum(0.0, 1.0 - y * f).sum())
        if primal - dual < gap_tol * n:
            break
    return alpha


def train_svm(reps, labels, c_reg: float, kernel: KernelParams, seed: int,
              max_epochs: int = 200, gap_tol: float = 1e-3) -> TrainedModel:
    """Train one-vs-rest SVMs by dual coordinate ascent on the Gram matrix.

    Each binary problem stops when its duality gap falls below
    gap_tol * n or after max_epochs. The epoch order is a seeded
    permutation, so a fixed seed gives bit-identical coefficients.
    """
    reps = list(reps)
    labels = list(labels)
    if len(reps) != len(labels) or not reps:
        raise ValueError("need matching nonempty representations and labels")
    x = np.stack([r.values for r in reps])
    if np.isnan(x).any():
        raise ValueError("representations contain NaN")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    layout = reps[0].layout
    gram = chi2_gram(x, x, kernel.gamma)
    gram_aug = gram + 1.0  # constant feature carries the bias
    n = len(labels)
    coefs = np.zeros((len(classes), n))
    bias = np.zeros(len(classes))
    label_arr = np.asarray(labels)
    for ci, cls in enumerate(classes):
        y = np.where(label_arr == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        alpha = _sdca_binary(gram_aug, y, c_reg, rng, max_epochs, gap_tol)
        coefs[ci] = alpha * y
        bias[ci] = coefs[ci].sum()
    used = np.abs(coefs).max(axis=0) > 0
    return TrainedModel(
        classes=classes,
        support_values=x[used].copy(),
        layout=layout,
        dual_coefs=coefs[:, used].copy(),
        bias=bias,
        kernel=kernel,
    )


def decision_values(model: TrainedModel, rep: Representation) -> np.ndarray:
    if rep.layout != tuple(model.layout):
        raise ValueError("representation layout does not match the model")
    if model.support_values.size == 0:
        return model.bias.copy()
    k = chi2_gram(rep.values[None, :], model.support_values, model.kernel.gamma)[0]
    return model.dual_coefs @ k + model.bias


def predict(model: TrainedModel, rep: Representation):
    """Best class plus the per-class decision scores; ties pick the lowest id."""
    scores = decision_values(model, rep)
    return model.classes[int(scores.argmax())], scores


def evaluate(model: TrainedModel, test_pairs):
    """Accuracy and a confusion matrix (rows true, columns predicted)."""
    test_pairs = list(test_pairs)
    if not test_pairs:
        raise ValueError("empty test set")
    index = {c: i for i, c in enumerate(model.classes)}
    confusion = np.zeros((len(model.classes), len(model.classes)), np.int64)
    correct = 0
    for rep, label in test_pairs:
        if label not in index:
            raise ValueError(f"test label {label} unseen in training")
        pred, _ = predict(model, rep)
        confusion[index[label], index[pred]] += 1
        correct += pred == label
    return correct / len(test_pairs), confusion


def param_grid(grids: dict) -> list:
    """Cartesian product of a {name: values} dict, in key then value order."""
    names = list(grids)
    combos = itertools.product(*(grids[n] for n in names))
    return [dict(zip(names, combo)) for combo in combos]


def grid_search(subjects, grid, folds: int, eval_fn, seed: int):
    """Pick the grid point with the best mean accuracy over subject folds.

    Subjects are shuffled deterministically and split into `folds` groups;
    eval_fn(params, train_indices, val_indices) must return an accuracy.
    Ties keep the earliest grid entry. Returns (best_params, best_score,
    table of (params, score)).
    """
    subjects = np.asarray(subjects)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(subjects) < folds:
        raise ValueError("fewer samples than folds")
    unique = sorted(set(subjects.tolist()))
    if len(unique) < folds:
        raise ValueError("fewer subjects than folds")
    if not grid:
        raise ValueError("empty grid")
    rng = np.random.default_rng(seed)
    shuffled = [unique[i] for i in rng.permutation(len(unique))]
    groups = np.array_split(np.asarray(shuffled), folds)
    all_idx = np.arange(len(subjects))
    table = []
    best = None
    for params in grid:
        accs = []
        for g in groups:
            val = np.isin(subjects, g)
            accs.append(eval_fn(params, all_idx[~val], all_idx[val]))
        score = float(np.mean(accs))
        table.append((params, score))
        if best is None or score > best[1]:
            best = (params, score)
    return best[0], best[1], table


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def take_str(self) -> str:
        (n,) = self.take("<H")
        raw = self.data[self.pos : self.pos + n]
        self.pos += n
        return raw.decode("utf-8")

    def take_f64(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += count * 8
        return arr.astype(np.float64)


def write_model(path, model: TrainedModel) -> None:
    """Length-prefixed binary model dump (counts u32, reals f64, LE)."""
    out = [struct.pack("<4sH", MODEL_MAGIC, MODEL_VERSION)]
    out.append(struct.pack("<I", len(model.classes)))
    out.extend(struct.pack("<i", int(c)) for c in model.classes)
    out.append(struct.pack("<dd", model.kernel.gamma, model.z_ref))
    out.append(struct.pack("<I", len(model.layout)))
    for name, off, length in model.layout:
        out.append(_pack_str(name))
        out.append(struct.pack("<II", off, length))
    m, dim = model.support_values.shape if model.support_values.size else (0, 0)
    out.append(struct.pack("<II", m, dim))
    out.append(np.ascontiguousarray(model.support_values, dtype="<f8").tobytes())
    out.append(np.ascontiguousarray(model.dual_coefs, dtype="<f8").tobytes())
    out.append(np.ascontiguousarray(model.bias, dtype="<f8").tobytes())
    out.append(struct.pack("<I", len(model.codebooks)))
    for cb in model.codebooks:
        out.append(_pack_str(cb.kind))
        out.append(struct.pack("<IIQ", cb.k, cb.dim, cb.seed))
        out.append(np.ascontiguousarray(cb.centroids, dtype="<f8").tobytes())
    items = sorted(model.params.items())
    out.append(struct.pack("<I", len(items)))
    for key, value in items:
        out.append(_pack_str(key))
        if isinstance(value, (tuple, list)):
            out.append(struct.pack("<BI", 2, len(value)))
            out.extend(struct.pack("<d", float(v)) for v in value)
        elif isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            out.append(struct.pack("<Bq", 1, int(value)))
        else:
            out.append(struct.pack("<Bd", 0, float(value)))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_model(path) -> TrainedModel:
    reader = _Reader(open(path, "rb").read())
    magic, version = reader.take("<4sH")
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ValueError(f"{path}: not a model file")
    (n_classes,) = reader.take("<I")
    classes = [reader.take("<i")[0] for _ in range(n_classes)]
    gamma, z_ref = reader.take("<dd")
    (n_seg,) = reader.take("<I")
    layout = []
    for _ in range(n_seg):
        name = reader.take_str()
        off, length = reader.take("<II")
        layout.append((name, off, length))
    m, dim = reader.take("<II")
    support = reader.take_f64(m * dim).reshape(m, dim)
    coefs = reader.take_f64(n_classes * m).reshape(n_classes, m)
    bias = reader.take_f64(n_classes).copy()
    (n_cb,) = reader.take("<I")
    codebooks = []
    for _ in range(n_cb):
        kind = reader.take_str()
        k, d, seed = reader.take("<IIQ")
        centroids = reader.take_f64(k * d).reshape(k, d)
        codebooks.append(Codebook(centroids, seed=int(seed), kind=kind))
    (n_params,) = reader.take("<I")
    params = {}
    for _ in range(n_params):
        key = reader.take_str()
        (tag,) = reader.take("<B")
        if tag == 2:
            (count,) = reader.take("<I")
            params[key] = tuple(reader.take("<d")[0] for _ in range(count))
        elif tag == 1:
            params[key] = reader.take("<q")[0]
        else:
            params[key] = reader.take("<d")[0]
    return TrainedModel(
        classes=classes,
        support_values=support,
        layout=tuple(layout),
        dual_coefs=coefs,
        bias=bias,
        kernel=KernelParams(gamma),
        z_ref=z_ref,
        codebooks=codebooks,
        params=params,
    )


def write_confusion(path, classes, confusion: np.ndarray) -> None:
    """CSV confusion matrix with a header row and row labels."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("true\\pred," + ",".join(str(c) for c in classes) + "\n")
        for cls, row in zip(classes, confusion):
            fh.write(str(cls) + "," + ",".join(str(int(v)) for v in row) + "\n")
