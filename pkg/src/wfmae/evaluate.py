"""Representation-quality evaluation: probing, fine-tuning, metrics,
few-shot subsets, PCA / exact t-SNE embedding, and the ablation sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, cross_entropy
from .dasgen import WaterfallPlot
from .errors import ContractError, DataError, NumericFailure
from .model import MaeModel
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr
from .pipeline import TrainConfig, pretrain, video_like_tensors
from .stft import StftConfig, preprocess
from .tubes import TubeGrid, partition_tubes


# -- representation extraction -------------------------------------------------

def pool_representation(x: WaterfallPlot, model: MaeModel, stft_cfg: StftConfig,
                        grid: TubeGrid) -> np.ndarray:
    """Mask-free encode of all tubes, then arithmetic mean over the token axis."""
    return extract_representations([x], model, stft_cfg, grid)[0]


def extract_representations(plots: list[WaterfallPlot], model: MaeModel,
                            stft_cfg: StftConfig, grid: TubeGrid,
                            batch_size: int = 32) -> np.ndarray:
    tensors = [preprocess(x, stft_cfg) for x in plots]
    tubes = np.stack([partition_tubes(t, grid) for t in tensors])
    return pool_tubes(tubes, model, batch_size)


def pool_tubes(tubes: np.ndarray, model: MaeModel, batch_size: int = 32) -> np.ndarray:
    n = grid_tokens = tubes.shape[1]
    if grid_tokens != model.config.n_tokens:
        raise ContractError(
            f"tube count {grid_tokens} != model token count {model.config.n_tokens}"
        )
    positions = np.arange(n)
    out = []
    for start in range(0, len(tubes), batch_size):
        chunk = tubes[start:start + batch_size]
        pos = np.broadcast_to(positions, (len(chunk), n))
        z = model.forward_visible(chunk, pos)
        out.append(z.data.mean(axis=1))
    return np.concatenate(out, axis=0)


# -- classifier head -----------------------------------------------------------

class ClassifierHead:
    """Single linear map from encoder width to class count; zero-init."""

    def __init__(self, width: int, n_classes: int, dtype=np.float32):
        self.n_classes = n_classes
        self.w = Parameter(np.zeros((width, n_classes)), "cls.w", dtype=dtype)
        self.b = Parameter(np.zeros(n_classes), "cls.b", dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def logits(self, reps) -> Tensor:
        reps = reps if isinstance(reps, Tensor) else Tensor(np.asarray(reps, dtype=self.w.dtype))
        return reps @ self.w + self.b


@dataclass
class ProbeConfig:
    epochs: int = 200
    lr: float = 0.05
    weight_decay: float = 0.0
    seed: int = 0


def train_linear_probe(train_reps: np.ndarray, train_labels: np.ndarray,
                       test_reps: np.ndarray, test_labels: np.ndarray,
                       n_classes: int, cfg: ProbeConfig | None = None
                       ) -> tuple[ClassifierHead, float]:
    """Cross-entropy over head parameters only; returns held-out error rate."""
    cfg = cfg or ProbeConfig()
    train_labels = np.asarray(train_labels)
    present = np.unique(train_labels)
    missing = sorted(set(range(n_classes)) - set(present.tolist()))
    if missing:
        raise DataError(f"classes {missing} absent from the probe training set")
    head = ClassifierHead(train_reps.shape[1], n_classes)
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    for _ in range(cfg.epochs):
        for p in head.parameters():
            p.zero_grad()
        loss = cross_entropy(head.logits(train_reps), train_labels)
        if not np.isfinite(float(loss.data)):
            raise NumericFailure("non-finite probe loss")
        loss.backward()
        adamw_step(head.parameters(), state)
    er = error_rate(predict_logits(head.logits(test_reps).data), test_labels)
    return head, er


@dataclass
class FineTuneConfig:
    epochs: int = 50
    batch_size: int = 32
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(1e-5, 0.0, 4, 50))
    weight_decay: float = 0.05
    seed: int = 0

    @staticmethod
    def full_preset() -> "FineTuneConfig":
        return FineTuneConfig()


def fine_tune(tubes: np.ndarray, labels: np.ndarray, model: MaeModel,
              head: ClassifierHead, cfg: FineTuneConfig | None = None
              ) -> tuple[MaeModel, ClassifierHead, list[float]]:
    """Jointly minimize cross-entropy over encoder and head parameters.

    `tubes` is the pre-partitioned (n, N, C_p, T_p, F_p, D_i) training array.
    Returns the per-epoch loss curve alongside the trained model and head.
    """
    cfg = cfg or FineTuneConfig()
    labels = np.asarray(labels)
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(head.n_classes)) - present)
    if missing:
        raise DataError(f"classes {missing} absent from the fine-tune training set")
    n = tubes.shape[1]
    positions = np.arange(n)
    params = model.encoder_parameters() + head.parameters()
    state = OptimizerState(weight_decay=cfg.weight_decay)
    curve = []
    n_samples = len(tubes)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.schedule)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch,)))
        order = rng.permutation(n_samples)
        losses = []
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            for p in head.parameters():
                p.zero_grad()
            pos = np.broadcast_to(positions, (len(idx), n))
            z = model.forward_visible(tubes[idx], pos)
            pooled = z.mean(axis=1)
            loss = cross_entropy(head.logits(pooled), labels[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericFailure(f"non-finite fine-tune loss at epoch {epoch}")
            loss.backward()
            adamw_step(params, state, lr=lr)
            losses.append(value)
        curve.append(float(np.mean(losses)))
    return model, head, curve


def predict_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties break toward the lowest class index."""
    return np.argmax(logits, axis=-1)


def predict(x: WaterfallPlot, model: MaeModel, head: ClassifierHead,
            stft_cfg: StftConfig, grid: TubeGrid) -> int:
    rep = pool_representation(x, model, stft_cfg, grid)
    return int(predict_logits(head.logits(rep[None, :]).data)[0])


# -- metrics -------------------------------------------------------------------

def error_rate(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ContractError("predictions and labels must be equal-length and non-empty")
    return float(np.mean(predictions != labels))


def relative_improvement(er_a: float, er_b: float) -> float:
    """(ER_A - ER_B) / ER_A * 100; asymmetric by definition."""
    if er_a <= 0:
        raise ContractError("relative improvement needs a positive baseline error rate")
    return (er_a - er_b) / er_a * 100.0


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.min(initial=0) < 0 or labels.min(initial=0) < 0 \
            or predictions.max(initial=0) >= n_classes or labels.max(initial=0) >= n_classes:
        raise ContractError(f"class index out of range [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


def few_shot_subset(labels: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Indices of exactly k samples per class, without replacement."""
    labels = np.asarray(labels)
    if k < 1:
        raise ContractError("k per class must be >= 1")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise DataError(f"class {int(c)} has only {len(idx)} samples, need {k}")
        chosen.append(rng.choice(idx, size=k, replace=False))
    return np.sort(np.concatenate(chosen))


# -- embeddings ----------------------------------------------------------------

def pca_embed(vectors: np.ndarray, out_dims: int = 2) -> np.ndarray:
    """Mean-centered projection onto the top covariance eigenvectors."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) < 2:
        raise ContractError("PCA needs at least 2 vectors")
    if out_dims > vectors.shape[1]:
        raise ContractError(f"out_dims {out_dims} exceeds vector width {vectors.shape[1]}")
    centered = vectors - vectors.mean(axis=0)
    cov = centered.T @ centered / (len(vectors) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:out_dims]
    return centered @ eigvecs[:, order]


def conditional_probabilities(vectors: np.ndarray, perplexity: float,
                              tol: float = 1e-3, max_iter: int = 200
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Per-point gaussian bandwidths by bisection so the conditional entropy
    matches log2(perplexity) within tol. Returns (P conditional, entropies)."""
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    if d2.max() <= 0:
        raise DataError("degenerate input: all points identical")
    target = np.log2(perplexity)
    p = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        di = np.delete(d2[i], i)
        lo, hi = 0.0, np.inf
        beta = 1.0
        for _ in range(max_iter):
            w = np.exp(-di * beta)
            s = w.sum()
            if s <= 0:
                h = 0.0
                pi = w
            else:
                pi = w / s
                nz = pi > 0
                h = -np.sum(pi[nz] * np.log2(pi[nz]))
            if abs(h - target) <= tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == 0.0 else (beta + lo) / 2
        entropies[i] = h
        p[i, np.arange(n) != i] = pi
    return p, entropies


def tsne_embed(vectors: np.ndarray, perplexity: float = 40.0,
               learning_rate: float = 2000.0, iterations: int = 500,
               seed: int = 0, kl_interval: int = 10
               ) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Exact O(n^2) t-SNE to 2D; returns coordinates and the KL curve.

    Early exaggeration x4 for the first 100 iterations, momentum 0.5 then 0.8
    after iteration 250, adaptive per-coordinate gains, N(0, 1e-4^2) init.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if n < 10:
        raise ContractError("t-SNE needs at least 10 points")
    if not (3 <= perplexity < n / 3):
        raise ContractError(f"perplexity must lie in [3, n/3), got {perplexity}")
    cond, _ = conditional_probabilities(x, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, (n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    def q_dist(y_):
        sq = np.sum(y_ * y_, axis=1)
        num = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2.0 * (y_ @ y_.T), 0.0))
        np.fill_diagonal(num, 0.0)
        return num / num.sum(), num

    def kl(p_, q_):
        return float(np.sum(p_ * np.log(p_ / np.maximum(q_, 1e-12))))

    kl_curve: list[tuple[int, float]] = []
    for it in range(iterations):
        p_eff = p * 4.0 if it < 100 else p
        q, num = q_dist(y)
        if it % kl_interval == 0:
            kl_curve.append((it, kl(p, q)))
        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        momentum = 0.5 if it < 250 else 0.8
        flipped = np.sign(grad) != np.sign(update)
        gains = np.where(flipped, gains + 0.2, gains * 0.8)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    q, _ = q_dist(y)
    kl_curve.append((iterations, kl(p, q)))
    return y, kl_curve


# -- reports and sweeps --------------------------------------------------------

@dataclass
class EvalReport:
    error_rate: float
    confusion: np.ndarray
    per_class_counts: np.ndarray
    seed: int
    config_echo: dict = field(default_factory=dict)
    coords: np.ndarray | None = None

    def __post_init__(self):
        if not np.array_equal(self.confusion.sum(axis=1), self.per_class_counts):
            raise ContractError("confusion row sums must equal per-class counts")
        total = self.per_class_counts.sum()
        er = 1.0 - np.trace(self.confusion) / total
        if abs(er - self.error_rate) > 1e-12:
            raise ContractError("error rate inconsistent with the confusion matrix")


def make_report(predictions, labels, n_classes: int, seed: int = 0,
                config_echo: dict | None = None,
                coords: np.ndarray | None = None) -> EvalReport:
    matrix = confusion_matrix(predictions, labels, n_classes)
    return EvalReport(
        error_rate=error_rate(predictions, labels),
        confusion=matrix,
        per_class_counts=matrix.sum(axis=1),
        seed=seed,
        config_echo=dict(config_echo or {}),
        coords=coords,
    )


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"error_rate,{report.error_rate:.6f}\n")
        fh.write(f"seed,{report.seed}\n")
        for key, value in sorted(report.config_echo.items()):
            fh.write(f"config.{key},{value}\n")
        fh.write("confusion\n")
        for row in report.confusion:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def write_coords_csv(coords: np.ndarray, labels, path) -> None:
    with open(path, "w") as fh:
        fh.write("index,class,x,y\n")
        for i, ((cx, cy), lab) in enumerate(zip(coords, labels)):
            fh.write(f"{i},{int(lab)},{cx:.6g},{cy:.6g}\n")


AXIS_MASK_RATIO = "mask-ratio"
AXIS_MASK_STRATEGY = "mask-strategy"
AXIS_STFT_FORMAT = "stft-format"
AXIS_STAGE1 = "stage1-on-off"

DEFAULT_AXIS_VALUES = {
    AXIS_MASK_RATIO: [0.70, 0.80, 0.90, 0.95, 0.98],
    AXIS_MASK_STRATEGY: ["random", "spatial", "temporal", "frequency"],
    AXIS_STFT_FORMAT: ["magnitude", "magnitude_phase", "real_imag"],
    AXIS_STAGE1: ["on", "off"],
}


@dataclass
class SweepCell:
    axis: str
    value: object
    seed: int
    probe_er: float
    finetune_er: float


def ablation_sweep(axis: str, values, seeds: list[int],
                   train_plots: list[WaterfallPlot], train_labels: np.ndarray,
                   test_plots: list[WaterfallPlot], test_labels: np.ndarray,
                   n_classes: int, stft_cfg: StftConfig, tube_extents: tuple[int, int, int],
                   model_factory, pretrain_cfg: TrainConfig,
                   probe_cfg: ProbeConfig | None = None,
                   finetune_cfg: FineTuneConfig | None = None,
                   stage1_count: int = 0) -> tuple[list[SweepCell], dict]:
    """pretrain -> probe -> fine-tune for each (value, seed); all else fixed.

    `model_factory(model_cfg_overrides, seed)` builds a fresh model so each
    cell starts from an identical init policy. Returns per-cell rows and
    per-value medians for both error rates.
    """
    if axis not in DEFAULT_AXIS_VALUES:
        raise ContractError(f"unknown ablation axis {axis!r}")
    if values is None:
        values = DEFAULT_AXIS_VALUES[axis]
    from dataclasses import replace

    rows: list[SweepCell] = []
    for value in values:
        for seed in seeds:
            cell_stft = stft_cfg
            cell_train = replace(pretrain_cfg, seed=seed)
            stage1 = stage1_count if axis != AXIS_STAGE1 else (
                stage1_count if value == "on" else 0
            )
            if axis == AXIS_MASK_RATIO:
                cell_train = replace(cell_train, mask_ratio=float(value))
            elif axis == AXIS_MASK_STRATEGY:
                cell_train = replace(cell_train, mask_strategy=str(value))
            elif axis == AXIS_STFT_FORMAT:
                cell_stft = replace(stft_cfg, format=str(value))
            tensors = [preprocess(x, cell_stft) for x in train_plots]
            test_tensors = [preprocess(x, cell_stft) for x in test_plots]
            cp, tp, fp = tube_extents
            grid = TubeGrid(cp, tp, fp, *tensors[0].shape[:3])
            model = model_factory(
                {"di": cell_stft.planes, "n_tokens": grid.n_tubes}, seed
            )
            if stage1 > 0:
                videos = video_like_tensors(
                    stage1, grid.n_c * cp, grid.n_t * tp, grid.n_f * fp,
                    seed=seed, planes=cell_stft.planes,
                )
                pretrain(videos, model, grid, replace(cell_train, stage="stage1-video"))
            pretrain(tensors, model, grid, replace(cell_train, stage="stage2-waterfall"))

            train_tubes = np.stack([partition_tubes(t, grid) for t in tensors])
            test_tubes = np.stack([partition_tubes(t, grid) for t in test_tensors])
            train_reps = pool_tubes(train_tubes, model)
            test_reps = pool_tubes(test_tubes, model)
            _, probe_er = train_linear_probe(
                train_reps, train_labels, test_reps, test_labels, n_classes, probe_cfg
            )
            head = ClassifierHead(model.config.enc_width, n_classes)
            fine_tune(train_tubes, train_labels, model, head,
                      replace(finetune_cfg or FineTuneConfig(), seed=seed))
            ft_reps = pool_tubes(test_tubes, model)
            ft_er = error_rate(predict_logits(head.logits(ft_reps).data), test_labels)
            rows.append(SweepCell(axis, value, seed, probe_er, ft_er))
    medians = {
        value: {
            "probe_er": float(np.median([r.probe_er for r in rows if r.value == value])),
            "finetune_er": float(np.median([r.finetune_er for r in rows if r.value == value])),
        }
        for value in values
    }
    return rows, medians


def write_sweep_csv(rows: list[SweepCell], medians: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write("axis,value,seed,probe_er,finetune_er\n")
        for r in rows:
            fh.write(f"{r.axis},{r.value},{r.seed},{r.probe_er:.6f},{r.finetune_er:.6f}\n")
        fh.write("medians\n")
        for value, m in medians.items():
            fh.write(f"median,{value},,{m['probe_er']:.6f},{m['finetune_er']:.6f}\n")
