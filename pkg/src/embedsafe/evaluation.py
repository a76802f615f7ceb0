"""Evaluation protocol: distance tables, PCA, and the mock auth system.

The mock authentication workflow mirrors the template-store flow: enroll
distorted images as templates (control: real images through an identity
transform, same code path), probe with untouched images, sweep the accept
threshold tau over [0, 4], and report confusion counts, precision/recall/
F1, the ROC curve and its equal error rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .distances import batch_l2
from .errors import (
    DimensionError,
    InterpolationError,
    ProtocolError,
    RankError,
)
from .generator import IdentityGenerator
from .mnist_data import Dataset


# ---------------------------------------------------------------------------
# template store
# ---------------------------------------------------------------------------

@dataclass
class TemplateEntry:
    identity: int
    template: np.ndarray  # distorted image, (H, W, C)
    embedding: np.ndarray  # cached embed(emb, template), (m,)


@dataclass
class TemplateStore:
    entries: list[TemplateEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])

    def revalidate(self, emb) -> None:
        """Recompute every cached embedding; complain if any drifted."""
        for e in self.entries:
            fresh = emb.embed(e.template)
            if not np.allclose(fresh, e.embedding, atol=1e-6):
                raise ProtocolError(
                    f"stale template embedding for identity {e.identity}"
                )


def enroll(store: TemplateStore, image: np.ndarray, identity: int, gen, emb) -> TemplateStore:
    """Distort the image, embed the template, append both to the store."""
    template = gen.distort(image)
    store.entries.append(TemplateEntry(int(identity), template, emb.embed(template)))
    return store


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    identity: int | None
    distance: float


def verify(store: TemplateStore, probe: np.ndarray, emb, tau: float) -> VerifyResult:
    """Accept iff the closest template embedding is strictly within tau."""
    if not store.entries:
        return VerifyResult(False, None, float("inf"))
    e = emb.embed(probe).astype(np.float64)
    mat = store.embedding_matrix().astype(np.float64)
    d = ((mat - e) ** 2).sum(axis=1)
    best = int(np.argmin(d))
    dist = float(d[best])
    return VerifyResult(dist < tau, store.entries[best].identity, dist)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ProtocolError("confusion counts must be non-negative")


def compute_metrics(c: ConfusionMatrix):
    """(precision, recall, f1); undefined values come back as None, never 0."""
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else None
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def compute_eer(roc) -> float:
    """Equal error rate from a threshold-swept ROC.

    Finds where fpr crosses 1 - tpr and linearly interpolates between the
    two bracketing sweep points; the difference is linear along the
    segment, so the interpolated fpr equals the interpolated frr there.
    """
    pts = [(float(f), float(t)) for f, t in roc]
    if len(pts) < 2:
        raise InterpolationError("ROC needs at least two points to interpolate an EER")
    d = [f - (1.0 - t) for f, t in pts]
    cross = None
    for i, v in enumerate(d):
        if v >= 0.0:
            cross = i
            break
    if cross is None:
        raise InterpolationError("ROC never reaches the fpr = 1 - tpr crossing")
    if cross == 0:
        return pts[0][0]
    d0, d1 = d[cross - 1], d[cross]
    f0, f1_ = pts[cross - 1][0], pts[cross][0]
    t = 0.0 if d1 == d0 else (0.0 - d0) / (d1 - d0)
    return f0 + t * (f1_ - f0)


# ---------------------------------------------------------------------------
# mock authentication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdPoint:
    tau: float
    confusion: ConfusionMatrix
    precision: float | None
    recall: float | None
    f1: float | None


@dataclass
class EvaluationReport:
    best_threshold: float
    confusion: ConfusionMatrix
    precision: float | None
    recall: float | None
    f1: float | None
    roc: list[tuple[float, float]]
    eer: float
    sweep: list[ThresholdPoint]


def _embed_chunked(emb, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    parts = [emb.embed_batch(images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]


def min_template_scores(probe_embeddings: np.ndarray, template_embeddings: np.ndarray) -> np.ndarray:
    """Per probe, the smallest squared distance to any stored template."""
    p = probe_embeddings.astype(np.float64)
    t = template_embeddings.astype(np.float64)
    d = ((p[:, np.newaxis, :] - t[np.newaxis, :, :]) ** 2).sum(axis=2)
    return d.min(axis=1)


def sweep_scores(pos_scores: np.ndarray, neg_scores: np.ndarray, taus: np.ndarray) -> EvaluationReport:
    """Threshold sweep over precomputed best-match scores."""
    n_pos, n_neg = pos_scores.size, neg_scores.size
    sweep: list[ThresholdPoint] = []
    roc: list[tuple[float, float]] = []
    best: ThresholdPoint | None = None
    for tau in taus:
        tp = int((pos_scores < tau).sum())
        fp = int((neg_scores < tau).sum())
        cm = ConfusionMatrix(tp=tp, fp=fp, fn=n_pos - tp, tn=n_neg - fp)
        precision, recall, f1 = compute_metrics(cm)
        point = ThresholdPoint(float(tau), cm, precision, recall, f1)
        sweep.append(point)
        roc.append((fp / n_neg, tp / n_pos))
        if f1 is not None and (best is None or best.f1 is None or f1 > best.f1):
            best = point  # ties keep the earlier (smaller) tau
    if best is None:
        best = sweep[0]
    return EvaluationReport(
        best_threshold=best.tau,
        confusion=best.confusion,
        precision=best.precision,
        recall=best.recall,
        f1=best.f1,
        roc=roc,
        eer=compute_eer(roc),
        sweep=sweep,
    )


def mock_auth_eval(
    stored_classes,
    probe_positives: Dataset,
    probe_negatives: Dataset,
    gen,
    emb,
    enrollment: Dataset,
    sweep: tuple[float, float, int] = (0.0, 4.0, 1000),
) -> tuple[EvaluationReport, EvaluationReport]:
    """Run the mock login experiment; returns (with-distortion, control).

    Both variants share one code path: only the transform applied at enroll
    time differs (the generator vs an identity transform). Probes are
    always raw images.
    """
    stored = set(int(c) for c in stored_classes)
    if not set(np.unique(probe_positives.labels)) <= stored:
        raise ProtocolError("positive probes must belong to the stored classes")
    if set(np.unique(probe_negatives.labels)) & stored:
        raise ProtocolError("negative probe classes overlap the stored classes")
    if not set(np.unique(enrollment.labels)) <= stored:
        raise ProtocolError("enrollment images must belong to the stored classes")

    lo, hi, count = sweep
    taus = np.linspace(lo, hi, int(count))
    pos_emb = _embed_chunked(emb, probe_positives.images)
    neg_emb = _embed_chunked(emb, probe_negatives.images)

    reports = []
    for transform in (gen, IdentityGenerator()):
        store = TemplateStore()
        for img, label in zip(enrollment.images, enrollment.labels):
            enroll(store, img, int(label), transform, emb)
        templates = store.embedding_matrix()
        pos_scores = min_template_scores(pos_emb, templates)
        neg_scores = min_template_scores(neg_emb, templates)
        reports.append(sweep_scores(pos_scores, neg_scores, taus))
    return reports[0], reports[1]


def build_auth_protocol(test: Dataset, stored_classes, templates_per_class: int,
                        attempts: int, seed: int):
    """Seeded split of a test set into (enrollment, positives, negatives).

    Enrollment picks `templates_per_class` images per stored class; positive
    probes come from the stored classes minus the enrolled images; negative
    probes come from three seeded non-stored classes. Pools smaller than
    `attempts` are sampled with replacement.
    """
    stored = sorted(set(int(c) for c in stored_classes))
    rng = np.random.default_rng(seed)
    all_classes = [int(c) for c in np.unique(test.labels)]
    others = [c for c in all_classes if c not in stored]
    if len(others) < 3:
        raise ProtocolError("need at least three non-stored classes for negatives")
    neg_classes = sorted(rng.choice(others, size=3, replace=False).tolist())

    enrolled_idx = []
    for cls in stored:
        idx = test.class_indices(cls)
        if idx.size < templates_per_class:
            raise ProtocolError(f"class {cls} has {idx.size} images, "
                                f"need {templates_per_class} for enrollment")
        enrolled_idx.append(rng.choice(idx, size=templates_per_class, replace=False))
    enrolled_idx = np.concatenate(enrolled_idx)

    def _probe_pool(classes, excluded):
        mask = np.isin(test.labels, classes)
        mask[excluded] = False
        pool = np.nonzero(mask)[0]
        chosen = rng.choice(pool, size=attempts, replace=pool.size < attempts)
        return Dataset(images=test.images[chosen], labels=test.labels[chosen],
                       split=test.split, seed=seed)

    enrollment = Dataset(images=test.images[enrolled_idx],
                         labels=test.labels[enrolled_idx],
                         split=test.split, seed=seed)
    positives = _probe_pool(stored, enrolled_idx)
    negatives = _probe_pool(neg_classes, np.empty(0, dtype=np.int64))
    return enrollment, positives, negatives


# ---------------------------------------------------------------------------
# distance tables and PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceTableRow:
    class_id: int
    real_gen: float
    real_real: float
    gen_gen: float
    pairs: int


def distance_table(real: Dataset, gen, classes, pairs_per_class: int,
                   seed: int) -> list[DistanceTableRow]:
    """Per-class mean L2 distances in the three setups.

    Per class, `pairs_per_class` distinct same-class pairs (X, Y) are drawn
    with a seeded RNG; real_real averages l2(X, Y), gen_gen averages
    l2(G(X), G(Y)), and real_gen averages l2(X, G(X)) over all sampled
    pair members.
    """
    rng = np.random.default_rng(seed)
    rows: list[DistanceTableRow] = []
    for cls in classes:
        idx = real.class_indices(int(cls))
        if idx.size < 2:
            warnings.warn(f"class {cls} has < 2 images; skipped", RuntimeWarning)
            continue
        first = np.empty(pairs_per_class, dtype=np.int64)
        second = np.empty(pairs_per_class, dtype=np.int64)
        for k in range(pairs_per_class):
            a, b = rng.choice(idx.size, size=2, replace=False)
            first[k], second[k] = idx[a], idx[b]
        xa = real.images[first]
        xb = real.images[second]
        ga = gen.distort_batch(xa)
        gb = gen.distort_batch(xb)
        real_gen = float(np.concatenate([batch_l2(ga, xa), batch_l2(gb, xb)]).mean())
        rows.append(
            DistanceTableRow(
                class_id=int(cls),
                real_gen=real_gen,
                real_real=float(batch_l2(xa, xb).mean()),
                gen_gen=float(batch_l2(ga, gb).mean()),
                pairs=pairs_per_class,
            )
        )
    return rows


def pca_project(embeddings, k: int = 3):
    """Project onto the top-k principal axes.

    Returns (points (n, k), explained-variance ratios (k,)). Eigenvectors
    are sign-fixed so their first nonzero coordinate is positive; ratios
    are sorted non-increasing and sum to <= 1.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected (n, m) embeddings, got shape {x.shape}")
    n, m = x.shape
    if k > m:
        raise RankError(f"k={k} exceeds embedding dimension {m}")
    if n < k + 1:
        raise RankError(f"need at least {k + 1} points for k={k}, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    vecs = evecs[:, order]
    for j in range(k):
        col = vecs[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    lam = np.clip(evals, 0.0, None)
    total = lam.sum()
    ratios = (np.clip(evals[order], 0.0, None) / total) if total > 0 else np.zeros(k)
    return xc @ vecs, ratios
