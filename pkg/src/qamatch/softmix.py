"""Latent-space mixing for consistency training.

Each unlabeled example carries three views of the same underlying input:
the original representation, a question-augmented one, and a
context-augmented one. Mixing picks ONE of those three views as the
perturbation source (uniformly at random, per example), draws a blend
coefficient lambda ~ Beta(alpha, alpha), and replaces every view v with

    mixed_v = lambda * v + (1 - lambda) * source

The source's own mixed copy is the degenerate combination and equals the
source exactly; it is assigned, not recomputed, so the equality holds
bit-for-bit. Targets are never mixed: all three blended inputs train
against the example's single pseudo-label.

Draw order per example is fixed: source index first, then lambda. The
Beta draw is realized from two standard Gamma variates, g1 / (g1 + g2),
which keeps the stream layout explicit and easy to replay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

# Index order for the perturbation-source draw: 0 = original,
# 1 = question-augmented view, 2 = context-augmented view.
VIEW_NAMES = ("original", "question", "context")


def draw_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) variate via two standard Gamma draws."""
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    g1 = rng.standard_gamma(alpha)
    g2 = rng.standard_gamma(alpha)
    return g1 / (g1 + g2)


@dataclass
class MixedViews:
    """Blended view matrices plus the per-example draws that produced them.

    The three mixed arrays share the unlabeled batch's shape. ``sources``
    holds indices into VIEW_NAMES; row i of every mixed array was blended
    against view ``sources[i]`` of example i with coefficient ``lambdas[i]``.
    """

    original: np.ndarray
    question: np.ndarray
    context: np.ndarray
    lambdas: np.ndarray
    sources: np.ndarray

    def source_names(self) -> list:
        return [VIEW_NAMES[s] for s in self.sources]


def mix_views(
    original: np.ndarray,
    question: np.ndarray,
    context: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
) -> MixedViews:
    """Blend each example's three views against one of its own views.

    Accepts (B, d) matrices; a single example can be mixed by passing
    1-row matrices. Per-example draws happen in row order.
    """
    vo = np.asarray(original, dtype=np.float64)
    vq = np.asarray(question, dtype=np.float64)
    vc = np.asarray(context, dtype=np.float64)
    if not (vo.shape == vq.shape == vc.shape):
        raise ShapeError(
            f"views must share a shape, got {vo.shape}/{vq.shape}/{vc.shape}"
        )
    if vo.ndim != 2:
        raise ShapeError(f"expected (B, d) view matrices, got shape {vo.shape}")
    if vo.shape[0] == 0:
        raise ParameterError("cannot mix an empty batch")

    n = vo.shape[0]
    lambdas = np.empty(n)
    sources = np.empty(n, dtype=np.int64)
    for i in range(n):
        sources[i] = int(rng.integers(0, len(VIEW_NAMES)))
        lambdas[i] = draw_lambda(alpha, rng)

    views = (vo, vq, vc)
    src_rows = np.empty_like(vo)
    for s, view in enumerate(views):
        mask = sources == s
        src_rows[mask] = view[mask]

    lam = lambdas[:, None]
    mixed = [lam * v + (1.0 - lam) * src_rows for v in views]
    # the source view's own blend is the identity combination; assign it
    # exactly so the equality is bitwise, not merely within rounding
    for s in range(len(views)):
        mask = sources == s
        mixed[s][mask] = views[s][mask]
    return MixedViews(
        original=mixed[0],
        question=mixed[1],
        context=mixed[2],
        lambdas=lambdas,
        sources=sources,
    )


def mix_consistency_loss(model, mixed: MixedViews, pseudo_targets: np.ndarray) -> float:
    """Sum over the three mixed views of H(pseudo, forward), batch-meaned.

    The pseudo-label targets are constants; no gradient bookkeeping here.
    This standalone form exists for tests; the trainer computes the same
    quantity fused with its gradient.
    """
    import math

    from .numerics import cross_entropy

    T = np.asarray(pseudo_targets, dtype=np.float64)
    n = T.shape[0]
    total = []
    for view in (mixed.original, mixed.question, mixed.context):
        preds = model.forward_batch(view)
        total.append(
            math.fsum(cross_entropy(t, p) for t, p in zip(T, preds)) / n
        )
    return math.fsum(total)


def anchor_consistency_loss(model, question_view, pseudo_targets) -> float:
    """H(pseudo, forward(question-augmented view)), batch-meaned; the view
    is used unmixed. Standalone form for tests, mirrors the trainer."""
    import math

    from .numerics import cross_entropy

    T = np.asarray(pseudo_targets, dtype=np.float64)
    preds = model.forward_batch(np.asarray(question_view, dtype=np.float64))
    return math.fsum(cross_entropy(t, p) for t, p in zip(T, preds)) / T.shape[0]
