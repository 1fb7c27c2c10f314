"""Sliding-window inference and top-k accuracy reporting.

Each action is classified from the window centered on it, built exactly
as in training (replicate-padded at video edges) but with no masking, no
decoders, and no text. Metrics follow the verb/noun/action convention:
an action counts as correct at k only if both the verb and the noun
truth appear in their respective top-k lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from seqdg.data import FeatureCache, FeatureStore, build_windows
from seqdg.model import SeqDGModel

__all__ = [
    "Prediction",
    "topk_indices",
    "sliding_window_predict",
    "accuracy",
    "top1_action_accuracy",
]


@dataclass
class Prediction:
    action_id: int
    verb_logits: np.ndarray
    noun_logits: np.ndarray
    topk_verbs: np.ndarray
    topk_nouns: np.ndarray


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits, descending; ties break toward the
    smaller class id so results are reproducible."""
    if k > logits.size:
        raise ValueError(f"top-{k} of {logits.size} classes")
    order = np.lexsort((np.arange(logits.size), -logits))
    return order[:k]


def sliding_window_predict(store: FeatureStore, model: SeqDGModel, *,
                           domains=None, k: int = 5, batch_size: int = 256,
                           W: int | None = None) -> list[Prediction]:
    """One prediction per action of the requested domains (default: the
    target split), every video processed in isolation."""
    cfg = model.config
    if W is not None and W != cfg.W:
        raise ValueError(f"window length {W} does not match the trained model "
                         f"(W={cfg.W})")
    if domains is None:
        domains = store.split.target
    records = store.records_for(domains)
    windows = build_windows(records, cfg.W)
    keep_clips = cfg.clip_agg == "relational"
    n_sample = cfg.relational_clips if keep_clips else None
    cache = FeatureCache(store, with_text=False, n_clips_sample=n_sample,
                         keep_clips=keep_clips)
    preds: list[Prediction] = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        batch = cache.batch(chunk)
        verb_logits, noun_logits = model.predict_logits(batch.visual)
        for i, win in enumerate(chunk):
            preds.append(Prediction(
                action_id=win.center_record.action_id,
                verb_logits=verb_logits[i], noun_logits=noun_logits[i],
                topk_verbs=topk_indices(verb_logits[i], min(k, cfg.n_verbs)),
                topk_nouns=topk_indices(noun_logits[i], min(k, cfg.n_nouns))))
    return preds


def accuracy(predictions, labels, k: int = 1) -> tuple[float, float, float]:
    """Top-k verb%, noun%, and action% (both heads correct) over aligned
    (verb, noun) label pairs."""
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not predictions:
        raise ValueError("empty prediction set")
    verb_hits = noun_hits = action_hits = 0
    for pred, (verb, noun) in zip(predictions, labels):
        vk = topk_indices(pred.verb_logits, k)
        nk = topk_indices(pred.noun_logits, k)
        v_ok = verb in vk
        n_ok = noun in nk
        verb_hits += v_ok
        noun_hits += n_ok
        action_hits += v_ok and n_ok
    n = len(predictions)
    return (100.0 * verb_hits / n, 100.0 * noun_hits / n, 100.0 * action_hits / n)


def top1_action_accuracy(verb_logits: np.ndarray, noun_logits: np.ndarray,
                         verbs: np.ndarray, nouns: np.ndarray) -> tuple[float, float, float]:
    """Fast batched top-1 metrics used by the per-epoch training log."""
    v_ok = verb_logits.argmax(axis=-1) == verbs
    n_ok = noun_logits.argmax(axis=-1) == nouns
    return (100.0 * v_ok.mean(), 100.0 * n_ok.mean(),
            100.0 * (v_ok & n_ok).mean())
