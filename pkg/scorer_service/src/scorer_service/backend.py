"""Cross-encoder inference backend with internal batching."""

from __future__ import annotations

import threading

DEFAULT_MODEL = "cross-encoder/ms-marco-MiniLM-L-12-v2"
DEFAULT_BATCH_SIZE = 64


class CrossEncoderBackend:
    """Single model instance; requests are serialized through a lock.

    Inference runs in evaluation mode with no sampling, so identical
    request bodies always return identical scores.
    """

    def __init__(self, model_name: str = DEFAULT_MODEL, batch_size: int = DEFAULT_BATCH_SIZE):
        from sentence_transformers import CrossEncoder

        self._model = CrossEncoder(model_name)
        self.model_name = model_name
        self.batch_size = max(1, batch_size)
        self._lock = threading.Lock()

    def predict(self, pairs: list[tuple[str, str]]) -> list[float]:
        with self._lock:
            scores: list[float] = []
            for start in range(0, len(pairs), self.batch_size):
                chunk = pairs[start : start + self.batch_size]
                out = self._model.predict(chunk, batch_size=self.batch_size)
                scores.extend(float(s) for s in out)
            return scores
