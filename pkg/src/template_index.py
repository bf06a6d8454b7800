import logging
from typing import Optional

import faiss
import numpy as np

logger = logging.getLogger(__name__)


class TemplateIndex:
    def __init__(self, dimension: int):
        """
        Индекс нормированных патчей для поиска по скалярному произведению (= NCC).

        Args:
            dimension: размерность эмбеддинга патча
        """
        self.dimension = dimension
        self.index = faiss.IndexFlatIP(dimension)  # Inner product = NCC для нормированных векторов
        self.vectors = np.zeros((0, dimension), dtype=np.float32)
        self.weights = np.zeros(0, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.index.ntotal)

    def build(self, vectors: np.ndarray, weights: Optional[np.ndarray] = None) -> None:
        """
        Перестраивает индекс из набора эмбеддингов.

        Args:
            vectors: массив (N, dimension)
            weights: веса записей (по умолчанию 1)
        """
        vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32).reshape(-1, self.dimension))
        vectors = vectors.copy()
        if len(vectors):
            # Нормализуем эмбеддинги для косинусного сходства
            faiss.normalize_L2(vectors)
        self.index.reset()
        if len(vectors):
            self.index.add(vectors)
        self.vectors = vectors
        if weights is None:
            weights = np.ones(len(vectors), dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1).copy()
        if len(self.weights) != len(vectors):
            raise ValueError("Число весов не совпадает с числом шаблонов")

    def max_weighted(self, queries: np.ndarray, empty_value: float = 0.0) -> np.ndarray:
        """
        Максимум взвешенного сходства запроса по всем записям индекса.

        Args:
            queries: эмбеддинги запросов (M, dimension)
            empty_value: результат для пустого индекса

        Returns:
            Массив (M,) значений max_i w_i * <q, v_i>
        """
        queries = np.ascontiguousarray(np.asarray(queries, dtype=np.float32).reshape(-1, self.dimension))
        if len(self) == 0:
            return np.full(len(queries), empty_value, dtype=np.float64)
        k = len(self)
        similarities, indices = self.index.search(queries, k)
        # Возвращаем сходства в порядке записей, чтобы применить веса
        dense = np.empty_like(similarities, dtype=np.float64)
        rows = np.arange(len(queries))[:, None]
        dense[rows, indices] = similarities
        return np.max(dense * self.weights[None, :], axis=1)

    def digest_bytes(self) -> bytes:
        return self.vectors.tobytes() + self.weights.tobytes()
