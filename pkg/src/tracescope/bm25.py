"""Okapi BM25 over a small in-memory corpus of retrieved documents.

Matches the classic Okapi variant with an epsilon floor: IDF is
ln((N - n + 0.5) / (n + 0.5)) and any negative IDF is replaced by
epsilon * average_idf, the average taken over the corpus vocabulary
before flooring. Defaults: k1 = 1.5, b = 0.75, epsilon = 0.25.
"""

from __future__ import annotations

import math
from collections import Counter


def split_terms(text: str) -> list[str]:
    return text.lower().split()


class OkapiBM25:
    def __init__(self, corpus: list[list[str]], k1: float = 1.5, b: float = 0.75,
                 epsilon: float = 0.25):
        self.k1 = k1
        self.b = b
        self.epsilon = epsilon
        self.corpus_size = len(corpus)
        self.doc_freqs = [Counter(doc) for doc in corpus]
        self.doc_len = [len(doc) for doc in corpus]
        self.avgdl = sum(self.doc_len) / self.corpus_size if self.corpus_size else 0.0
        self.idf: dict[str, float] = {}
        self._calc_idf()

    def _calc_idf(self) -> None:
        nd: dict[str, int] = {}
        for freqs in self.doc_freqs:
            for term in freqs:
                nd[term] = nd.get(term, 0) + 1
        idf_sum = 0.0
        negative = []
        for term, freq in nd.items():
            idf = math.log(self.corpus_size - freq + 0.5) - math.log(freq + 0.5)
            self.idf[term] = idf
            idf_sum += idf
            if idf < 0:
                negative.append(term)
        if not self.idf:
            return
        average_idf = idf_sum / len(self.idf)
        eps = self.epsilon * average_idf
        for term in negative:
            self.idf[term] = eps

    def get_scores(self, query: list[str]) -> list[float]:
        scores = [0.0] * self.corpus_size
        if self.avgdl == 0.0:
            return scores
        k1, b = self.k1, self.b
        for i, freqs in enumerate(self.doc_freqs):
            norm = k1 * (1 - b + b * self.doc_len[i] / self.avgdl)
            s = 0.0
            for term in query:
                f = freqs.get(term)
                if not f:
                    continue
                s += self.idf.get(term, 0.0) * (f * (k1 + 1)) / (f + norm)
            scores[i] = s
        return scores
