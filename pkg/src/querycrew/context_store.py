"""Vector store over catalog description text and semantic top-k retrieval.

At preprocessing time every nonempty description field (expanded name,
column description, value description) becomes one store item with an
embedding vector. Retrieval is a linear cosine scan; catalogs hold thousands
of descriptions, not millions, so no ANN structure is needed.

Two embedding providers exist: a remote one speaking the common
`/embeddings` HTTP API and a deterministic local one (feature hashing over
character 3-grams) that keeps tests and air-gapped deployments offline.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import requests

from .catalog import SchemaCatalog
from .textutils import char_ngrams, ngram_hash, normalize_value

logger = logging.getLogger(__name__)

FIELD_KINDS = ("expanded_name", "column_description", "value_description")


class ContextStoreError(Exception):
    """Context store could not be built."""


class EmbeddingProvider(Protocol):
    kind: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic local embedder: hashed character n-gram features (sizes
    1 through 3), L2-normalized.

    A pure function of the input text; identical text always yields the
    identical vector. The multi-scale grams keep near-duplicate short strings
    (a keyword and its stored spelling) above the default cosine threshold,
    mimicking how a real embedding model scores them. Used as the offline
    stand-in for a remote model.
    """

    kind = "deterministic-local"

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            norm_text = normalize_value(text)
            for size in (1, 2, 3):
                for gram in char_ngrams(norm_text, size):
                    h = ngram_hash(gram)
                    idx = h % self.dimension
                    sign = 1.0 if (h >> 16) & 1 else -1.0
                    out[row, idx] += sign
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class RemoteEmbedder:
    """Embeddings over an HTTP endpoint compatible with the standard API."""

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        dimension: int = 1536,
        api_key_env: str = "EMBEDDINGS_API_KEY",
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        headers = {}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        resp = self.session.post(
            f"{self.base_url}/embeddings",
            json={"model": self.model, "input": list(texts)},
            headers=headers,
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise ContextStoreError(
                f"embeddings endpoint returned {resp.status_code}: {resp.text[:200]}"
            )
        data = resp.json()["data"]
        vectors = np.array([d["embedding"] for d in data], dtype=np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return vectors / norms


@dataclass
class StoreItem:
    doc_id: str
    table: str
    column: str
    field_kind: str
    text: str


@dataclass
class DescriptionHit:
    doc_id: str
    table: str
    column: str
    field_kind: str
    text: str
    cosine: float


@dataclass
class ContextStore:
    items: list[StoreItem]
    vectors: np.ndarray = field(repr=False, default=None)  # (len(items), dim), unit rows
    embedder: EmbeddingProvider = None

    def __len__(self) -> int:
        return len(self.items)


def build_context_store(catalog: SchemaCatalog, embedder: EmbeddingProvider) -> ContextStore:
    """One store item per nonempty description field per column.

    Embedding failures propagate as ContextStoreError: the store is built at
    preprocessing time where a hard failure is the right behavior.
    """
    items: list[StoreItem] = []
    for tinfo in catalog.tables:
        for col in tinfo.columns:
            for kind in FIELD_KINDS:
                text = getattr(col, kind)
                if text:
                    items.append(
                        StoreItem(
                            doc_id=f"{tinfo.name}.{col.name}.{kind}",
                            table=tinfo.name,
                            column=col.name,
                            field_kind=kind,
                            text=text,
                        )
                    )
    if not items:
        return ContextStore(items=[], vectors=np.zeros((0, embedder.dimension)), embedder=embedder)
    try:
        vectors = embedder.embed([item.text for item in items])
    except ContextStoreError:
        raise
    except Exception as exc:
        raise ContextStoreError(f"embedding failed during store build: {exc}") from exc
    if vectors.shape != (len(items), embedder.dimension):
        raise ContextStoreError(
            f"embedder returned shape {vectors.shape}, "
            f"expected {(len(items), embedder.dimension)}"
        )
    return ContextStore(items=items, vectors=vectors, embedder=embedder)


def retrieve_context(store: ContextStore, query_text: str, k: int) -> list[DescriptionHit]:
    """Top-k description items by cosine to the query text.

    Results are sorted by non-increasing cosine with ties broken by doc_id,
    so retrieval is stable across runs. k=0 or an empty store returns [].
    """
    if k <= 0 or not store.items:
        return []
    q = store.embedder.embed([query_text])[0]
    scores = store.vectors @ q
    order = sorted(range(len(store.items)), key=lambda i: (-scores[i], store.items[i].doc_id))
    hits = []
    for i in order[:k]:
        item = store.items[i]
        hits.append(
            DescriptionHit(
                doc_id=item.doc_id,
                table=item.table,
                column=item.column,
                field_kind=item.field_kind,
                text=item.text,
                cosine=float(scores[i]),
            )
        )
    return hits
