import numpy as np
import pytest

from querycrew.catalog import ingest_catalog_descriptions
from querycrew.context_store import (
    ContextStoreError,
    HashingEmbedder,
    RemoteEmbedder,
    build_context_store,
    retrieve_context,
)


@pytest.fixture(scope="module")
def ingested_catalog(finance_db, finance_catalog):
    return ingest_catalog_descriptions(
        finance_catalog, finance_db.parent / "database_description"
    )


@pytest.fixture(scope="module")
def store(ingested_catalog):
    return build_context_store(ingested_catalog, HashingEmbedder())


class TestHashingEmbedder:
    def test_pure_function(self):
        emb = HashingEmbedder()
        a = emb.embed(["average salary"])
        b = emb.embed(["average salary"])
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        vecs = HashingEmbedder().embed(["alpha", "beta", "a much longer text here"])
        norms = np.linalg.norm(vecs, axis=1)
        assert np.allclose(norms, 1.0)

    def test_dimension(self):
        assert HashingEmbedder().embed(["x"]).shape == (1, 256)
        assert HashingEmbedder(dimension=64).embed(["x"]).shape == (1, 64)

    def test_empty_text_zero_vector(self):
        vec = HashingEmbedder().embed([""])[0]
        assert np.linalg.norm(vec) == 0.0

    def test_similar_strings_higher_cosine(self):
        emb = HashingEmbedder()
        vecs = emb.embed(["average salary", "average salaries", "fastest lap time"])
        close = float(vecs[0] @ vecs[1])
        far = float(vecs[0] @ vecs[2])
        assert close > far


class TestBuildStore:
    def test_item_count(self, ingested_catalog, store):
        expected = 0
        for t in ingested_catalog.tables:
            for c in t.columns:
                for fieldname in ("expanded_name", "column_description", "value_description"):
                    if getattr(c, fieldname):
                        expected += 1
        assert len(store) == expected
        assert expected > 0

    def test_empty_catalog_empty_store(self, finance_catalog):
        store = build_context_store(finance_catalog, HashingEmbedder())
        assert len(store) == 0

    def test_duplicate_text_distinct_doc_ids(self, ingested_catalog):
        catalog = ingest_catalog_descriptions(ingested_catalog, "/nonexistent")
        catalog.table("customers").column("Gender").column_description = "shared text"
        catalog.table("client").column("Gender").column_description = "shared text"
        store = build_context_store(catalog, HashingEmbedder())
        ids = [i.doc_id for i in store.items if i.text == "shared text"]
        assert len(ids) == 2
        assert len(set(ids)) == 2

    def test_embedder_failure_is_build_error(self, ingested_catalog):
        class Broken:
            dimension = 4

            def embed(self, texts):
                raise RuntimeError("offline")

        with pytest.raises(ContextStoreError):
            build_context_store(ingested_catalog, Broken())

    def test_doc_ids_unique(self, store):
        ids = [item.doc_id for item in store.items]
        assert len(ids) == len(set(ids))


class TestRetrieveContext:
    def test_k_zero(self, store):
        assert retrieve_context(store, "anything", 0) == []

    def test_self_similarity_first(self, store):
        target = store.items[0].text
        hits = retrieve_context(store, target, 3)
        assert hits[0].text == target
        assert hits[0].cosine == pytest.approx(1.0)

    def test_k_larger_than_store(self, store):
        hits = retrieve_context(store, "salary", len(store) + 50)
        assert len(hits) == len(store)

    def test_sorted_non_increasing(self, store):
        hits = retrieve_context(store, "average salary of the district", 10)
        cosines = [h.cosine for h in hits]
        assert cosines == sorted(cosines, reverse=True)

    def test_relevant_description_found(self, store):
        hits = retrieve_context(store, "average salary", 3)
        assert any(
            h.table == "district" and h.column == "A11" for h in hits
        )

    def test_stable_across_runs(self, store):
        a = retrieve_context(store, "currency of the customer", 5)
        b = retrieve_context(store, "currency of the customer", 5)
        assert [(h.doc_id, h.cosine) for h in a] == [(h.doc_id, h.cosine) for h in b]


class TestRemoteEmbedder:
    def test_posts_and_normalizes(self, monkeypatch):
        class FakeResponse:
            status_code = 200

            def json(self):
                return {
                    "data": [
                        {"embedding": [3.0, 4.0]},
                        {"embedding": [0.0, 2.0]},
                    ]
                }

        class FakeSession:
            def __init__(self):
                self.calls = []

            def post(self, url, json=None, headers=None, timeout=None):
                self.calls.append((url, json))
                return FakeResponse()

        session = FakeSession()
        emb = RemoteEmbedder(
            "http://localhost:9999/v1", "embed-model", dimension=2, session=session
        )
        vecs = emb.embed(["a", "b"])
        assert session.calls[0][0] == "http://localhost:9999/v1/embeddings"
        assert np.allclose(vecs[0], [0.6, 0.8])
        assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0)

    def test_non_200_raises(self):
        class FakeResponse:
            status_code = 503
            text = "overloaded"

        class FakeSession:
            def post(self, *a, **k):
                return FakeResponse()

        emb = RemoteEmbedder("http://x", "m", dimension=2, session=FakeSession())
        with pytest.raises(ContextStoreError):
            emb.embed(["a"])
