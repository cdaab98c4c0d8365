import random
import sqlite3

import pytest

from querycrew.executor import (
    EMPTY_RESULT,
    OK,
    RUNTIME_ERROR,
    SYNTAX_ERROR,
    TIMEOUT,
    ExecutionResult,
    canonicalize,
    classify_fault,
    execute,
    fingerprint,
    results_match,
)


class TestExecute:
    def test_select_one(self, finance_db):
        result = execute(finance_db, "SELECT 1")
        assert result.status == OK
        assert result.rows == [(1,)]

    def test_syntax_error(self, finance_db):
        result = execute(finance_db, "SELEC 1")
        assert result.status == SYNTAX_ERROR
        assert "syntax" in result.error_text.lower()

    def test_runtime_error_missing_table(self, finance_db):
        result = execute(finance_db, "SELECT * FROM no_such_table")
        assert result.status == RUNTIME_ERROR

    def test_write_statement_rejected(self, finance_db):
        before = finance_db.read_bytes()
        for sql in (
            "INSERT INTO customers VALUES (99, 'M', 'EUR')",
            "UPDATE customers SET Currency = 'USD'",
            "DELETE FROM customers",
            "DROP TABLE customers",
            "CREATE TABLE hacked (x)",
        ):
            result = execute(finance_db, sql)
            assert result.status == RUNTIME_ERROR, sql
        assert finance_db.read_bytes() == before

    def test_timeout_on_cartesian_blowup(self, tmp_path):
        db = tmp_path / "big.sqlite"
        conn = sqlite3.connect(db)
        conn.execute("CREATE TABLE t (x INTEGER)")
        conn.executemany("INSERT INTO t VALUES (?)", [(i,) for i in range(3000)])
        conn.commit()
        conn.close()
        result = execute(
            db, "SELECT count(*) FROM t a, t b, t c WHERE a.x + b.x + c.x = 17",
            timeout=0.01,
        )
        assert result.status == TIMEOUT

    def test_row_cap_truncates(self, tmp_path):
        db = tmp_path / "caps.sqlite"
        conn = sqlite3.connect(db)
        conn.execute("CREATE TABLE t (x INTEGER)")
        conn.executemany("INSERT INTO t VALUES (?)", [(i,) for i in range(50)])
        conn.commit()
        conn.close()
        result = execute(db, "SELECT x FROM t", row_cap=10)
        assert result.status == OK
        assert len(result.rows) == 10
        assert result.truncated

    def test_unreadable_db(self, tmp_path):
        result = execute(tmp_path / "absent.sqlite", "SELECT 1")
        assert result.status == RUNTIME_ERROR


class TestCanonicalize:
    def test_sorting(self):
        assert canonicalize([(2,), (1,)]) == canonicalize([(1,), (2,)])

    def test_int_float_unify(self):
        assert canonicalize([(1.0,)]) == canonicalize([(1,)])
        assert canonicalize([(0.5,)]) != canonicalize([(1,)])

    def test_near_equal_floats(self):
        # 1e-5 apart: distinct; 1e-7 apart: inside the 1e-6 tolerance
        assert canonicalize([(1.00001,)]) != canonicalize([(1.0,)])
        assert canonicalize([(1.0000001,)]) == canonicalize([(1.0,)])

    def test_null_vs_zero(self):
        assert canonicalize([(None,)]) != canonicalize([(0,)])
        assert canonicalize([(None,)]) != canonicalize([("",)])

    def test_text_exact(self):
        assert canonicalize([("EUR",)]) != canonicalize([("eur",)])

    def test_mixed_type_column_sortable(self):
        rows = [(1,), ("a",), (None,), (2.5,), (b"\x01",)]
        out = canonicalize(rows)
        assert len(out) == 5


def _ok(rows, truncated=False):
    return ExecutionResult(OK, rows=rows, truncated=truncated)


class TestResultsMatch:
    def test_order_insensitive(self):
        assert results_match(_ok([(1,), (2,)]), _ok([(2,), (1,)]), "set")
        assert results_match(_ok([(1,), (2,)]), _ok([(2,), (1,)]), "multiset")

    def test_set_vs_multiset_on_duplicates(self):
        a, b = _ok([(1,), (1,)]), _ok([(1,)])
        assert results_match(a, b, "set")
        assert not results_match(a, b, "multiset")

    def test_fault_never_matches(self):
        bad = ExecutionResult(SYNTAX_ERROR, error_text="x")
        assert not results_match(bad, _ok([(1,)]), "set")
        assert not results_match(bad, bad, "set")

    def test_truncated_never_matches(self):
        a = _ok([(1,)], truncated=True)
        assert not results_match(a, _ok([(1,)]), "set")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            results_match(_ok([]), _ok([]), "bag")

    def test_equivalence_relation(self):
        rng = random.Random(11)
        pool = [
            _ok([(rng.randint(0, 2),) for _ in range(rng.randint(0, 3))])
            for _ in range(12)
        ]
        for mode in ("set", "multiset"):
            for a in pool:
                assert results_match(a, a, mode)  # reflexive
                for b in pool:
                    assert results_match(a, b, mode) == results_match(b, a, mode)
                    for c in pool:
                        if results_match(a, b, mode) and results_match(b, c, mode):
                            assert results_match(a, c, mode)


class TestFingerprint:
    def test_order_invariant(self):
        assert fingerprint(_ok([(1,), (2,)])) == fingerprint(_ok([(2,), (1,)]))

    def test_empty_ok_vs_fault_differ(self):
        assert fingerprint(_ok([])) != fingerprint(
            ExecutionResult(RUNTIME_ERROR, error_text="boom")
        )

    def test_fault_kinds_differ(self):
        assert fingerprint(ExecutionResult(SYNTAX_ERROR)) != fingerprint(
            ExecutionResult(RUNTIME_ERROR)
        )
        assert fingerprint(ExecutionResult(SYNTAX_ERROR)) == fingerprint(
            ExecutionResult(SYNTAX_ERROR, error_text="different msg")
        )

    def test_deterministic(self):
        a = fingerprint(_ok([("x", 1), (None, 2.0)]))
        b = fingerprint(_ok([("x", 1), (None, 2.0)]))
        assert a == b

    def test_matches_set_equality(self):
        rng = random.Random(5)
        pool = [
            _ok([(rng.randint(0, 2), rng.choice(["a", "b"])) for _ in range(rng.randint(0, 3))])
            for _ in range(16)
        ]
        for a in pool:
            for b in pool:
                assert (fingerprint(a) == fingerprint(b)) == results_match(a, b, "set")


class TestClassifyFault:
    def test_ok_nonempty_is_none(self):
        assert classify_fault(_ok([(1,)])) is None

    def test_ok_empty_is_empty_result(self):
        fault = classify_fault(_ok([]))
        assert fault.kind == EMPTY_RESULT
        assert fault.detail == "query returned 0 rows"

    def test_statuses_map_to_kinds(self):
        for status in (SYNTAX_ERROR, RUNTIME_ERROR, TIMEOUT):
            fault = classify_fault(ExecutionResult(status, error_text="msg"))
            assert fault.kind == status
