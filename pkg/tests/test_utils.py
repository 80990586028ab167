"""Tests for text and validation utilities."""

from src.models import ValidationReport
from src.plan_format import MalformedTagError
from src.utils.text import (
    clean_text,
    count_tokens,
    normalize_newlines,
    split_tokens,
    stable_digest,
    token_id,
    tokenize,
)
from src.utils.validation import aggregate_reports, report_from_error, validate_url


def test_normalize_newlines():
    assert normalize_newlines("a\r\nb\rc\n") == "a\nb\nc\n"
    assert normalize_newlines("") == ""


def test_clean_text():
    assert clean_text("  Hello   World  ") == "Hello World"
    assert clean_text("line\n\tbreak") == "line break"
    assert clean_text("") == ""
    assert clean_text(None) == ""


def test_split_tokens_separates_punctuation():
    assert split_tokens("Cough,Fever->Diagnosis") == ["Cough", ",", "Fever", "-", ">", "Diagnosis"]
    assert count_tokens("t:n1 done") == 4
    assert split_tokens("") == []


def test_token_ids_are_stable():
    assert token_id("fever") == token_id("fever")
    assert token_id("fever") != token_id("cough")
    assert 0 <= token_id("fever") < 2**31
    assert tokenize("fever fever") == [token_id("fever")] * 2


def test_stable_digest_separates_parts():
    assert stable_digest("ab", "c") != stable_digest("a", "bc")
    assert stable_digest("x") == stable_digest("x")


def test_validate_url():
    assert validate_url("https://example.com/generate")
    assert validate_url("http://localhost:8000")
    assert not validate_url("ftp://example.com")
    assert not validate_url("")
    assert not validate_url("localhost:8000")


def test_report_from_error_uses_code_and_location():
    error = MalformedTagError("unknown tag <Note>", location="line 3")
    report = report_from_error(error, "plan.txt")

    assert report.codes() == ["MalformedTag"]
    assert report.violations[0].location == "line 3"

    fallback = report_from_error(RuntimeError("boom"), "run")
    assert fallback.codes() == ["RuntimeError"]
    assert fallback.violations[0].location == "run"


def test_aggregate_reports():
    bad = ValidationReport()
    bad.add("OrderViolation", "step 2", "out of order")
    bad.add("OrderViolation", "step 3", "out of order")
    summary = aggregate_reports({"b.txt": bad, "a.txt": ValidationReport()})

    assert summary["ok"] is False
    assert list(summary["files"]) == ["a.txt", "b.txt"]
    assert summary["summary"] == {"total": 2, "passed": 1, "failed": 1, "byCode": {"OrderViolation": 2}}
