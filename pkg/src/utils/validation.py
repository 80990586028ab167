"""Validation utilities: report builders and settings checks."""

from typing import Any, Dict, List, Mapping
from urllib.parse import urlparse

from ..models import ValidationReport


def validate_url(url: str) -> bool:
    """Validate URL format."""
    if not url:
        return False

    try:
        parsed = urlparse(url)
        return bool(parsed.scheme in ("http", "https") and parsed.netloc)
    except Exception:
        return False


def validate_settings(settings: Any) -> List[str]:
    """Return problems with runtime settings that the model itself cannot see."""
    issues = []

    if settings.endpoint is not None and not validate_url(settings.endpoint):
        issues.append(f"endpoint {settings.endpoint!r} is not an http(s) URL")

    if settings.producer != "remote" and settings.endpoint:
        issues.append("endpoint is set but the remote producer is not selected")

    if settings.max_tokens < settings.step_tokens_max:
        issues.append("max_tokens is smaller than step_tokens_max")

    return issues


def report_from_error(error: Exception, location: str = "") -> ValidationReport:
    """Fold an exception carrying a ``code`` into a one-entry report."""
    report = ValidationReport()
    code = getattr(error, "code", type(error).__name__)
    report.add(code, getattr(error, "location", "") or location, str(error))
    return report


def aggregate_reports(reports: Mapping[str, ValidationReport]) -> Dict[str, Any]:
    """Per-file reports plus counts by status and violation code."""
    by_code: Dict[str, int] = {}
    for report in reports.values():
        for code in report.codes():
            by_code[code] = by_code.get(code, 0) + 1
    passed = sum(1 for r in reports.values() if r.ok)
    return {
        "ok": passed == len(reports),
        "files": {name: reports[name].to_dict() for name in sorted(reports)},
        "summary": {
            "total": len(reports),
            "passed": passed,
            "failed": len(reports) - passed,
            "byCode": dict(sorted(by_code.items())),
        },
    }
