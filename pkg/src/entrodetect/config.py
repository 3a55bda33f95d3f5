"""key = value configuration files.

One assignment per line, ``#`` starts a comment, blank lines are skipped.
Unknown keys are rejected so schema drift fails loudly.
"""

from __future__ import annotations

from .errors import ValidationError


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValidationError(f"config line {lineno}: empty key")
        if key in out:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def _float_pair(value: str) -> tuple[float, float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return float(parts[0]), float(parts[1])


_COERCERS = {
    int: int,
    float: float,
    str: str,
    "float_pair": _float_pair,
}


def coerce(kv: dict[str, str], schema: dict, *, context: str) -> dict:
    """Convert raw string values per the field schema; reject unknown keys."""
    unknown = sorted(set(kv) - set(schema))
    if unknown:
        raise ValidationError(f"{context}: unknown keys {unknown}")
    out = {}
    for key, value in kv.items():
        conv = _COERCERS[schema[key]]
        try:
            out[key] = conv(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{context}: bad value for {key!r}: {exc}") from exc
    return out
