"""Command-line scenario runner.

Usage::

    ptace run --config scenario.cfg [--out series.csv] [--save-pt pt.bin] [--load-pt pt.bin]

The configuration is a flat ``key = value`` file with ``#`` comments and a
single ``[scenario]`` section. Unknown keys are rejected. Exit codes are 0 on
success, 2 for invalid input and 3 when the numerics abort.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DegenerateCompressionError, NumericalAbort, PTMPOError, ValidationError
from .propagate import TimeSeries
from .scenarios import REQUIRED, Param, ScenarioResult, run_scenario, schema, validate_params

__all__ = ["emit_csv", "load_config", "main", "parse_config", "run"]

log = logging.getLogger(__name__)

SECTION = "scenario"
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _split_list(text: str) -> list[str]:
    return [item for item in text.replace(",", " ").split() if item]


def _convert(key: str, param: Param, text: str):
    text = text.strip()
    kind = param.kind
    if text.lower() == "none" and param.default is None:
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError("expected true or false")
        if kind == "str":
            return text
        if kind == "floats":
            return tuple(float(x) for x in _split_list(text))
        if kind == "names":
            return tuple(_split_list(text))
        if kind == "int_or_auto":
            return "auto" if text.lower() == "auto" else int(text)
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split("|")
            if text not in options:
                raise ValueError(f"expected one of {options}")
            return text
    except ValueError as exc:
        raise ValidationError(f"{key}: cannot parse {text!r} as {kind} ({exc})") from None
    raise ValidationError(f"{key}: unsupported parameter type {kind}")


def parse_config(text: str) -> dict:
    """Parse configuration text into a fully defaulted parameter dictionary.

    Raises:
        ValidationError: On syntax errors, a missing ``[scenario]`` section,
            unknown or missing keys, or values that fail validation.
    """
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",), strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"malformed configuration: {exc}") from None
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ValidationError(f"unknown section(s) {extra}; only [{SECTION}] is allowed")
    if not parser.has_section(SECTION):
        raise ValidationError(f"configuration needs a [{SECTION}] section")
    raw = dict(parser.items(SECTION))
    if "kind" not in raw:
        raise ValidationError("kind: required key is missing")
    fields = schema(raw["kind"].strip())
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ValidationError(f"{unknown[0]}: unknown key for kind {raw['kind'].strip()!r}")
    params = {}
    for key, param in fields.items():
        if key in raw:
            params[key] = _convert(key, param, raw[key])
        elif param.default is REQUIRED:
            raise ValidationError(f"{key}: required key is missing")
        else:
            params[key] = param.default
    validate_params(params)
    return params


def load_config(path: str | Path) -> dict:
    """Read and parse a configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read configuration {path}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_csv(series: TimeSeries, path: str | Path, channels: Sequence[str] | None = None) -> None:
    """Write the reported rows of ``series`` as CSV.

    The header is ``t,<name>.re,<name>.im,...,reliable``; numbers carry 17
    significant digits so that parsing them back is lossless.

    Args:
        series: Propagation output.
        path: Destination file.
        channels: Channel names in output order (default: all, insertion order).
    """
    names = list(series.channels) if channels is None else list(channels)
    header = ["t"]
    for name in names:
        header += [f"{name}.re", f"{name}.im"]
    header.append("reliable")
    cols = [np.asarray(series.channels[n], dtype=np.complex128) for n in names]
    lines = [",".join(header)]
    for i in np.flatnonzero(series.reported):
        row = [_fmt(series.times[i])]
        for c in cols:
            row += [_fmt(c[i].real), _fmt(c[i].imag)]
        row.append("1" if series.reliable[i] else "0")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _report_path(params: dict, out: Path) -> Path:
    if params["report"]:
        return Path(params["report"])
    return out.with_name(out.stem + ".report.json")


def _threads() -> int | None:
    value = os.environ.get("PTMPO_THREADS", "0").strip() or "0"
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"PTMPO_THREADS: expected an integer, got {value!r}") from None
    if n < 0:
        raise ValidationError("PTMPO_THREADS: must be non-negative")
    return n or None


def run(
    config: str | Path,
    out: str | Path | None = None,
    save_pt: str | Path | None = None,
    load_pt: str | Path | None = None,
) -> ScenarioResult:
    """Run one scenario and write its CSV and JSON report."""
    params = load_config(config)
    if load_pt is not None and not Path(load_pt).is_file():
        raise ValidationError(f"--load-pt: file {load_pt} does not exist")
    out_path = Path(out) if out is not None else Path(params["output"])
    threads = _threads()
    with threadpool_limits(limits=threads):
        result = run_scenario(params, load_pt=load_pt, save_pt=save_pt)
    emit_csv(result.series, out_path, result.channel_order)
    report_path = _report_path(params, out_path)
    report_path.write_text(json.dumps(_jsonable(result.report), indent=2) + "\n")
    log.info("wrote %s and %s", out_path, report_path)
    return result


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptace", description="PT-MPO scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario configuration")
    r.add_argument("--config", required=True, help="configuration file")
    r.add_argument("--out", help="CSV output path (overrides the config)")
    r.add_argument("--save-pt", help="write the built PT-MPO(s) here")
    r.add_argument("--load-pt", help="reuse a previously saved PT-MPO")
    r.add_argument("-v", "--verbose", action="store_true", help="log build progress")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = run(args.config, args.out, args.save_pt, args.load_pt)
    except (NumericalAbort, DegenerateCompressionError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, PTMPOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rep = result.report
    print(f"{rep['kind']}: max bond {rep['max_bond_dim']}, build {rep['wall_time_build_s']:.2f} s")
    for group in ("residuals", "references"):
        for key, value in rep[group].items():
            print(f"  {key} = {value:.3e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
