"""Command line: ``gcf run|validate-obstacle|probe|suite``.

Exit codes: 0 all checks pass, 2 a check failed, 3 solver error,
4 configuration error.  ``GCF_THREADS`` caps the numba thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from importlib import resources

from .config import load_config
from .errors import ConfigError, ParseError, ValidationError
from .driver import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    run_scenario,
    validate_obstacle,
    write_report,
)


def _threads():
    val = os.environ.get("GCF_THREADS")
    if not val:
        return
    import numba

    try:
        k = int(val)
    except ValueError:
        return
    with warnings.catch_warnings():
        # threading-layer availability notices are irrelevant here
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(max(1, min(k, numba.config.NUMBA_NUM_THREADS)))


def fixture_dir() -> str:
    return str(resources.files("gcf") / "fixtures")


def fixture_paths() -> list:
    d = fixture_dir()
    return sorted(os.path.join(d, f) for f in os.listdir(d) if f.endswith(".json"))


def _load(path):
    try:
        return load_config(path), None
    except ParseError as exc:
        where = f"line {exc.line}" if exc.line else f"field {exc.field}"
        return None, f"parse error ({where}): {exc}"
    except ValidationError as exc:
        return None, "invalid configuration:\n  " + "\n  ".join(exc.violations)
    except (ConfigError, OSError) as exc:
        return None, f"configuration error: {exc}"


def _summary(result, name):
    lines = [f"{name}: status {result.status} ({result.message})"]
    for c in result.checks:
        lines.append(f"  {'PASS' if c.passed else 'FAIL'} {c.id} margin={c.margin:.6g}")
    return "\n".join(lines)


def cmd_run(path, out, only=None) -> int:
    cfg, err = _load(path)
    if cfg is None:
        print(err, file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if only == ["free_boundary"] and cfg.probe is None:
        print("configuration error: no 'probe' section", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    out = out or cfg.output
    result = run_scenario(cfg, out, only=only)
    write_report(os.path.join(out, "report.json"), cfg.name, result)
    print(_summary(result, cfg.name))
    return result.status


def cmd_validate(path) -> int:
    cfg, err = _load(path)
    if cfg is None:
        print(err, file=sys.stderr)
        return EXIT_CONFIG_ERROR
    code, rep = validate_obstacle(cfg)
    print(json.dumps(rep, indent=2, sort_keys=True, default=float))
    return code


def cmd_suite(out) -> int:
    """Run every shipped fixture; negative controls must fail their checks."""
    worst = EXIT_OK
    for path in fixture_paths():
        name = os.path.splitext(os.path.basename(path))[0]
        code = cmd_run(path, os.path.join(out, name))
        expected = EXIT_CHECK_FAILED if name.startswith("neg_") else EXIT_OK
        ok = code == expected
        print(f"{'OK ' if ok else 'BAD'} {name}: exit {code}, expected {expected}")
        if not ok:
            worst = EXIT_CHECK_FAILED
    return worst


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gcf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="integrate a scenario and run its checks")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: the config's 'output')")
    p = sub.add_parser("validate-obstacle", help="check obstacle admissibility only")
    p.add_argument("config")
    p = sub.add_parser("probe", help="integrate and run the free-boundary probes only")
    p.add_argument("config")
    p.add_argument("--out")
    p = sub.add_parser("suite", help="run every shipped fixture")
    p.add_argument("--out", default="gcf_suite_out")
    sub.add_parser("fixtures", help="print the fixture directory")
    args = ap.parse_args(argv)
    _threads()
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "validate-obstacle":
        return cmd_validate(args.config)
    if args.command == "probe":
        return cmd_run(args.config, args.out, only=["free_boundary"])
    if args.command == "suite":
        return cmd_suite(args.out)
    print(fixture_dir())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
