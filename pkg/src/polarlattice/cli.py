"""Command-line front end.

Every subcommand reads an optional INI configuration (``--config``), applies
flag overrides, writes its artifacts into ``--out`` and finishes with a
``<command>.manifest.json`` that echoes the resolved configuration, the seed
and the code version.  Failures exit nonzero with a JSON error record on stderr.

Exit codes: 0 success, 1 a verification failed, 2 bad invocation or
configuration, 3 runtime or IO error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .channel import QuantizerConfig
from .construction import ConstructionError, SecrecyCodeSpec, build_spec, leakage_bound, secrecy_rate
from .codec import net_rate
from .lattice import (
    NoiseModel,
    PartitionChain,
    differential_entropy,
    gaussian_entropy,
    mod_channel_capacity,
    partition_channel_capacity,
)
from .sim import leakage_scaling_report, rate_table, rate_table_csv, rows_csv, simulate_bob
from .verify import leakage_instances, equivalence_deviation, run_all

COMMANDS = ("entropy", "capacity", "rates", "construct", "simulate", "equivalence",
            "leakage", "verify")

# section, key, type, default
SETTINGS = [
    ("lattice", "alpha", float, 2.5),
    ("lattice", "levels", int, 3),
    ("noise", "sigma_b", float, 1.0),
    ("noise", "sigma_e", float, 2.0),
    ("construction", "n_exp", int, 10),
    ("construction", "beta", float, 0.3),
    ("construction", "mu", int, 256),
    ("construction", "blocks", int, 8),
    ("simulation", "trials", int, 10000),
    ("simulation", "seed", int, 42),
    ("simulation", "mode", str, "chained"),
    ("simulation", "channel_sigma", float, None),
    ("equivalence", "eq_n_exp", int, 4),
    ("equivalence", "eq_mu", int, 1024),
    ("rates", "grid", str, None),
    ("leakage", "n_exps", str, "8,10,12"),
    ("leakage", "instances", int, 50),
]
KEY_SECTION = {key: section for section, key, _, _ in SETTINGS}


class UsageError(Exception):
    """Bad invocation or configuration (exit code 2)."""


class CheckFailed(Exception):
    """A verification ran and failed (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with per-module sections")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--spec", type=Path, help="code spec JSON (simulate, verify)")
    for _, key, typ, _ in SETTINGS:
        common.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    parser = _Parser(prog="polarlattice",
                     description="Polar lattices for the mod-lattice Gaussian wiretap channel.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "entropy": "differential entropy of the aliased noise per level",
        "capacity": "mod-lattice and partition channel capacities",
        "rates": "achievable secrecy rate table",
        "construct": "build a secrecy code spec (JSON)",
        "simulate": "Monte-Carlo frame error rate of the receiver",
        "equivalence": "compare bit-channels of partition and equivalent channels",
        "leakage": "exact small-instance leakage and the bound scaling report",
        "verify": "run the invariant suite",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags."""
    cfg = {key: default for _, key, _, default in SETTINGS}
    types = {key: typ for _, key, typ, _ in SETTINGS}
    if args.config is not None:
        ini = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                ini.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"cannot parse config {args.config}: {exc}") from exc
        for section in ini.sections():
            for key, raw in ini.items(section):
                if KEY_SECTION.get(key) != section:
                    raise UsageError(f"unknown setting [{section}] {key}")
                try:
                    cfg[key] = types[key](raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for [{section}] {key}: {raw!r}") from exc
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _chain(cfg) -> PartitionChain:
    return PartitionChain(cfg["alpha"], cfg["levels"])


def _noise(cfg) -> NoiseModel:
    return NoiseModel(cfg["sigma_b"], cfg["sigma_e"])


def _construct(cfg, n_exp=None) -> SecrecyCodeSpec:
    spec = build_spec(_chain(cfg), _noise(cfg), n_exp or cfg["n_exp"], cfg["beta"],
                      QuantizerConfig(cfg["mu"]), cfg["blocks"])
    return replace(spec, meta={"config": _spec_config(cfg)})


def _spec_config(cfg) -> dict:
    keys = ("alpha", "levels", "sigma_b", "sigma_e", "n_exp", "beta", "mu", "blocks")
    return {k: cfg[k] for k in keys}


def _load_or_construct(cfg, args) -> SecrecyCodeSpec:
    if args.spec is None:
        return _construct(cfg)
    try:
        text = args.spec.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read spec {args.spec}: {exc}") from exc
    try:
        return SecrecyCodeSpec.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid spec {args.spec}: {exc}") from exc


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _sigmas(cfg):
    return (cfg["sigma_b"], cfg["sigma_e"])


def cmd_entropy(cfg, args):
    chain = _chain(cfg)
    rows = []
    for sigma in _sigmas(cfg):
        for level in range(1, chain.levels + 1):
            h = differential_entropy(chain, level, sigma)
            rows.append((level, sigma, chain.cell_volume(level), h, gaussian_entropy(sigma)))
    text = _csv(["level", "sigma", "volume", "entropy_bits", "gaussian_entropy_bits"], rows)
    return {"entropy.csv": text}, {}


def cmd_capacity(cfg, args):
    chain = _chain(cfg)
    rows = []
    for sigma in _sigmas(cfg):
        for level in range(1, chain.levels + 1):
            part = partition_channel_capacity(chain, level, sigma) if level < chain.levels \
                else ""
            rows.append((level, sigma, mod_channel_capacity(chain, level, sigma), part))
    text = _csv(["level", "sigma", "mod_capacity_bits", "partition_capacity_bits"], rows)
    return {"capacity.csv": text}, {}


def _parse_grid(cfg):
    if not cfg["grid"]:
        return [(cfg["alpha"], cfg["levels"], cfg["sigma_b"], cfg["sigma_e"])]
    grid = []
    for item in cfg["grid"].split(";"):
        parts = [p.strip() for p in item.split(",")]
        if len(parts) != 4:
            raise UsageError(f"grid entries are 'alpha,r,sigma_b,sigma_e', got {item!r}")
        try:
            grid.append((float(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise UsageError(f"bad grid entry {item!r}") from exc
    return grid


def cmd_rates(cfg, args):
    rows = rate_table(_parse_grid(cfg))
    summary = {"gap_bits": [r.gap for r in rows], "gap_nats": [r.gap_nats for r in rows]}
    return {"rates.csv": rate_table_csv(rows)}, summary


def cmd_construct(cfg, args):
    spec = _construct(cfg)
    summary = {
        "n": spec.n,
        "set_sizes": [[len(p.a), len(p.b), len(p.c), len(p.d)] for p in spec.partitions],
        "secrecy_rate": secrecy_rate(spec),
        "net_rate": float(net_rate(spec)),
        "leakage_bound": leakage_bound(spec),
    }
    return {"spec.json": spec.to_json(indent=1) + "\n"}, summary


def cmd_simulate(cfg, args):
    spec = _load_or_construct(cfg, args)
    res = simulate_bob(spec, cfg["trials"], seed=cfg["seed"], mode=cfg["mode"],
                       sigma=cfg["channel_sigma"])
    cols = ["n", "mode", "sigma", "trials", "errors", "fer", "ci_low", "ci_high",
            "level_errors", "chains", "chain_errors"]
    row = (spec.n, res.mode, res.sigma, res.trials, res.errors, res.fer, res.ci_low,
           res.ci_high, ";".join(map(str, res.level_errors)), res.chains, res.chain_errors)
    return {"fer.csv": _csv(cols, [row])}, {"fer": res.fer, "errors": res.errors}


def cmd_equivalence(cfg, args):
    chain = _chain(cfg)
    q = QuantizerConfig(cfg["eq_mu"])
    rows, worst, tol = [], 0.0, 0.0
    for sigma in _sigmas(cfg):
        for level in sorted({1, chain.levels - 1}):
            d_mi, d_z, tol = equivalence_deviation(chain, sigma, cfg["eq_n_exp"], q, [level])
            rows.append((level, sigma, d_mi, d_z, tol))
            worst = max(worst, d_mi, d_z)
    print(f"max deviation {worst:.6g} (tolerance {tol:.6g})")
    out = {"equivalence.csv": _csv(["level", "sigma", "max_abs_dI", "max_abs_dZ", "tolerance"],
                                   rows)}
    summary = {"max_deviation": worst, "tolerance": tol}
    if worst > tol:
        raise CheckFailed(f"deviation {worst} exceeds tolerance {tol}", out, summary)
    return out, summary


def cmd_leakage(cfg, args):
    rows = []
    for k, (spec, exact, bound) in enumerate(leakage_instances(cfg["instances"], cfg["seed"])):
        p = spec.partitions[0]
        rows.append((k, spec.n, spec.chain.alpha, spec.noise.sigma_e,
                     " ".join(map(str, p.a)), " ".join(map(str, p.b)),
                     " ".join(map(str, p.c)), " ".join(map(str, p.d)), exact, bound))
    exact_csv = _csv(["instance", "n", "alpha", "sigma_e", "a", "b", "c", "d",
                      "exact_bits", "bound_bits"], rows)
    try:
        n_exps = [int(v) for v in cfg["n_exps"].split(",")]
    except ValueError as exc:
        raise UsageError(f"bad n_exps {cfg['n_exps']!r}") from exc
    specs = [_construct(cfg, n) for n in n_exps]
    report = leakage_scaling_report(_chain(cfg), _noise(cfg), cfg["beta"], n_exps,
                                    QuantizerConfig(cfg["mu"]), specs=specs)
    out = {"leakage_exact.csv": exact_csv, "leakage_scaling.csv": rows_csv(report)}
    violations = sum(r[-2] > r[-1] + 1e-9 for r in rows)
    summary = {"violations": violations, "bounds": [r.leakage_bound for r in report]}
    if violations:
        raise CheckFailed(f"{violations} instances exceed the bound", out, summary)
    return out, summary


def cmd_verify(cfg, args):
    spec = _load_or_construct(cfg, args) if args.spec else _construct(cfg, min(cfg["n_exp"], 8))
    checks = run_all(spec, seed=cfg["seed"])
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}")
    out = {"verify.json": json.dumps([asdict(c) for c in checks], indent=1) + "\n"}
    failed = [c.name for c in checks if not c.ok]
    summary = {"failed": failed}
    if failed:
        raise CheckFailed(f"failed checks: {', '.join(failed)}", out, summary)
    return out, summary


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _write(out_dir: Path, files: dict, command: str, cfg: dict, summary: dict, status: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8")
    manifest = {"command": command, "status": status, "code_version": __version__,
                "seed": cfg["seed"], "config": cfg, "outputs": sorted(files),
                "summary": summary}
    (out_dir / f"{command}.manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _fail(code: int, kind: str, message: str, command: str | None) -> int:
    record = {"error": kind, "message": message, "command": command}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        cfg = resolve_config(args)
        try:
            files, summary = HANDLERS[command](cfg, args)
        except CheckFailed as exc:
            message, files, summary = exc.args
            _write(args.out, files, command, cfg, summary, "failed")
            return _fail(1, "CheckFailed", message, command)
        _write(args.out, files, command, cfg, summary, "ok")
        return 0
    except UsageError as exc:
        return _fail(2, "UsageError", str(exc), command)
    except (ValueError, ConstructionError) as exc:
        return _fail(2, type(exc).__name__, str(exc), command)
    except OSError as exc:
        return _fail(3, type(exc).__name__, str(exc), command)
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable record
        return _fail(3, type(exc).__name__, str(exc), command)


if __name__ == "__main__":
    sys.exit(main())
