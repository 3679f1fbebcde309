"""Command-line front end: ``pufexperts <command> ...``.

Every invocation writes a JSON run manifest (flags, seeds, version, input and
output digests) and appends attack results to a line-per-record JSON file.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace

from . import __version__
from .attacks import ATTACKS, run_attack
from .dataset import generate_crps, load_crps, save_crps, split_counts
from .errors import FormatError, InvalidArgument, SearchExhausted, TrainingDiverged
from .metrics import SearchResult, crp_search, cross_matrix, markdown_table
from .mmope import MmopeConfig, combined_report, train_mmope
from .mope import MopeConfig
from .puf import derive_seed, parse_spec

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DIVERGED, EXIT_EXHAUSTED = 0, 2, 3, 4, 5

DEFAULT_XCHECK_TARGETS = "xor:2,xor:3,xor:4,xor:5,ff:1-1:homo,ipuf:1,5"
DEFAULT_XCHECK_BUDGETS = "8000,24000,80000,240000,20000,480000"
DEFAULT_XCHECK_MODELS = "mope,mursi:2"

log = logging.getLogger("pufexperts")


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _split_specs(text):
    """Split a comma-joined spec list without breaking ``ipuf:X,Y``."""
    out, parts = [], text.split(",")
    i = 0
    while i < len(parts):
        tok = parts[i].strip()
        if tok.startswith("ipuf:") and "," not in tok and i + 1 < len(parts) and parts[i + 1].strip().isdigit():
            tok = f"{tok},{parts[i + 1].strip()}"
            i += 1
        out.append(tok)
        i += 1
    return out


def _parse_specs(text, n, seed):
    specs = []
    for i, tok in enumerate(_split_specs(text)):
        try:
            specs.append(parse_spec(tok, n, derive_seed(seed, i)))
        except InvalidArgument as e:
            raise UsageError(f"bad PUF spec {tok!r}: {e}") from None
    return specs


def _mope_config(args) -> MopeConfig:
    over = {"seed": args.seed}
    for flag, key in (("experts", "num_experts"), ("tau", "tau"), ("lr", "lr"),
                      ("max_epochs", "max_epochs"), ("val_fraction", "val_fraction")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    return replace(MopeConfig(), **over)


def _append_lines(args, lines):
    """Append record lines; their digest goes into the run manifest."""
    text = "".join(line + "\n" for line in lines)
    args._appended = hashlib.sha256(text.encode()).hexdigest()
    if args.records:
        with open(args.records, "a", encoding="utf-8") as f:
            f.write(text)


def _append_records(args, reports):
    if args.deterministic:
        reports = [replace(r, wall_time=0.0) for r in reports]
    _append_lines(args, [r.to_record() for r in reports])


def _labelled(report, label):
    # the label is bookkeeping for report tables; it never reaches the model
    if not label:
        return report
    return replace(report, extra={**report.extra, "label": label})


def _print_reports(reports, deterministic):
    for r in reports:
        print((replace(r, wall_time=0.0) if deterministic else r).to_record())


def _manifest(args, inputs, outputs):
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "_appended")}
    body = {
        "subcommand": args.command,
        "flags": flags,
        "seeds": {k: v for k, v in flags.items() if "seed" in k},
        "version": __version__,
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in outputs if os.path.exists(p)},
    }
    if getattr(args, "_appended", None):
        body["appended_records_sha256"] = args._appended
    path = args.manifest
    if path is None:
        key = hashlib.sha256(json.dumps(flags, sort_keys=True, default=str).encode()).hexdigest()[:12]
        path = os.path.join(args.manifest_dir, f"{args.command}-{key}.json")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


def cmd_gen(args):
    specs = _parse_specs(args.spec, args.n, args.puf_seed)
    crps = generate_crps(specs, args.challenge_seed, args.count)
    save_crps(crps, args.out)
    print(f"wrote {len(crps)} CRPs x {crps.tasks} task(s) to {args.out}")
    return [], [args.out]


def _load_split(args):
    crps = load_crps(args.inp)
    if args.train < 1 or args.test < 1:
        raise UsageError("--train and --test must be >= 1")
    if args.train + args.test > len(crps):
        raise UsageError(f"--train {args.train} + --test {args.test} exceeds the {len(crps)} rows in {args.inp}")
    return crps, split_counts(crps, args.train, args.test, derive_seed(args.seed, 7))


def cmd_attack(args):
    if args.attack == "mope" and args.k is not None:
        raise UsageError("mope requires no structure knowledge")
    if args.attack != "mope" and args.k is None:
        raise UsageError(f"--attack {args.attack} needs --k")
    crps, (train, test) = _load_split(args)
    if not 0 <= args.task < crps.tasks:
        raise UsageError(f"--task {args.task} out of range for a {crps.tasks}-task file")
    if crps.tasks > 1:
        train, test = train.column(args.task), test.column(args.task)
    model, report = run_attack(args.attack, train, test, args.k, _mope_config(args))
    report = _labelled(report, args.label)
    _print_reports([report], args.deterministic)
    _append_records(args, [report])
    outputs = []
    if args.save_model:
        if not hasattr(model, "save"):
            raise UsageError(f"--save-model is not supported for {args.attack}")
        model.save(args.save_model)
        outputs.append(args.save_model)
    return [args.inp], outputs


def cmd_attack_multi(args):
    crps, (train, test) = _load_split(args)
    if crps.tasks < 2:
        raise UsageError(f"attack-multi needs a file with >= 2 response columns, {args.inp} has {crps.tasks}")
    cfg = MmopeConfig(**{**asdict(_mope_config(args)), "tasks": crps.tasks})
    model, reports = train_mmope(train, cfg, test)
    reports = [_labelled(r, args.label) for r in reports + [combined_report(reports)]]
    _print_reports(reports, args.deterministic)
    _append_records(args, reports)
    outputs = []
    if args.save_model:
        model.save(args.save_model)
        outputs.append(args.save_model)
    return [args.inp], outputs


def cmd_search(args):
    spec = _parse_specs(args.spec, args.n, args.seed)
    if len(spec) != 1:
        raise UsageError("search takes exactly one --spec")
    if args.attack == "mope" and args.k is not None:
        raise UsageError("mope requires no structure knowledge")
    cfg = _mope_config(args)
    try:
        result = crp_search(spec[0], args.attack, args.start, args.target, args.m, cap=args.cap,
                            seed=args.seed, n_test=args.n_test, k=args.k, cfg=cfg)
    except SearchExhausted as e:
        if args.out:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write(SearchResult(0, e.ledger).to_csv())
        raise
    print(result.to_markdown())
    print(f"minimal CRP count: {result.minimal_count}")
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(result.to_csv())
        outputs.append(args.out)
    rec = {"kind": "search", "spec": spec[0].label(), "attack": args.attack, "k": args.k,
           "target": args.target, "m": args.m, "minimal_count": result.minimal_count,
           "ledger": [asdict(t) for t in result.ledger]}
    _append_lines(args, [json.dumps(rec, sort_keys=True)])
    return [], outputs


def _parse_models(text):
    models = []
    for tok in text.split(","):
        name, _, k = tok.strip().partition(":")
        if name not in ATTACKS:
            raise UsageError(f"unknown model {tok!r}")
        if name == "mope" and k:
            raise UsageError("mope requires no structure knowledge")
        if name != "mope" and not k.isdigit():
            raise UsageError(f"model {tok!r} needs a width, e.g. {name}:2")
        models.append((name, int(k) if k else None))
    return models


def cmd_xcheck(args):
    targets = _parse_specs(args.targets, args.n, args.seed)
    try:
        budgets = [int(b) for b in args.budgets.split(",")]
    except ValueError:
        raise UsageError(f"bad --budgets {args.budgets!r}") from None
    if len(budgets) != len(targets):
        raise UsageError(f"{len(targets)} targets but {len(budgets)} budgets")
    grid = cross_matrix(_parse_models(args.models), targets, budgets, seed=args.seed,
                        n_test=args.n_test, cfg=_mope_config(args))
    print(grid.to_markdown())
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(grid.to_csv())
        outputs.append(args.out)
    return [], outputs


def _fmt_count(n):
    if n >= 1_000_000 and n % 100_000 == 0:
        return f"{n / 1_000_000:g}M"
    if n >= 1000 and n % 1000 == 0:
        return f"{n // 1000}k"
    return str(n)


def _fmt_time(t):
    return f"{t:.1f}s" if t < 120 else f"{t / 60:.1f}min"


def render_table(records, table: str, fmt: str = "markdown", expected=None) -> str:
    """Aggregate attack records into one of the result-table layouts.

    Table II rows are single-task records (Method, k, crp, time, acc); Table V
    rows are multi-task combined records.  ``k`` is read from the record's
    ``label`` or config when present.
    """
    table = table.upper()
    if table == "II":
        rows_in = [r for r in records if r.get("attack") in ATTACKS and r.get("task") is None]
    elif table == "V":
        rows_in = [r for r in records if r.get("attack") in ("mmope", "share-bottom") and r.get("task") is None]
    else:
        raise UsageError(f"unknown table {table!r}; choose II or V")
    labels = {(r.get("extra") or {}).get("label") for r in rows_in}
    missing = [i for i in (expected or []) if i not in labels]
    if missing or not rows_in:
        raise UsageError(f"no records for table {table}; missing experiment ids: "
                         f"{', '.join(missing) if missing else table}")
    header = ["Method", "k", "crp", "time", "acc"]
    rows = []
    for r in rows_in:
        label = (r.get("extra") or {}).get("label")
        k = (label.split(":", 1)[1] if label and ":" in label else label) or (r.get("config") or {}).get("k") or "-"
        acc = r.get("accuracy")
        rows.append([r["attack"], str(k), _fmt_count(int(r["n_train"])), _fmt_time(float(r["wall_time"])),
                     "-" if acc is None else f"{100 * acc:.2f}%"])
    if fmt == "csv":
        import csv
        import io
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(header)
        w.writerows(rows)
        return out.getvalue()
    return markdown_table(header, rows)


def cmd_report(args):
    records = []
    for path in args.records_in:
        if not os.path.exists(path):
            raise UsageError(f"missing record file {path}")
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except ValueError:
                    raise FormatError(f"{path}: unreadable record", line=lineno) from None
    text = render_table(records, args.table, args.format, args.ids)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    print(text, end="")
    return list(args.records_in), [args.out] if args.out else []


def _add_common(p, records=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="manifest path (default: <manifest-dir>/<command>-<hash>.json)")
    p.add_argument("--manifest-dir", default="manifests")
    p.add_argument("--deterministic", action="store_true", help="record wall times as 0 so outputs are bit-exact")
    if records:
        p.add_argument("--records", default="records.jsonl", help="append-only record file ('' to skip)")


def _add_overrides(p):
    g = p.add_argument_group("model config overrides")
    g.add_argument("--experts", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--val-fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pufexperts", description="PUF simulation and mixture-of-experts modelling attacks")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="simulate PUFs and write a CRPB file")
    p.add_argument("--spec", required=True, help="comma-separated PUF specs, one response column each")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--puf-seed", type=int, default=0)
    p.add_argument("--challenge-seed", type=int, default=1)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_common(p, records=False)
    p.set_defaults(func=cmd_gen)

    for name, func in (("attack", cmd_attack), ("attack-multi", cmd_attack_multi)):
        p = sub.add_parser(name, help="train on a CRPB file and report held-out accuracy")
        p.add_argument("--in", dest="inp", required=True)
        if name == "attack":
            p.add_argument("--attack", choices=ATTACKS, default="mope")
            p.add_argument("--k", type=int)
            p.add_argument("--task", type=int, default=0, help="response column for multi-task files")
        p.add_argument("--train", type=int, required=True)
        p.add_argument("--test", type=int, default=10_000)
        p.add_argument("--save-model")
        p.add_argument("--label", help="experiment id stored in the record, e.g. xor:4")
        _add_common(p)
        _add_overrides(p)
        p.set_defaults(func=func)

    p = sub.add_parser("search", help="find the smallest CRP budget that models fresh PUFs")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--attack", choices=ATTACKS, default="mope")
    p.add_argument("--k", type=int)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--cap", type=int, default=8_000_000)
    p.add_argument("--n-test", type=int, default=10_000)
    p.add_argument("--out")
    _add_common(p)
    _add_overrides(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("xcheck", help="cross-architecture accuracy grid")
    p.add_argument("--targets", default=DEFAULT_XCHECK_TARGETS)
    p.add_argument("--budgets", default=DEFAULT_XCHECK_BUDGETS)
    p.add_argument("--models", default=DEFAULT_XCHECK_MODELS)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--n-test", type=int, default=10_000)
    p.add_argument("--out")
    _add_common(p, records=False)
    _add_overrides(p)
    p.set_defaults(func=cmd_xcheck)

    p = sub.add_parser("report", help="render stored records as a result table")
    p.add_argument("--table", required=True, help="II (single-task) or V (multi-task)")
    p.add_argument("--records-in", nargs="+", default=["records.jsonl"])
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--ids", nargs="*", help="experiment labels that must be present")
    p.add_argument("--out")
    _add_common(p, records=False)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "records", None) == "":
        args.records = None
    try:
        inputs, outputs = args.func(args)
        _manifest(args, inputs, outputs)
        return EXIT_OK
    except (UsageError, InvalidArgument) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except SearchExhausted as e:
        print(f"search exhausted: {e}", file=sys.stderr)
        return EXIT_EXHAUSTED
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
