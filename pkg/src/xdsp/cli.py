"""``xdsp`` command line: prepare, embed-stats, train, adapt, evaluate, sweep, report.

Results go to files; diagnostics go to stderr. Exit status is 0 on success,
1 on data or file errors and 2 on usage errors. Every command writes a
``RunManifest`` next to its output recording the argv, resolved config,
input digests, seed and output paths, so a run can be replayed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import atomic_write_bytes, load_checkpoint, save_checkpoint
from .corpus import (
    DOMAIN_STATS_HEADER,
    Splits,
    build_vocabulary,
    domain_statistics,
    downsample,
    format_domain,
    load_domains,
    merge_source_domains,
    split_domain,
)
from .embed import (
    STATS_HEADER,
    EmbeddingMatrix,
    apply_strategy,
    embedding_stats,
    random_embedding,
    read_embedding_file,
)
from .evaluator import (
    EvalReport,
    config_fingerprint,
    evaluate_accuracy,
    pearson_correlation,
    sweep_means,
)
from .exceptions import ContractError, DegenerateError, PairingError, XdspError
from .trainer import TrainConfig, adapt, initial_params, train
from .validation import parse_float_list, parse_int_pair

DEFAULT_RATES = "0.1,0.2,0.3,0.5,0.7,1.0"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# -- manifest and file helpers ------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    inputs: dict
    seed: int
    outputs: list
    duration_s: float = 0.0
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_inputs(paths):
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = sha256_file(f)
    return out


def write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# -- configuration -----------------------------------------------------------------


def resolve_config(args):
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ContractError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ContractError(f"{args.config}: config must be a JSON object")
    cfg = TrainConfig.from_dict(data)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "embeddings", None):
        overrides.update(embedding_init="pretrained", embeddings_path=args.embeddings)
    if getattr(args, "strategy", None):
        overrides["embedding_transform"] = args.strategy
    return replace(cfg, **overrides) if overrides else cfg


def _domains(data_dir, names):
    domains = {d.name: d for d in load_domains(data_dir)}
    wanted = [n for n in names.split(",") if n]
    missing = [n for n in wanted if n not in domains]
    if missing:
        raise ContractError(f"unknown domain(s) {', '.join(missing)}; have {', '.join(sorted(domains))}")
    return domains, [domains[n] for n in wanted]


def _target(data_dir, names):
    _, chosen = _domains(data_dir, names)
    return chosen[0] if len(chosen) == 1 else merge_source_domains(chosen, name="+".join(names.split(",")))


# -- commands -------------------------------------------------------------------------


def cmd_prepare(args):
    domains, chosen = _domains(args.data, args.target)
    embedding_vocab = ()
    if args.embeddings:
        found, _ = read_embedding_file(args.embeddings)
        embedding_vocab = found.keys()
    outputs = []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = domain_statistics(list(domains.values()), embedding_vocab)
    write_text(out / "domain_stats.csv", csv_text(DOMAIN_STATS_HEADER, [s.as_row() for s in stats]))
    outputs.append(str(out / "domain_stats.csv"))
    for dom in chosen:
        sp = split_domain(dom, args.seed)
        for part in ("train", "validation", "test"):
            path = out / f"{dom.name}.{part}.tsv"
            write_text(path, format_domain(dom.with_examples(getattr(sp, part))))
            outputs.append(str(path))
    return {}, [args.data, args.embeddings], outputs


def cmd_embed_stats(args):
    if bool(args.embeddings) == bool(args.random):
        raise UsageError("embed-stats: give exactly one of --embeddings or --random V,D")
    if args.random:
        V, D = parse_int_pair(args.random, "--random")
        base = random_embedding(V, D, args.seed)
    else:
        found, _ = read_embedding_file(args.embeddings)
        if len(found) < 2:
            raise ContractError(f"{args.embeddings}: need at least 2 vectors")
        words = sorted(found)
        base = EmbeddingMatrix(np.stack([found[w] for w in words]), words,
                               np.ones(len(words), dtype=bool), strategy="raw")
    rows = []
    for strategy in args.strategy.split(","):
        E = apply_strategy(base, strategy)
        rows.append(embedding_stats(E, n_pairs=args.pairs, seed=args.seed).as_row(E.strategy))
    write_text(args.out, csv_text(STATS_HEADER, rows))
    return {"strategies": args.strategy.split(",")}, [args.embeddings], [args.out]


def _train_target(cfg, domain, splits, source=None):
    if source is not None:
        return adapt(source, domain, cfg, splits)
    vocab = build_vocabulary([domain])
    return train(cfg, splits, initial_params(cfg, vocab), vocab, domain)


def cmd_train(args):
    cfg = resolve_config(args)
    domain = _target(args.data, args.target)
    ckpt = _train_target(cfg, domain, split_domain(domain, cfg.seed))
    save_checkpoint(ckpt, args.out)
    return cfg.to_dict(), [args.config, args.data, cfg.embeddings_path], [args.out]


def cmd_adapt(args):
    cfg = resolve_config(args)
    domain = _target(args.data, args.target)
    source = load_checkpoint(args.source_ckpt)
    sp = split_domain(domain, cfg.seed)
    if args.rate < 1.0:
        sp = Splits(downsample(sp.train, args.rate, cfg.seed),
                    downsample(sp.validation, args.rate, cfg.seed), sp.test, sp.seed)
    ckpt = _train_target(cfg, domain, sp, source)
    save_checkpoint(ckpt, args.out)
    return cfg.to_dict(), [args.config, args.data, args.source_ckpt, cfg.embeddings_path], [args.out]


def _strategy_label(cfg):
    return "random" if cfg.embedding_init == "random" else cfg.embedding_transform


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.ckpt)
    cfg = TrainConfig.from_dict(ckpt.config)
    domain = _target(args.data, args.target)
    seed = cfg.seed if args.seed is None else args.seed
    test = split_domain(domain, seed).test
    acc, preds = evaluate_accuracy(ckpt.params, ckpt.vocabulary, test, domain, return_predictions=True)
    setting = args.role or ("X" if ckpt.lineage else "I")
    report = EvalReport(
        domain=domain.name, setting=setting, init_strategy=args.label or _strategy_label(cfg),
        accuracy=acc, n_examples=len(domain.examples), vocab_size=len(domain.content_vocabulary()),
        n_test=len(test), config_fingerprint=config_fingerprint(ckpt.config), seed=seed,
        predictions=preds)
    write_text(args.out, report.to_json())
    return ckpt.config, [args.ckpt, args.data], [args.out]


def cmd_sweep(args):
    cfg = resolve_config(args)
    domain = _target(args.data, args.target)
    source = load_checkpoint(args.source_ckpt) if args.source_ckpt else None
    rates = parse_float_list(args.rates, "--rates")
    if args.repeats < 1:
        raise ContractError("--repeats must be >= 1")
    base = split_domain(domain, cfg.seed)
    runs = []
    for rate in rates:
        for r in range(args.repeats):
            run_seed = cfg.seed + r
            sp = Splits(downsample(base.train, rate, run_seed),
                        downsample(base.validation, rate, run_seed) if base.validation else [],
                        base.test, cfg.seed)
            ckpt = _train_target(replace(cfg, seed=run_seed), domain, sp, source)
            acc = evaluate_accuracy(ckpt.params, ckpt.vocabulary, base.test, domain)
            runs.append((rate, r, run_seed, acc))
            print(f"rate={rate} repeat={r} seed={run_seed} accuracy={acc:.4f}", file=sys.stderr)
    means = sweep_means(runs, args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_rows = [[rate, r, s, repr(float(a))] for rate, r, s, a in runs]
    write_text(out / "sweep.csv", csv_text(["rate", "repeat", "seed", "accuracy"], csv_rows))
    report = EvalReport(
        domain=domain.name, setting="X" if source is not None else "I",
        init_strategy=args.label or _strategy_label(cfg), accuracy=means[max(means)],
        n_examples=len(domain.examples), vocab_size=len(domain.content_vocabulary()),
        n_test=len(base.test), config_fingerprint=config_fingerprint(cfg.to_dict()), seed=cfg.seed,
        sweep=means, sweep_runs=[list(x) for x in runs], repeats=args.repeats)
    write_text(out / "report.json", report.to_json())
    return (cfg.to_dict(), [args.config, args.data, args.source_ckpt, cfg.embeddings_path],
            [str(out / "sweep.csv"), str(out / "report.json")])


def pair_reports(reports):
    """``{(domain, strategy): (I report, X report)}``; any unpaired run is an error."""
    slots = {}
    for rep in reports:
        if rep.setting not in ("I", "X"):
            raise ContractError(f"report for {rep.domain} has unknown setting {rep.setting!r}")
        slot = slots.setdefault((rep.domain, rep.init_strategy), {})
        if rep.setting in slot:
            raise ContractError(f"two {rep.setting} reports for {rep.domain}/{rep.init_strategy}")
        slot[rep.setting] = rep
    orphans = [f"{d}/{s}/{next(iter(v))}" for (d, s), v in slots.items() if len(v) != 2]
    if orphans:
        raise PairingError(orphans)
    return {k: (v["I"], v["X"]) for k, v in sorted(slots.items())}


def correlation_rows(pairs):
    """``(strategy, r or None)`` for abundance vs X - I, one row per strategy."""
    by_strategy = {}
    for (_, strategy), (i_rep, x_rep) in pairs.items():
        by_strategy.setdefault(strategy, []).append((i_rep.abundance, x_rep.accuracy - i_rep.accuracy))
    rows = []
    for strategy, pts in sorted(by_strategy.items()):
        try:
            r = pearson_correlation([p[0] for p in pts], [p[1] for p in pts])
        except (DegenerateError, ContractError):
            r = None
        rows.append((strategy, r))
    return rows


def cmd_report(args):
    files = sorted(Path(args.data).glob("*.json"))
    reports = []
    for f in files:
        if f.name == "manifest.json":
            continue
        reports.append(EvalReport.from_json(f.read_text(encoding="utf-8")))
    if not reports:
        raise ContractError(f"no reports in {args.data}")
    pairs = pair_reports(reports)
    corr = correlation_rows(pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table = []
    for (dom, strategy), (i_rep, x_rep) in pairs.items():
        table.append([dom, strategy, repr(i_rep.accuracy), repr(x_rep.accuracy),
                      repr(x_rep.accuracy - i_rep.accuracy), repr(i_rep.abundance)])
    header = ["domain", "init_strategy", "in_domain", "cross_domain", "improvement", "abundance"]
    outputs = [out / "improvements.csv", out / "correlation.csv", out / "report.md"]
    write_text(outputs[0], csv_text(header, table))
    write_text(outputs[1], csv_text(
        ["init_strategy", "pearson_r"],
        [[s, "degenerate" if r is None else repr(float(r))] for s, r in corr]))

    lines = ["| domain | init | I | X | X-I | N/V |", "|---|---|---|---|---|---|"]
    for dom, strategy, i_acc, x_acc, imp, ab in table:
        lines.append(f"| {dom} | {strategy} | {float(i_acc):.4f} | {float(x_acc):.4f} | "
                     f"{float(imp):+.4f} | {float(ab):.3f} |")
    lines += ["", "| init | pearson r |", "|---|---|"]
    lines += [f"| {s} | {'degenerate (zero variance)' if r is None else f'{r:.4f}'} |" for s, r in corr]
    write_text(outputs[2], "\n".join(lines) + "\n")

    for rep in reports:
        if rep.sweep_runs:
            path = out / f"sweep_{rep.domain}_{rep.setting}_{rep.init_strategy}.csv"
            write_text(path, csv_text(["rate", "repeat", "seed", "accuracy"],
                                      [[a, b, c, repr(float(d))] for a, b, c, d in rep.sweep_runs]))
            outputs.append(path)
    return {}, [args.data], [str(p) for p in outputs]


# -- parser -----------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="xdsp", description="Paraphrase-based semantic parsing across domains.")
    p.add_argument("--version", action="version", version=f"xdsp {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def command(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        return sp

    def training_flags(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TrainConfig JSON")
        sp.add_argument("--data", required=True, help="directory of <domain>.tsv files")
        sp.add_argument("--target", required=True, help="domain name (comma list merges domains)")
        sp.add_argument("--embeddings", help="pre-trained embedding text file")
        sp.add_argument("--strategy", choices=["none", "es", "fs", "en"], help="embedding transform")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)

    sp = command("prepare", cmd_prepare, "split a domain and write domain statistics")
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--embeddings")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")

    sp = command("embed-stats", cmd_embed_stats, "embedding matrix statistics per transform")
    sp.add_argument("--embeddings")
    sp.add_argument("--random", metavar="V,D")
    sp.add_argument("--strategy", default="none", help="comma list of none,es,fs,en")
    sp.add_argument("--pairs", type=int, default=100_000, help="sampled row pairs for cosine stats")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = command("train", cmd_train, "train an in-domain model")
    training_flags(sp)

    sp = command("adapt", cmd_adapt, "fine-tune a source checkpoint on a target domain")
    training_flags(sp)
    sp.add_argument("--source-ckpt", required=True)
    sp.add_argument("--rate", type=float, default=1.0, help="fraction of target train data")

    sp = command("evaluate", cmd_evaluate, "test-split accuracy of a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--seed", type=int, help="split seed (default: checkpoint seed)")
    sp.add_argument("--role", choices=["I", "X"], help="setting label (default: from lineage)")
    sp.add_argument("--label", help="initialization label (default: from config)")
    sp.add_argument("--out", required=True)

    sp = command("sweep", cmd_sweep, "accuracy over training-data rates")
    training_flags(sp)
    sp.add_argument("--rates", default=DEFAULT_RATES)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--source-ckpt")
    sp.add_argument("--label")

    sp = command("report", cmd_report, "pair I/X reports; improvements, correlation, sweep curves")
    sp.add_argument("--data", required=True, help="directory of EvalReport JSON files")
    sp.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        config, inputs, outputs = args.func(args)
        manifest = RunManifest(
            command=args.command, argv=argv, config=config, inputs=digest_inputs(inputs),
            seed=config.get("seed", getattr(args, "seed", None) or 0), outputs=list(outputs),
            duration_s=round(time.perf_counter() - start, 3))
        write_text(manifest_path(args.out), manifest.to_json())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (XdspError, OSError) as exc:
        print(f"xdsp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
