"""Command-line entry point wiring every module into one workflow:
gen-corpus / ingest -> rules check -> filter -> train -> eval -> attack -> report.

Exit codes: 0 success, 1 domain error (malformed input, degenerate data),
2 usage error. Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .errors import ParseError, SievemalError
from . import attack as attack_mod
from . import corpus as corpus_mod
from . import evaluation
from . import pipeline as pipeline_mod
from .features import extract_features, read_feature_file, write_feature_file
from .learners import TrainConfig, load_model, save_model
from .pe import parse_pe
from .rules import RuleSet, parse_rules


def _write_runconfig(out_dir, command, args_dict):
    """Reproducibility record: full config + version + seeds, no wall-clock."""
    os.makedirs(out_dir, exist_ok=True)
    record = {"tool": "sievemal", "version": __version__, "command": command,
              "config": {k: v for k, v in sorted(args_dict.items()) if k != "func"}}
    with open(os.path.join(out_dir, "runconfig.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_ruleset(path, role) -> RuleSet:
    if not path:
        return RuleSet(rules=(), role=role)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return RuleSet(rules=(), role=role)
    return parse_rules(text, role=role)


def _read_text(path) -> str:
    if not path:
        return ""
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


# --- subcommands -------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    spec = corpus_mod.load_spec(args.spec) if args.spec else corpus_mod.CorpusSpec(seed=args.seed)
    files_dir = os.path.join(args.out, "files")
    manifest = corpus_mod.synthesize_corpus(spec, files_dir)
    corpus_mod.write_manifest(manifest, os.path.join(args.out, "manifest.csv"))
    with open(os.path.join(args.out, "blocklist.yar"), "w", encoding="utf-8") as fh:
        fh.write(corpus_mod.emit_rules_from_bank(spec))
    with open(os.path.join(args.out, "allowlist.yar"), "w", encoding="utf-8") as fh:
        fh.write(corpus_mod.emit_allowlist(manifest))
    corpus_mod.save_spec(spec, os.path.join(args.out, "spec.json"))
    _write_runconfig(args.out, "gen-corpus", vars(args))
    print(f"wrote {len(manifest.records)} files under {args.out}")
    return 0


def cmd_ingest(args) -> int:
    manifest = corpus_mod.ingest(args.dir, args.labels)
    corpus_mod.write_manifest(manifest, args.out)
    _write_runconfig(os.path.dirname(os.path.abspath(args.out)), "ingest", vars(args))
    print(f"{len(manifest.records)} records, {manifest.duplicates} duplicates dropped")
    for failure in manifest.io_failures:
        print(f"io failure: {failure}", file=sys.stderr)
    return 0


def cmd_rules(args) -> int:
    rs = _load_ruleset(args.path, args.role)
    print(f"{len(rs.rules)} rules")
    return 0


def cmd_extract_features(args) -> int:
    manifest = corpus_mod.read_manifest(args.corpus)
    records = []
    failures = 0
    for r in manifest.records:
        with open(r.path, "rb") as fh:
            raw = fh.read()
        try:
            vec = extract_features(parse_pe(raw), raw)
        except SievemalError as exc:
            print(f"excluded {r.path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        records.append((r.sha256, r.label, r.epoch, vec))
    write_feature_file(args.out, records)
    _write_runconfig(os.path.dirname(os.path.abspath(args.out)),
                     "extract-features", vars(args))
    print(f"wrote {len(records)} vectors ({failures} excluded)")
    return 0


def cmd_filter(args) -> int:
    manifest = corpus_mod.read_manifest(args.corpus)
    allow = _load_ruleset(args.allow, "allowlist")
    block = _load_ruleset(args.block, "blocklist")
    samples = manifest.samples(epoch=args.split)
    survivors, report = pipeline_mod.filter_training(samples, allow, block)
    surviving_shas = {s.sha256 for s in survivors}
    out = corpus_mod.Manifest(records=[r for r in manifest.records
                                       if r.sha256 in surviving_shas])
    corpus_mod.write_manifest(out, args.out)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{report.survivors} survivors "
          f"(-{report.removed_by_allowlist} allowlist, -{report.removed_by_blocklist} blocklist)")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig(kind=args.kind, seed=args.seed, n_trees=args.n_trees,
                      gamma=args.gamma, reg=args.reg)
    if args.features:
        _, labels, _, X = read_feature_file(args.features)
        model = pipeline_mod.train_model(X, labels, cfg)
        save_model(model, args.model_out)
        print(f"wrote model {args.model_out}")
        return 0
    manifest = corpus_mod.read_manifest(args.corpus)
    allow = _load_ruleset(args.allow, "allowlist")
    block = _load_ruleset(args.block, "blocklist")
    samples = manifest.samples(epoch="present-train")
    system = pipeline_mod.train_system(
        samples, allow, block, cfg,
        allow_text=_read_text(args.allow), block_text=_read_text(args.block))
    pipeline_mod.save_system(system, args.system_out)
    _write_runconfig(args.system_out, "train", vars(args))
    print(f"trained {'filtered' if system.metadata['filtered'] else 'all-data'} "
          f"{args.kind} system -> {args.system_out} (threshold {system.threshold})")
    return 0


def cmd_predict(args) -> int:
    system = pipeline_mod.load_system(args.system)
    for path in args.files:
        with open(path, "rb") as fh:
            raw = fh.read()
        verdict = pipeline_mod.predict(system, raw)
        if verdict.stage == "ml_score":
            label = "malicious" if verdict.score >= system.threshold else "benign"
            print(f"{path}\tml_score\t{verdict.score}\t{label}")
        else:
            print(f"{path}\t{verdict.stage}\t\t{','.join(verdict.fired)}")
    return 0


def cmd_eval(args) -> int:
    system = pipeline_mod.load_system(args.system)
    manifest = corpus_mod.read_manifest(args.corpus)
    samples = manifest.samples(epoch=args.split)
    pairs = []
    for s in samples:
        with open(s.path, "rb") as fh:
            pairs.append((fh.read(), s.label))
    composite = evaluation.composite_roc(system, pairs)

    scores, labels = [], []
    for raw, label in pairs:
        _, score, _ = pipeline_mod.AiSystem(
            allowlist=RuleSet(rules=(), role="allowlist"),
            blocklist=RuleSet(rules=(), role="blocklist"),
            model=system.model, threshold=system.threshold).stage(raw)
        scores.append(1.0 if score is None else score)
        labels.append(label)
    bare = evaluation.roc(scores, labels)

    stats = evaluation.rule_stats(samples, system.allowlist, system.blocklist)
    report = {
        "split": args.split,
        "threshold": system.threshold,
        "composite_roc": evaluation.curve_rows(composite),
        "model_roc": evaluation.curve_rows(bare),
        "composite_tpr_at_1fpr": evaluation.tpr_at_fpr(composite, 0.01)[0],
        "model_tpr_at_1fpr": evaluation.tpr_at_fpr(bare, 0.01)[0],
        "rule_stats": stats.to_dict(),
    }
    evaluation.write_report(args.report, report)
    stem = os.path.splitext(args.report)[0]
    evaluation.write_curve_files(stem, {"composite": composite, "model": bare})
    print(f"wrote {args.report}")
    return 0


def cmd_attack(args) -> int:
    if args.system:
        system = pipeline_mod.load_system(args.system)
        score_fn, rule_probe = pipeline_mod.make_oracle(system)
        threshold = system.threshold
    else:
        model = load_model(args.model)

        def score_fn(raw):
            from .features import extract_features as ef

            try:
                pe = parse_pe(raw)
                return float(pipeline_mod.score_model(model, ef(pe, raw)[None, :])[0])
            except SievemalError:
                return 1.0

        rule_probe = None
        threshold = args.threshold

    pool_manifest = corpus_mod.read_manifest(args.pool_source)
    goodware = [r for r in pool_manifest.records if r.label == 0]
    pool = attack_mod.harvest_sections(goodware, args.sections, args.seed)

    malware_manifest = corpus_mod.read_manifest(args.malware)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for r in malware_manifest.records:
        if r.label != 1:
            continue
        with open(r.path, "rb") as fh:
            raw = fh.read()
        cfg = attack_mod.AttackConfig(
            k=args.sections, query_budget=args.budget, lam=getattr(args, "lambda"),
            seed=args.seed, success_threshold=threshold)
        trace = attack_mod.gamma_attack(score_fn, raw, pool, cfg, rule_probe=rule_probe)
        trace.to_jsonl(os.path.join(args.out, f"{r.sha256}.jsonl"))
        best_payload = (0 if trace.best_s is None
                        else attack_mod.payload_size(pool, trace.best_s))
        rows.append({
            "sha256": r.sha256, "clean_score": float(score_fn(raw)),
            "adv_score": trace.best_score, "payload_kb": best_payload / 1024.0,
            "queries": trace.queries_used,
            "fired_on_best": list(trace.fired_on_best),
            "evaded": bool(trace.best_score is not None and trace.best_score < threshold),
        })
    with open(os.path.join(args.out, "results.json"), "w", encoding="utf-8") as fh:
        json.dump({"threshold": threshold, "sections": args.sections,
                   "rows": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_runconfig(args.out, "attack", vars(args))
    evaded = sum(1 for row in rows if row["evaded"])
    print(f"attacked {len(rows)} samples, {evaded} evaded")
    return 0


def cmd_report(args) -> int:
    with open(os.path.join(args.results, "results.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    threshold = doc["threshold"]
    entries = [(round(row["payload_kb"]),
                1.0 if row["adv_score"] is None else row["adv_score"])
               for row in doc["rows"]]
    curve = evaluation.detection_rate_curve(entries, threshold=threshold)
    report = {"detection_rate_by_payload_kb": curve,
              "threshold": threshold,
              "attacked": len(doc["rows"])}
    evaluation.write_report(args.out, report)
    print(f"wrote {args.out}")
    return 0


# --- argument wiring ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sievemal")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="synthesize a corpus with ground truth")
    p.add_argument("--spec", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("ingest", help="build a manifest from a directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rules", help="rule file utilities")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    pc = rsub.add_parser("check", help="validate a rule file and print rule count")
    pc.add_argument("path")
    pc.add_argument("--role", choices=["blocklist", "allowlist"], default="blocklist")
    pc.set_defaults(func=cmd_rules)

    p = sub.add_parser("extract-features", help="feature matrix from a manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("filter", help="rule-filter a training manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--allow")
    p.add_argument("--block")
    p.add_argument("--split", default="present-train")
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="train a system (or a bare model from features)")
    p.add_argument("--corpus")
    p.add_argument("--allow")
    p.add_argument("--block")
    p.add_argument("--features")
    p.add_argument("--model-out")
    p.add_argument("--system-out")
    p.add_argument("--kind", choices=["gbdt", "svm"], default="gbdt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--gamma", type=float, default=1e-3)
    p.add_argument("--reg", type=float, default=1e-4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify files with a trained system")
    p.add_argument("--system", required=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="ROC report for a system on one split")
    p.add_argument("--system", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["present-train", "present-test", "future"],
                   default="present-test")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="section-injection attack against a target")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--system")
    group.add_argument("--model")
    p.add_argument("--malware", required=True)
    p.add_argument("--pool-source", required=True)
    p.add_argument("--sections", type=int, choices=[10, 20, 30, 50], default=10)
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--lambda", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="detection-rate summary from attack results")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"rule parse error: {exc}", file=sys.stderr)
        return 1
    except SievemalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
