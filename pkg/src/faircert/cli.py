"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``eval``, ``certify``, ``explain``, and
``debias-embeddings``. Options resolve with precedence
``flags > config file > defaults``; the config file is a flat JSON object
whose keys must be valid option names for the subcommand (unknown keys are
rejected). Every run writes an effective-config snapshot into the output
directory, and all randomness derives from the single ``--seed``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    SynthConfig,
    generate_synthetic,
    read_corpus,
    synthetic_neighbor_table,
    write_corpus,
    write_report,
)
from .debias import gender_direction, hard_debias
from .estimator import method_flags
from .explain import disagreement_set, gender_token_report
from .lexicons import default_gender_pairs, default_gendered_lexicon, load_lexicon
from .metrics import evaluate_model
from .model import (
    Vocabulary,
    build_vocab,
    load_embeddings,
    load_model,
    random_embeddings,
    save_model,
    write_embeddings,
)
from .perturb import (
    PerturbationSpaceError,
    SubstitutionTable,
    augment_gender_pairs,
    build_neighbor_table,
    enumerate_perturbations,
    load_gender_pairs,
    read_neighbor_table,
    to_clusters,
    write_neighbor_table,
)
from .robustness import certify_dataset, smoothed_scores_exact
from .train import TrainConfig, train

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems become exit code 1, not 2
        raise _UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class _Opt:
    name: str
    default: object
    help: str
    type: type = str
    is_flag: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


_COMMON = [
    _Opt("seed", 0, "seed for all randomness in the run", int),
]

_SYNTH_OPTS = _COMMON + [
    _Opt("n", 5000, "number of training examples", int),
    _Opt("test_n", 1000, "number of test examples", int),
    _Opt("rho", 0.9, "identity-label correlation strength in [0, 1]", float),
    _Opt("identity_prob", 0.8, "probability an example mentions an identity token", float),
    _Opt("cluster_size", 3, "synonym cluster size for the substitution table", int),
]

_TRAIN_OPTS = _COMMON + [
    _Opt("data", None, "training corpus (JSONL)", str),
    _Opt("method", "baseline", "method flags joined by '+', e.g. ibp+instance_weighting", str),
    _Opt("embeddings", None, "text embedding file (default: seeded random vectors)", str),
    _Opt("neighbors", None, "substitution table cache (default: cosine neighbors)", str),
    _Opt("learning_rate", 1e-2, "constant learning rate", float),
    _Opt("dropout", 0.5, "dropout probability on the pooled layer", float),
    _Opt("epochs", 20, "epochs for non-interval-bound objectives", int),
    _Opt("batch_size", 32, "minibatch size", int),
    _Opt("optimizer", "sgd", "sgd or adam", str),
    _Opt("hidden_size", 100, "convolution channels", int),
    _Opt("kernel_size", 3, "convolution window", int),
    _Opt("embedding_dim", 50, "embedding width", int),
    _Opt("max_len", 128, "sequence truncation length", int),
    _Opt("min_count", 1, "vocabulary frequency threshold", int),
    _Opt("top_k", 100, "cosine neighbors per word when building a table", int),
    _Opt("ibp_ramp_epochs", 40, "epochs to ramp the worst-case weight", int),
    _Opt("ibp_hold_epochs", 20, "epochs to hold the final worst-case weight", int),
    _Opt("ibp_lambda_max", 0.8, "worst-case weight at the end of the ramp", float),
    _Opt("ibp_lambda_full", None, "override for the held weight (default: lambda max)", float),
    _Opt("adversary_alpha", 1.0, "adversary gradient weight", float),
    _Opt("adversary_pretrain_epochs", 2, "pretraining epochs for classifier and adversary", int),
    _Opt("protected_axis", "gender", "group axis used by adversarial debiasing", str),
]

_EVAL_OPTS = _COMMON + [
    _Opt("model", None, "model checkpoint", str),
    _Opt("data", None, "evaluation corpus (JSONL)", str),
    _Opt("neighbors", None, "substitution table cache for certification", str),
    _Opt("method", "ibp", "certification method: ibp or safer", str),
    _Opt("task_metric", "auc", "auc or accuracy", str),
    _Opt("axis", "gender", "protected axis for fairness metrics", str),
    _Opt("jobs", 1, "parallel workers for certification", int),
    _Opt("n_samples", None, "smoothing samples for Monte Carlo certification", int),
    _Opt("confidence", 0.95, "confidence for Monte Carlo certification", float),
    _Opt("exact_cap", 4096, "largest smoothing support enumerated exactly", int),
]

_CERTIFY_OPTS = _COMMON + [
    _Opt("model", None, "model checkpoint", str),
    _Opt("data", None, "corpus to certify (JSONL)", str),
    _Opt("neighbors", None, "substitution table cache", str),
    _Opt("method", "ibp", "certification method: ibp or safer", str),
    _Opt("jobs", 1, "parallel workers", int),
    _Opt("n_samples", None, "smoothing samples for Monte Carlo certification", int),
    _Opt("confidence", 0.95, "confidence for Monte Carlo certification", float),
    _Opt("exact_cap", 4096, "largest smoothing support enumerated exactly", int),
    _Opt("enumerate_cap", None, "also brute-force spaces up to this size as an oracle", int),
]

_EXPLAIN_OPTS = _COMMON + [
    _Opt("model_a", None, "first checkpoint (e.g. the baseline)", str),
    _Opt("model_b", None, "second checkpoint (e.g. the robust model)", str),
    _Opt("data", None, "corpus to explain (JSONL)", str),
    _Opt("k", 5, "top features per example", int),
    _Opt("n_samples", 200, "mask samples per explanation", int),
    _Opt("cap", 500, "max examples explained (seeded subsample)", int),
    _Opt("lexicon", None, "gender token lexicon (default: shipped list)", str),
    _Opt("direction", "a_wrong_b_right", "disagreement direction", str),
]

_DEBIAS_OPTS = _COMMON + [
    _Opt("embeddings", None, "text embedding file to debias", str),
    _Opt("dim", 50, "embedding width", int),
    _Opt("pairs", None, "definitional pairs file (default: shipped list)", str),
    _Opt("lexicon", None, "gendered lexicon file (default: shipped list)", str),
]

_SUBCOMMANDS: dict[str, list[_Opt]] = {
    "synth": _SYNTH_OPTS,
    "train": _TRAIN_OPTS,
    "eval": _EVAL_OPTS,
    "certify": _CERTIFY_OPTS,
    "explain": _EXPLAIN_OPTS,
    "debias-embeddings": _DEBIAS_OPTS,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="faircert", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, opts in _SUBCOMMANDS.items():
        p = sub.add_parser(name)
        p.error = parser.error
        p.add_argument("--out", required=True, help="output directory (all outputs land here)")
        p.add_argument("--config", default=None, help="flat JSON config file")
        for o in opts:
            if o.is_flag:
                p.add_argument(o.flag, dest=o.name, action="store_const", const=True,
                               default=None, help=o.help)
            else:
                p.add_argument(o.flag, dest=o.name, type=o.type, default=None, help=o.help)
    return parser


def _resolve(args: argparse.Namespace, opts: list[_Opt]) -> dict:
    resolved = {o.name: o.default for o in opts}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise _UsageError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise _UsageError(f"config file is not valid JSON: {exc}") from exc
        unknown = sorted(set(file_values) - set(resolved))
        if unknown:
            raise _UsageError(f"unknown config keys: {', '.join(unknown)}")
        resolved.update(file_values)
    for o in opts:
        value = getattr(args, o.name)
        if value is not None:
            resolved[o.name] = value
    return resolved


def _prepare_out(args: argparse.Namespace, resolved: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = dict(resolved)
    snapshot["subcommand"] = args.subcommand
    (out / "config.json").write_text(
        json.dumps(snapshot, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out


def _require(resolved: dict, *names: str) -> None:
    missing = [n for n in names if resolved.get(n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise _UsageError(f"missing required option(s): {flags}")


def _load_table(resolved: dict, method: str) -> SubstitutionTable:
    if resolved.get("neighbors"):
        table = read_neighbor_table(resolved["neighbors"])
    else:
        table = SubstitutionTable(candidates={})
    if method == "safer" and table.mode != "clustered":
        table = to_clusters(table)
    return table


def _cmd_synth(args, resolved) -> int:
    out = _prepare_out(args, resolved)
    base = SynthConfig(
        n_examples=resolved["n"],
        rho=resolved["rho"],
        identity_prob=resolved["identity_prob"],
        seed=resolved["seed"],
    )
    write_corpus(generate_synthetic(base), out / "train.jsonl")
    test_config = SynthConfig(
        n_examples=resolved["test_n"],
        rho=resolved["rho"],
        identity_prob=resolved["identity_prob"],
        seed=resolved["seed"] + 1,
    )
    write_corpus(generate_synthetic(test_config), out / "test.jsonl")
    write_neighbor_table(synthetic_neighbor_table(base, resolved["cluster_size"]), out / "neighbors.txt")
    print(f"wrote {resolved['n']} train and {resolved['test_n']} test examples under {out}")
    return 0


def _cmd_train(args, resolved) -> int:
    _require(resolved, "data")
    out = _prepare_out(args, resolved)
    flags = method_flags(resolved["method"])
    config = TrainConfig(
        learning_rate=resolved["learning_rate"],
        dropout=resolved["dropout"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        optimizer=resolved["optimizer"],
        hidden_size=resolved["hidden_size"],
        kernel_size=resolved["kernel_size"],
        embedding_dim=resolved["embedding_dim"],
        max_len=resolved["max_len"],
        ibp_ramp_epochs=resolved["ibp_ramp_epochs"],
        ibp_hold_epochs=resolved["ibp_hold_epochs"],
        ibp_lambda_max=resolved["ibp_lambda_max"],
        ibp_lambda_full=resolved["ibp_lambda_full"],
        adversary_alpha=resolved["adversary_alpha"],
        adversary_pretrain_epochs=resolved["adversary_pretrain_epochs"],
        protected_axis=resolved["protected_axis"],
        seed=resolved["seed"],
        log_path=str(out / "train_log.jsonl"),
        **flags,
    )
    dataset = read_corpus(resolved["data"])
    vocab = build_vocab(dataset, min_count=resolved["min_count"])
    if resolved["embeddings"]:
        emb = load_embeddings(resolved["embeddings"], vocab, resolved["embedding_dim"], seed=resolved["seed"])
    else:
        emb = random_embeddings(vocab, resolved["embedding_dim"], seed=resolved["seed"])
    if resolved["neighbors"]:
        table = read_neighbor_table(resolved["neighbors"])
    elif config.uses_ibp or config.uses_safer:
        table = build_neighbor_table(emb, vocab, top_k=resolved["top_k"])
    else:
        table = None
    if config.uses_safer and table is not None and table.mode != "clustered":
        table = to_clusters(table)
    model = train(config, dataset, table, emb, vocab)
    save_model(model, out / "model.json")
    print(f"trained {resolved['method']} model on {len(dataset)} examples -> {out / 'model.json'}")
    return 0


def _cmd_eval(args, resolved) -> int:
    _require(resolved, "model", "data")
    if resolved["method"] not in ("ibp", "safer"):
        raise _UsageError("--method must be ibp or safer")
    out = _prepare_out(args, resolved)
    model = load_model(resolved["model"])
    dataset = read_corpus(resolved["data"])
    table = _load_table(resolved, resolved["method"])
    report = evaluate_model(
        model,
        dataset,
        table,
        axis=resolved["axis"],
        task_metric=resolved["task_metric"],
        method=resolved["method"],
        jobs=resolved["jobs"],
        n_samples=resolved["n_samples"],
        confidence=resolved["confidence"],
        exact_cap=resolved["exact_cap"],
        seed=resolved["seed"],
    )
    write_report(report, out / "report.json")
    print(
        f"task {report.task_metric}={report.task_score:.4f} | "
        f"eodds={report.eodds:.4f} fped={report.fped:.4f} tped={report.tped:.4f} | "
        f"cra={report.cra:.4f} | selection={report.selection_score:.4f}"
    )
    return 0


def _cmd_certify(args, resolved) -> int:
    _require(resolved, "model", "data")
    if resolved["method"] not in ("ibp", "safer"):
        raise _UsageError("--method must be ibp or safer")
    out = _prepare_out(args, resolved)
    model = load_model(resolved["model"])
    dataset = read_corpus(resolved["data"])
    table = _load_table(resolved, resolved["method"])
    results = certify_dataset(
        model,
        dataset,
        table,
        method=resolved["method"],
        jobs=resolved["jobs"],
        n_samples=resolved["n_samples"],
        confidence=resolved["confidence"],
        exact_cap=resolved["exact_cap"],
        seed=resolved["seed"],
    )
    cap = resolved["enumerate_cap"]
    violations = 0
    checked = 0
    with open(out / "certify.jsonl", "w", encoding="utf-8") as fh:
        for i, (ex, res) in enumerate(zip(dataset, results)):
            record = {
                "index": i,
                "certified": res.certified,
                "point_correct": res.point_correct,
                "margin": res.margin,
                "method": res.method,
                "samples_used": res.samples_used,
            }
            if cap:
                record["enumeration"] = _enumeration_check(
                    model, ex, table, resolved["method"], cap, resolved["exact_cap"]
                )
                if record["enumeration"].get("checked"):
                    checked += 1
                    if res.certified and not record["enumeration"]["all_correct"]:
                        violations += 1
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    cra_value = float(np.mean([r.certified for r in results])) if results else 0.0
    print(f"certified {sum(r.certified for r in results)}/{len(results)} (CRA={cra_value:.4f})")
    if cap:
        print(f"enumeration oracle checked {checked} example(s), found {violations} violation(s)")
    if violations:
        print("certification soundness violated; see certify.jsonl", file=sys.stderr)
        return 2
    return 0


def _enumeration_check(model, example, table, method: str, cap: int, exact_cap: int) -> dict:
    try:
        sequences = enumerate_perturbations(example.tokens, table, model.vocab, cap)
    except PerturbationSpaceError as exc:
        return {"checked": False, "size": exc.size}
    if method == "ibp":
        predictions = model.predict_batch(sequences)
        all_correct = bool(np.all(predictions == example.label))
    else:
        all_correct = True
        for seq in sequences:
            scores, _ = smoothed_scores_exact(model, model.vocab.decode(seq), table, cap=exact_cap)
            if int(scores.argmax()) != example.label:
                all_correct = False
                break
    return {"checked": True, "size": len(sequences), "all_correct": all_correct}


def _cmd_explain(args, resolved) -> int:
    _require(resolved, "model_a", "model_b", "data")
    out = _prepare_out(args, resolved)
    model_a = load_model(resolved["model_a"])
    model_b = load_model(resolved["model_b"])
    dataset = read_corpus(resolved["data"])
    lexicon = (
        load_lexicon(resolved["lexicon"]) if resolved["lexicon"] else default_gendered_lexicon()
    )
    examples = disagreement_set(model_a, model_b, dataset, direction=resolved["direction"])
    report = gender_token_report(
        model_a,
        model_b,
        examples,
        lexicon,
        k=resolved["k"],
        n_samples=resolved["n_samples"],
        sample_cap=resolved["cap"],
        rng=np.random.default_rng(resolved["seed"]),
        example_set=resolved["direction"],
    )
    (out / "explain.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(report.bar_summary())
    return 0


def _cmd_debias_embeddings(args, resolved) -> int:
    _require(resolved, "embeddings")
    out = _prepare_out(args, resolved)
    tokens = []
    seen = set()
    with open(resolved["embeddings"], "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] not in seen:
                tokens.append(parts[0])
                seen.add(parts[0])
    vocab = Vocabulary.from_tokens(tokens)
    matrix = load_embeddings(resolved["embeddings"], vocab, resolved["dim"], seed=resolved["seed"])
    pairs = load_gender_pairs(resolved["pairs"]) if resolved["pairs"] else default_gender_pairs()
    lexicon = load_lexicon(resolved["lexicon"]) if resolved["lexicon"] else default_gendered_lexicon()
    subspace = gender_direction(matrix, pairs, vocab)
    debiased = hard_debias(matrix, subspace, pairs, lexicon, vocab)
    write_embeddings(out / "debiased_embeddings.txt", vocab, debiased)
    print(f"debiased {len(tokens)} vectors -> {out / 'debiased_embeddings.txt'}")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "certify": _cmd_certify,
    "explain": _cmd_explain,
    "debias-embeddings": _cmd_debias_embeddings,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.subcommand:
            raise _UsageError("a subcommand is required (see --help)")
        resolved = _resolve(args, _SUBCOMMANDS[args.subcommand])
        return _HANDLERS[args.subcommand](args, resolved)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
