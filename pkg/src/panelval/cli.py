"""Command-line entry point.

Exit codes: 0 success (``qualify``: pass), 1 ``qualify`` fail, 2 input or
validation error, 3 numerical failure (non-convergence, separation).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import DEFAULT_GRID, ProbabilitySeries, bias_corrected_calibration
from .consensus import (
    DEFAULT_QUALIFICATION_THRESHOLD,
    ReferenceLabeling,
    agreement_report,
    majority_reference,
    parse_reference,
    qualification_gate,
    rater_match_rates,
    reference_rows,
)
from .data import BINARY, SCHEMES, cohort_summary, get_scheme, parse_annotations, parse_pets, parse_predictions
from .data import serialize_annotations, serialize_predictions
from .errors import InputError, NumericalError
from .latent import MAX_ITER, VotePatternTable, em_bootstrap_ci, em_fit, log_likelihood
from .metrics import bootstrap_metrics, build_contingency, compute_metrics
from .report import ReportDocument, emit_report, format_value, input_entry, interval_dict, metric_table
from .resampling import DEFAULT_CONFIDENCE, DEFAULT_REPLICATES, BootstrapSpec, draw_seed, power_simulation
from .simulate import PanelDesign, simulate_panel, simulated_predictions, visit_ids

PROG = "panelval"
SUBCOMMANDS = ("consensus", "agreement", "qualify", "validate", "em", "calibrate", "simulate", "power", "cohort")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _echo(argv: list[str]) -> list[str]:
    """Command echo without the parallelism flag, which never changes results."""
    out, skip = [PROG], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--workers":
            skip = True
            continue
        if a.startswith("--workers="):
            continue
        out.append(a)
    return out


def _seed(args) -> int:
    if args.seed is None:
        args.seed = draw_seed()
        print(f"{PROG}: no --seed given, using {args.seed}", file=sys.stderr)
    return args.seed


def _boot_spec(args) -> BootstrapSpec:
    return BootstrapSpec(args.boot, _seed(args), args.confidence)


def _to_binary(scheme, label):
    return BINARY.classes[0] if scheme.is_positive(label) else BINARY.classes[1]


def _load_panel(args, inputs, binarize=True):
    scheme = get_scheme(args.scheme)
    table = parse_annotations(args.annotations, scheme)
    inputs.append(input_entry("annotations", args.annotations))
    if binarize and scheme is not BINARY:
        table = table.binarize()
    return table


def _load_reference(args, inputs) -> ReferenceLabeling:
    """Binary reference labels from --reference or from the majority of --annotations."""
    if getattr(args, "reference", None):
        scheme = get_scheme(args.scheme)
        ref = parse_reference(args.reference, scheme)
        inputs.append(input_entry("reference", args.reference))
        if scheme is BINARY:
            return ref
        return ReferenceLabeling(
            BINARY,
            ref.visit_ids,
            tuple(None if lab is None else _to_binary(scheme, lab) for lab in ref.labels),
            tuple({} for _ in ref.visit_ids),
            ref.unanimous,
        )
    if getattr(args, "annotations", None):
        return majority_reference(_load_panel(args, inputs))
    raise InputError("give --reference or --annotations")


def _load_predictions(args, inputs):
    scheme = get_scheme(args.scheme)
    preds = parse_predictions(args.predictions, scheme)
    inputs.append(input_entry("predictions", args.predictions))
    return preds, scheme


# -- subcommands ---------------------------------------------------------------


def cmd_consensus(args, inputs):
    table = _load_panel(args, inputs, binarize=args.binarize)
    ref = majority_reference(table)
    per_label = {c: sum(lab == c for lab in ref.labels) for c in table.scheme.classes}
    results = {
        "scheme": table.scheme.name,
        "n_visits": table.n_visits,
        "n_raters": table.n_raters,
        "n_unanimous": sum(ref.unanimous),
        "n_no_consensus": ref.n_no_consensus,
        "reference_counts": per_label,
    }
    return results, None, reference_rows(ref), 0


def cmd_agreement(args, inputs):
    table = _load_panel(args, inputs, binarize=args.binarize)
    rep = agreement_report(table)
    results = {
        "scheme": table.scheme.name,
        "n_visits": rep.n_visits,
        "n_complete": rep.n_complete,
        "exact_match_rate": rep.exact_match_rate,
        "fleiss_kappa": rep.fleiss_kappa,
        "fleiss_kappa_status": "defined" if rep.fleiss_kappa is not None else "undefined",
        "n_kappa_excluded": rep.n_kappa_excluded,
        "n_no_consensus": rep.n_no_consensus,
        "per_rater_match": rep.per_rater_match,
    }
    table_rows = (("rater", "match_rate"), sorted(rep.per_rater_match.items()))
    return results, None, table_rows, 0


def cmd_qualify(args, inputs):
    if args.rate is not None:
        rates = {"rater": args.rate}
    else:
        if not (args.annotations and args.reference):
            raise InputError("give --rate, or --annotations with --reference")
        scheme = get_scheme(args.scheme)
        table = parse_annotations(args.annotations, scheme)
        inputs.append(input_entry("annotations", args.annotations))
        ref = parse_reference(args.reference, scheme)
        inputs.append(input_entry("reference", args.reference))
        rates = rater_match_rates(table, ref)
        if args.rater:
            if args.rater not in rates:
                raise InputError(f"rater {args.rater!r} not in {args.annotations}")
            rates = {args.rater: rates[args.rater]}
    verdicts = {r: qualification_gate(v, args.threshold) for r, v in rates.items()}
    results = {
        "threshold": args.threshold,
        "raters": [{"id": r, "match_rate": rates[r], "passed": verdicts[r]} for r in rates],
        "passed": all(verdicts.values()),
    }
    rows = (("rater", "match_rate", "passed"), [(r, rates[r], str(verdicts[r]).lower()) for r in rates])
    return results, None, rows, 0 if results["passed"] else 1


def cmd_validate(args, inputs):
    preds, scheme = _load_predictions(args, inputs)
    ref = _load_reference(args, inputs)
    binary_preds = {v: _to_binary(scheme, p.predicted_label) for v, p in preds.items()}
    table = build_contingency(binary_preds, ref, BINARY)
    spec = _boot_spec(args)
    intervals = bootstrap_metrics(table, spec, args.workers)
    point = compute_metrics(table).to_dict()
    metrics = {}
    for name, iv in intervals.items():
        metrics[name] = interval_dict(iv) if iv is not None else {"estimate": point[name], "lower": None, "upper": None}
    results = {
        "contingency": {
            "tp": table.tp, "fp": table.fp, "fn": table.fn, "tn": table.tn,
            "total": table.total, "skipped": table.skipped,
        },
        "metrics": metrics,
        "bootstrap": {"seed": spec.seed, "replicates": spec.replicates, "confidence": spec.confidence},
    }
    if args.plot:
        from .plotting import metrics_figure

        metrics_figure(intervals, args.plot)
    return results, spec.seed, metric_table(metrics), 0


def cmd_em(args, inputs):
    table = _load_panel(args, inputs)
    preds = None
    if args.predictions:
        preds, scheme = _load_predictions(args, inputs)
        preds = {v: _to_binary(scheme, p.predicted_label) for v, p in preds.items()}
    data = VotePatternTable.from_annotations(table, preds)
    seed = _seed(args) if (args.boot > 0 or args.restarts > 0) else None
    model, trace = em_fit(
        data,
        max_iter=args.max_iter,
        restarts=args.restarts,
        seed=seed or 0,
        check_identifiability=not args.waive_identifiability,
    )
    if not trace.converged:
        raise NumericalError(f"EM did not converge in {args.max_iter} iterations")
    cis = None
    if args.boot > 0:
        spec = BootstrapSpec(args.boot, seed, args.confidence)
        cis = em_bootstrap_ci(
            data, spec, model, workers=args.workers, max_iter=args.max_iter,
            check_identifiability=not args.waive_identifiability,
        )

    def ci(iv):
        return None if iv is None else [iv.lower, iv.upper]

    raters = []
    for j, rid in enumerate(data.raters):
        raters.append(
            {
                "id": rid,
                "sensitivity": model.sensitivity[j],
                "specificity": model.specificity[j],
                "sensitivity_ci": ci(cis.sensitivity[rid]) if cis else None,
                "specificity_ci": ci(cis.specificity[rid]) if cis else None,
            }
        )
    results = {
        "n_visits": data.total,
        "n_patterns": int(data.patterns.shape[0]),
        "prevalence": model.prevalence,
        "prevalence_ci": ci(cis.prevalence) if cis else None,
        "raters": raters,
        "loglik": log_likelihood(model, data),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "stop_reason": trace.stop_reason,
        "restarts": args.restarts,
    }
    if cis:
        results["bootstrap"] = {
            "seed": seed, "replicates": args.boot, "confidence": args.confidence,
            "n_nonconverged": cis.n_nonconverged,
        }
    rows = [("prevalence", model.prevalence, *(ci(cis.prevalence) if cis else (None, None)))]
    for r in raters:
        for key in ("sensitivity", "specificity"):
            lo_hi = r[f"{key}_ci"] or (None, None)
            rows.append((f"{r['id']}.{key}", r[key], *lo_hi))
    return results, seed, (("parameter", "estimate", "lower", "upper"), rows), 0


def cmd_calibrate(args, inputs):
    preds, _ = _load_predictions(args, inputs)
    ref = _load_reference(args, inputs).as_mapping()
    pairs = [
        (p.probability, int(ref[v] == BINARY.positive_class))
        for v, p in preds.items()
        if p.probability is not None and v in ref
    ]
    if not pairs:
        raise InputError("no visit has both a predicted probability and a reference label")
    series = ProbabilitySeries([p for p, _ in pairs], [y for _, y in pairs])
    spec = _boot_spec(args)
    rep = bias_corrected_calibration(series, spec, args.grid, workers=args.workers)
    results = {
        "n": rep.n,
        "n_skipped": len(set(preds) | set(ref)) - rep.n,
        **{k: v for k, v in rep.summary().items() if k not in ("n", "seed", "replicates")},
        "bootstrap": {"seed": spec.seed, "replicates": spec.replicates, "confidence": spec.confidence},
        "grid_size": args.grid,
        "curve_file": str(args.curve) if args.curve else None,
    }
    header = ("predicted", "apparent", "bias_corrected")
    if args.curve:
        lines = [",".join(header)] + [",".join(format_value(float(x)) for x in row) for row in rep.curve]
        Path(args.curve).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.plot:
        from .plotting import calibration_figure

        calibration_figure(rep.curve, args.plot)
    return results, spec.seed, (header, list(rep.curve)), 0


def _parse_rater(text):
    try:
        se, sp = (float(x) for x in text.split(":"))
    except ValueError:
        raise InputError(f"--rater expects SENS:SPEC, got {text!r}") from None
    return se, sp


def cmd_simulate(args, inputs):
    seed = _seed(args)
    shapes = ((args.shapes[0], args.shapes[1]), (args.shapes[2], args.shapes[3]))
    design = PanelDesign(args.prevalence, tuple(_parse_rater(r) for r in args.rater), args.n, seed, shapes)
    truth, table = simulate_panel(design)
    if args.truth:
        lines = ["visit_id,truth"] + [f"{v},{int(t)}" for v, t in zip(visit_ids(args.n), truth)]
        Path(args.truth).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.predictions:
        recs = simulated_predictions(truth, shapes, np.random.SeedSequence(seed, spawn_key=(1,)))
        Path(args.predictions).write_text(serialize_predictions(recs), encoding="utf-8")
    return serialize_annotations(table).encode("utf-8")


def cmd_power(args, inputs):
    seed = _seed(args)
    rep = power_simulation(
        args.sens, args.spec, args.prevalence, args.n, args.sims, args.target, seed,
        mode=args.mode, confidence=args.confidence, boot_replicates=args.boot, workers=args.workers,
    )
    results = rep.to_dict()
    results["replicates"] = args.sims
    results["seed"] = seed
    return results, seed, None, 0


def cmd_cohort(args, inputs):
    pets = parse_pets(args.pets)
    inputs.append(input_entry("pets", args.pets))
    summary = cohort_summary(pets)
    results = {"n_visits": len(pets), "species": {sp: s.__dict__ for sp, s in summary.items()}}
    rows = []
    for sp, s in summary.items():
        for facet in ("sex", "life_stage"):
            for level, v in getattr(s, facet).items():
                rows.append((sp, facet, level, v["n"], v["percent"]))
    return results, None, (("species", "facet", "level", "n", "percent"), rows), 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, out=True, scheme=True):
        if out:
            sp.add_argument("--out", help="report path (default: stdout)")
            sp.add_argument("--format", choices=("json", "csv"), default="json")
        if scheme:
            sp.add_argument("--scheme", choices=sorted(SCHEMES), default="binary")

    def boot(sp):
        sp.add_argument("--boot", type=int, default=DEFAULT_REPLICATES, help="bootstrap replicates")
        sp.add_argument("--seed", type=int, help="random seed (drawn and printed when absent)")
        sp.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
        sp.add_argument("--workers", type=int, default=1, help="parallel workers; results do not depend on it")

    sp = sub.add_parser("consensus", help="majority-consensus reference labels")
    common(sp)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--binarize", action="store_true", help="collapse to wellness vs other first")

    sp = sub.add_parser("agreement", help="exact match, Fleiss kappa, per-rater match")
    common(sp)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--binarize", action="store_true")

    sp = sub.add_parser("qualify", help="annotator qualification gate")
    common(sp)
    sp.add_argument("--rate", type=float, help="match rate to test directly")
    sp.add_argument("--annotations")
    sp.add_argument("--reference", help="agreed labels to compare each rater against")
    sp.add_argument("--rater", help="only test this rater")
    sp.add_argument("--threshold", type=float, default=DEFAULT_QUALIFICATION_THRESHOLD)

    sp = sub.add_parser("validate", help="contingency table and bootstrapped metrics")
    common(sp)
    boot(sp)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--reference")
    sp.add_argument("--annotations")
    sp.add_argument("--plot", help="write a metric interval figure (.svg/.png/.pdf)")

    sp = sub.add_parser("em", help="latent class EM estimates without a gold standard")
    common(sp)
    boot(sp)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--predictions", help="add the classifier as a rater")
    sp.add_argument("--max-iter", type=int, default=MAX_ITER)
    sp.add_argument("--restarts", type=int, default=0, help="extra random starts")
    sp.add_argument("--waive-identifiability", action="store_true")

    sp = sub.add_parser("calibrate", help="Brier, C index, bias-corrected calibration")
    common(sp)
    boot(sp)
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--reference")
    sp.add_argument("--annotations")
    sp.add_argument("--grid", type=int, default=DEFAULT_GRID)
    sp.add_argument("--curve", default="curve.csv", help="curve CSV path ('' to skip)")
    sp.add_argument("--plot", help="write the calibration figure (.svg/.png/.pdf)")

    sp = sub.add_parser("simulate", help="simulate a conditionally independent panel")
    sp.add_argument("--prevalence", type=float, required=True)
    sp.add_argument("--rater", action="append", required=True, metavar="SENS:SPEC")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="annotations CSV path (default: stdout)")
    sp.add_argument("--truth", help="also write visit_id,truth")
    sp.add_argument("--predictions", help="also write simulated predictions with probabilities")
    sp.add_argument(
        "--shapes", type=float, nargs=4, default=(4.0, 2.0, 1.0, 5.0),
        metavar=("A1", "B1", "A0", "B0"), help="Beta shapes for positives then negatives",
    )
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("power", help="sample-size simulation of CI half-widths")
    common(sp, scheme=False)
    sp.add_argument("--sens", type=float, required=True)
    sp.add_argument("--spec", type=float, required=True)
    sp.add_argument("--prevalence", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--sims", type=int, default=1000)
    sp.add_argument("--target", type=float, default=0.05, help="target CI half-width")
    sp.add_argument("--mode", choices=("wald", "bootstrap"), default="wald")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    sp.add_argument("--boot", type=int, default=500, help="replicates per study in bootstrap mode")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("cohort", help="pet demographics by species")
    common(sp, scheme=False)
    sp.add_argument("--pets", required=True)
    return p


HANDLERS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def _emit(payload: bytes, out) -> None:
    if out:
        Path(out).write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise InputError("--workers must be at least 1")
        if getattr(args, "boot", 1) < 0:
            raise InputError("--boot must be non-negative")
        inputs: list[dict] = []
        if args.command == "simulate":
            _emit(cmd_simulate(args, inputs), args.out)
            return 0
        results, seed, table, code = HANDLERS[args.command](args, inputs)
        doc = ReportDocument(__version__, _echo(argv), seed, inputs, results, table)
        _emit(emit_report(doc, args.format), args.out)
        return code
    except InputError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"{PROG}: numerical failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
