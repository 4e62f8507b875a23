"""Command-line entry point.

Subcommands: prune, verify, spearman, flops, factorize, bench. Exit codes:
0 success, 2 input/format error, 3 contract violation. Heavy imports are
deferred until after the thread cap is applied so --threads (or
VTPRUNE_THREADS) can rein in BLAS before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("VTPRUNE_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        if "numpy" in sys.modules:
            print(
                "warning: numpy already imported; thread cap may not take effect",
                file=sys.stderr,
            )
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(threads)


def _check_output_path(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"output directory not writable: {parent}")


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def _load_vector(path: str):
    """A correlation input: bare JSON array, a report with raw/normalized,
    or a full prune report (its sensitivity block is used)."""
    from .errors import InputFormatError

    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if isinstance(doc, dict) and isinstance(doc.get("sensitivity"), dict):
        doc = doc["sensitivity"]
    if isinstance(doc, list):
        return doc
    if isinstance(doc, dict):
        for key in ("raw", "normalized"):
            if key in doc and isinstance(doc[key], list):
                return doc[key]
    raise InputFormatError(
        f"{path}: expected a JSON array or an object with a 'raw' field"
    )


@dataclass
class RunManifest:
    """Validated inputs for one prune run; everything parses before compute."""

    tokens_path: str
    projector_path: str
    out_path: str
    report_format: str  # json | mask

    def load(self):
        from .tensorio import load_projector, load_tokens

        _check_output_path(self.out_path)
        tokens = load_tokens(self.tokens_path)
        projector = load_projector(self.projector_path)
        return tokens, projector


def cmd_prune(args) -> int:
    from .errors import ContractViolationError
    from .selection import SelectionConfig, select, select_per_patch
    from .sensitivity import SensitivityConfig, estimate_sensitivity

    manifest = RunManifest(
        tokens_path=args.tokens,
        projector_path=args.projector,
        out_path=args.out,
        report_format=args.format,
    )
    tokens, projector = manifest.load()
    if args.factorize_k is not None:
        projector = projector.factorize_low_rank(args.factorize_k)
    if args.budget > tokens.n_tokens:
        raise ContractViolationError(
            f"budget {args.budget} exceeds token count {tokens.n_tokens}"
        )
    sens_config = SensitivityConfig(
        m=args.m,
        h=args.h,
        seed=args.seed,
        share_directions=not args.independent_directions,
        chunk_rows=args.chunk_rows,
    )
    sel_config = SelectionConfig(
        budget_k=args.budget,
        policy=args.policy,
        diversity_space=args.diversity_space,
        per_patch=args.per_patch,
        per_patch_budget=args.per_patch_budget,
    )
    report = estimate_sensitivity(projector, tokens, sens_config)
    features = projector.forward(tokens) if args.diversity_space == "projected" else tokens
    if sel_config.per_patch:
        result = select_per_patch(features, report, sel_config)
    else:
        result = select(features, report, sel_config)
    if args.format == "mask":
        with open(args.out, "wb") as f:
            f.write(result.to_mask(tokens.n_tokens))
    else:
        _write_json(
            args.out,
            {"selection": result.to_json_dict(), "sensitivity": report.to_json_dict()},
        )
    print(f"kept {len(result.indices)}/{tokens.n_tokens} tokens -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .sensitivity import verify_convergence
    from .tensorio import load_projector

    projector = load_projector(args.projector)
    table = verify_convergence(
        projector,
        n_probes=args.probes,
        h_values=_parse_float_list(args.h_values),
        seed=args.seed,
        n_directions=args.directions,
    )
    print(f"{'h':>12}  {'mean_error':>14}  {'fitted_order':>12}  roundoff")
    for row in table.rows():
        order = row.get("fitted_order")
        order_s = f"{order:12.3f}" if order is not None else " " * 12
        flag = "  !" if row["roundoff_warning"] else ""
        print(f"{row['h']:>12.3e}  {row['mean_error']:>14.6e}  {order_s}{flag}")
    print(f"mean fitted order: {table.mean_order():.3f}")
    if args.out:
        _check_output_path(args.out)
        _write_json(args.out, {"rows": table.rows(), "mean_order": table.mean_order()})
    return 0


def cmd_spearman(args) -> int:
    from .analysis import CorrelationConfig, spearman

    a = _load_vector(args.a)
    b = _load_vector(args.b)
    config = CorrelationConfig(threshold=args.threshold)
    rho = spearman(a, b, config)
    doc = {"spearman": rho, "threshold": args.threshold, "n_input_pairs": len(a)}
    print(json.dumps(doc))
    if args.out:
        _check_output_path(args.out)
        _write_json(args.out, doc)
    return 0


def cmd_flops(args) -> int:
    from .analysis import (
        FlopsModel,
        llm_prefill_flops,
        projector_pass_flops,
        sensitivity_overhead_flops,
    )

    with open(args.config, encoding="utf-8") as f:
        model = FlopsModel.from_json_dict(json.load(f))
    budgets = _parse_int_list(args.budgets)
    t = args.text_tokens
    baseline = llm_prefill_flops(model, args.n_tokens + t)
    rows = []
    for budget in budgets:
        prefill = llm_prefill_flops(model, budget + t)
        rows.append(
            {
                "budget": budget,
                "prefill_flops": prefill,
                "ratio_vs_baseline": prefill / baseline,
                "sensitivity_overhead_flops": sensitivity_overhead_flops(
                    model, args.n_tokens, args.m
                ),
            }
        )
    doc = {
        "baseline_tokens": args.n_tokens,
        "text_tokens": t,
        "baseline_prefill_flops": baseline,
        "projector_pass_flops": projector_pass_flops(model),
        "rows": rows,
    }
    print(json.dumps(doc, indent=2))
    if args.out:
        _check_output_path(args.out)
        _write_json(args.out, doc)
    return 0


def cmd_factorize(args) -> int:
    from .tensorio import load_projector, save_projector

    _check_output_path(args.out)
    projector = load_projector(args.projector)
    save_projector(args.out, projector.factorize_low_rank(args.k))
    print(f"rank-{args.k} factorized projector -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .analysis import time_pipeline
    from .selection import SelectionConfig
    from .sensitivity import SensitivityConfig
    from .tensorio import load_projector, load_tokens

    tokens = load_tokens(args.tokens)
    projector = load_projector(args.projector)
    summary = time_pipeline(
        projector,
        tokens,
        SensitivityConfig(m=args.m, h=args.h, seed=args.seed),
        SelectionConfig(
            budget_k=args.budget,
            policy=args.policy,
            diversity_space=args.diversity_space,
        ),
        repeats=args.repeats,
    )
    print(json.dumps(summary.to_json_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vtprune",
        description="Vision-token pruning: zeroth-order sensitivity + diversity greedy.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap BLAS/OpenMP threads (default: VTPRUNE_THREADS env or unlimited)",
    )
    # also accepted after the subcommand; SUPPRESS keeps a root-level value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sens_flags(p):
        p.add_argument("--m", type=int, default=64, help="perturbation directions")
        p.add_argument("--h", type=float, default=0.01, help="finite-difference step")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--independent-directions",
            action="store_true",
            help="fresh directions per token instead of one shared set",
        )
        p.add_argument("--chunk-rows", type=int, default=65536)

    p = sub.add_parser("prune", parents=[common], help="score tokens and select a budgeted subset")
    p.add_argument("--tokens", required=True)
    p.add_argument("--projector", required=True)
    p.add_argument("--out", required=True)
    add_sens_flags(p)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument(
        "--policy",
        default="fused_multiply",
        choices=["fused_multiply", "fused_sum", "sensitivity_only", "diversity_only"],
    )
    p.add_argument("--diversity-space", default="projected", choices=["projected", "raw"])
    p.add_argument("--per-patch", action="store_true")
    p.add_argument("--per-patch-budget", type=int, default=None)
    p.add_argument("--factorize-k", type=int, default=None)
    p.add_argument("--format", default="json", choices=["json", "mask"])
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("verify", parents=[common], help="finite-difference vs analytic-JVP convergence")
    p.add_argument("--projector", required=True)
    p.add_argument("--h-values", default="1e-2,5e-3,2.5e-3")
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--directions", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("spearman", parents=[common], help="rank correlation of two score vectors")
    p.add_argument("--a", required=True, help="reference vector (JSON)")
    p.add_argument("--b", required=True, help="comparison vector (JSON)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spearman)

    p = sub.add_parser("flops", parents=[common], help="prefill FLOPs and pruning ratios")
    p.add_argument("--config", required=True, help="FLOPs model JSON")
    p.add_argument("--budgets", default="", help="comma-separated token budgets")
    p.add_argument("--n-tokens", type=int, required=True, help="unpruned token count")
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--text-tokens", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("factorize", parents=[common], help="truncated-SVD low-rank projector")
    p.add_argument("--projector", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("bench", parents=[common], help="wall-clock the estimate+select pipeline")
    p.add_argument("--tokens", required=True)
    p.add_argument("--projector", required=True)
    add_sens_flags(p)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument(
        "--policy",
        default="fused_multiply",
        choices=["fused_multiply", "fused_sum", "sensitivity_only", "diversity_only"],
    )
    p.add_argument("--diversity-space", default="projected", choices=["projected", "raw"])
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_cap(args.threads)
    from .errors import ContractViolationError, InputFormatError

    try:
        return args.func(args)
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContractViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
