"""Command-line surface.

Four subcommands: ``test`` runs an independence statistic on a container
pair, ``localize`` scans all block pairs for shared components, ``transform``
produces a camouflaged copy of a model (with an output-preservation
self-check), and ``simulate`` runs the statistical validation suites.

Exit codes are part of the contract: 0 success, 2 input/format error,
3 incompatible architectures for the chosen statistic, 4 transform
self-check failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import experiments
from .containers import load_model, save_model
from .errors import ArchitectureMismatchError, WeightprovError
from .independence import (
    aggregate_blocks,
    generalized_test,
    huref_invariants,
    jsd_baseline,
    localize_blocks,
    permtest,
    phi_h_all_blocks,
    phi_l2,
    phi_match_all_blocks,
    phi_u_block,
)
from .matching import match_rows
from .model import random_token_batch, transformer_forward
from .report import ReportBuilder, TestResult, block_entry
from .stats import LogPValue
from .training import TrainConfig
from .transforms import TransformSpec, apply_transform_spec

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INCOMPATIBLE = 3
EXIT_SELFCHECK = 4

SELF_CHECK_TOLERANCE = {"permute": 1e-10, "rotate": 1e-8, "both": 1e-8}


def _parse_tokens(text: str) -> tuple[int, int]:
    try:
        n, s = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected N,s (e.g. 4,64)") from exc
    if n < 1 or s < 1:
        raise argparse.ArgumentTypeError("token counts must be positive")
    return n, s


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weightprov",
        description="Test whether two neural models were trained independently, from weights alone.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    test = sub.add_parser("test", help="run an independence statistic on a model pair")
    test.add_argument("--model-a", required=True)
    test.add_argument("--manifest-a", required=True)
    test.add_argument("--model-b", required=True)
    test.add_argument("--manifest-b", required=True)
    test.add_argument(
        "--stat",
        required=True,
        choices=["l2", "u", "h", "match", "jsd", "huref", "general"],
    )
    test.add_argument("--T", type=int, default=99, help="permutation-test sample size")
    test.add_argument("--seed", type=int, default=0)
    test.add_argument(
        "--tokens", type=_parse_tokens, default=(4, 64), metavar="N,s",
        help="random token batch shape for activation statistics",
    )
    test.add_argument("--out", required=True)

    loc = sub.add_parser("localize", help="find shared blocks between two models")
    loc.add_argument("--model-a", required=True)
    loc.add_argument("--manifest-a", required=True)
    loc.add_argument("--model-b", required=True)
    loc.add_argument("--manifest-b", required=True)
    loc.add_argument("--threshold", type=float, default=1e-4)
    loc.add_argument("--seed", type=int, default=0)
    loc.add_argument("--tokens", type=_parse_tokens, default=(4, 64), metavar="N,s")
    loc.add_argument("--out", required=True)

    tr = sub.add_parser("transform", help="apply output-preserving camouflage to a model")
    tr.add_argument("--model", required=True)
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--kind", required=True, choices=["permute", "rotate", "both"])
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="output container path")
    tr.add_argument("--out-manifest", default=None)
    tr.add_argument("--sidecar", default=None, help="path for the transform sidecar JSON")

    sim = sub.add_parser("simulate", help="run a statistical validation suite")
    sim.add_argument(
        "--suite",
        required=True,
        choices=sorted(experiments.SUITES),
    )
    sim.add_argument("--trials", type=int, default=None)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    return parser


def _echo(args: argparse.Namespace) -> dict:
    doc = dict(vars(args))
    doc.pop("subcommand", None)
    return doc


def cmd_test(args) -> int:
    theta1 = load_model(args.model_a, args.manifest_a)
    theta2 = load_model(args.model_b, args.manifest_b)
    builder = ReportBuilder("test", _echo(args))
    n, s = args.tokens
    config = {"seed": args.seed, "tokens": [n, s], "T": args.T}

    if args.stat == "l2":
        p = permtest(theta1, theta2, phi_l2, T=args.T, seed=args.seed)
        builder.add(
            TestResult(
                "phi_l2_permtest",
                per_block=[],
                aggregate=p,
                raw_statistic=phi_l2(theta1, theta2),
                config=config,
            )
        )
    elif args.stat == "u":
        if (
            theta1.manifest.L != theta2.manifest.L
            or theta1.manifest.d_mlp != theta2.manifest.d_mlp
            or theta1.manifest.d_emb != theta2.manifest.d_emb
        ):
            raise ArchitectureMismatchError(
                "identity-alignment statistics need matching block layout"
            )
        per = []
        ps = []
        for i in range(theta1.manifest.L):
            p = phi_u_block(theta1, theta2, i)
            a = match_rows(theta1.role(f"up_proj.{i}"), theta2.role(f"up_proj.{i}"))
            per.append(block_entry((i, i), p, a))
            ps.append(p)
        builder.add(TestResult("phi_u", per_block=per, aggregate=aggregate_blocks(ps), config=config))
    elif args.stat == "h":
        batch = random_token_batch(theta1.manifest.V, n, s, args.seed)
        ps = phi_h_all_blocks(theta1, theta2, batch)
        per = [block_entry((i, i), p) for i, p in enumerate(ps)]
        builder.add(TestResult("phi_h", per_block=per, aggregate=aggregate_blocks(ps), config=config))
    elif args.stat == "match":
        if theta1.manifest.V != theta2.manifest.V:
            raise ArchitectureMismatchError("activation matching needs a shared vocabulary")
        batch = random_token_batch(theta1.manifest.V, n, s, args.seed)
        outcomes = phi_match_all_blocks(theta1, theta2, batch)
        per = [
            block_entry(o.blocks, o.pvalue, o.up_assignment) for o in outcomes
        ]
        builder.add(
            TestResult(
                "phi_match",
                per_block=per,
                aggregate=aggregate_blocks([o.pvalue for o in outcomes]),
                config=config,
            )
        )
    elif args.stat == "jsd":
        batch = random_token_batch(theta1.manifest.V, n, s, args.seed)
        value = jsd_baseline(theta1, theta2, batch)
        builder.add(TestResult("phi_jsd", raw_statistic=value, config=config))
    elif args.stat == "huref":
        per = []
        for i in range(min(theta1.manifest.L, theta2.manifest.L)):
            sims = huref_invariants(theta1, theta2, i, seed=args.seed)
            per.append(
                {
                    "blocks": [i, i],
                    "pvalue": LogPValue(0.0).to_json(),
                    "similarities": {
                        "query_key": sims[0],
                        "value_output": sims[1],
                        "gate_down": sims[2],
                    },
                }
            )
        builder.add(
            TestResult(
                "huref_invariants",
                per_block=per,
                raw_statistic=per[0]["similarities"]["query_key"],
                config=config,
            )
        )
    elif args.stat == "general":
        res = generalized_test(theta1, theta2, seed=args.seed)
        builder.add(
            TestResult(
                "phi_match_distilled",
                per_block=[block_entry((0, 0), res.pvalue)],
                aggregate=res.pvalue,
                config={**config, "proxy_width": list(res.proxy_width),
                        "fit_losses": list(res.fit_losses)},
                warnings=res.warnings,
            )
        )
    builder.write(args.out)
    return EXIT_OK


def cmd_localize(args) -> int:
    theta1 = load_model(args.model_a, args.manifest_a)
    theta2 = load_model(args.model_b, args.manifest_b)
    builder = ReportBuilder("localize", _echo(args))
    n, s = args.tokens
    if theta1.manifest.V != theta2.manifest.V:
        raise ArchitectureMismatchError("localization needs a shared vocabulary")
    batch = random_token_batch(theta1.manifest.V, n, s, args.seed)
    found = localize_blocks(theta1, theta2, batch, ln_threshold=math.log(args.threshold))
    per = [
        block_entry((m.source_block, m.target_block), m.pvalue, m.unit_assignment)
        for m in found
    ]
    builder.add(
        TestResult(
            "phi_match_localized",
            per_block=per,
            config={"seed": args.seed, "tokens": [n, s], "threshold": args.threshold},
        )
    )
    builder.write(args.out)
    return EXIT_OK


def cmd_transform(args) -> int:
    model = load_model(args.model, args.manifest)
    spec = TransformSpec(kind=args.kind, seed=args.seed)
    transformed = apply_transform_spec(model, spec)
    batch = random_token_batch(model.manifest.V, 2, 16, seed=args.seed)
    before = transformer_forward(model, batch).logits
    after = transformer_forward(transformed, batch).logits
    max_diff = float(np.max(np.abs(before - after)))
    tolerance = SELF_CHECK_TOLERANCE[args.kind]
    out_manifest = args.out_manifest or args.out + ".manifest.json"
    sidecar_path = args.sidecar or args.out + ".transform.json"
    builder = ReportBuilder("transform", _echo(args))
    builder.add(
        TestResult(
            "output_preservation_self_check",
            raw_statistic=max_diff,
            config={"seed": args.seed, "kind": args.kind, "tolerance": tolerance},
            warnings=(
                []
                if max_diff <= tolerance
                else [f"max logit difference {max_diff:.3e} exceeds {tolerance:.0e}"]
            ),
        )
    )
    if max_diff > tolerance:
        builder.write(sidecar_path)
        print(
            f"self-check failed: max logit difference {max_diff:.3e} > {tolerance:.0e}",
            file=sys.stderr,
        )
        return EXIT_SELFCHECK
    save_model(transformed, args.out, out_manifest, dtype="F64")
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"transform": spec.to_json(), "self_check_max_logit_diff": max_diff},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    builder = ReportBuilder("simulate", _echo(args))
    summary = experiments.run_suite(args.suite, args.trials, args.seed)
    builder.add(
        TestResult(
            f"simulate_{args.suite}",
            config={"suite": args.suite, "trials": args.trials, "seed": args.seed,
                    "summary": summary},
        )
    )
    builder.write(args.out)
    return EXIT_OK


_COMMANDS = {
    "test": cmd_test,
    "localize": cmd_localize,
    "transform": cmd_transform,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except ArchitectureMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (WeightprovError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
