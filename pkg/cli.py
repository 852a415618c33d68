"""
Command-line front end.

    python cli.py fit      --config refine.env
    python cli.py design   --config refine.env --seed 7
    python cli.py evaluate --config refine.env --rank 20,40,60 --filters 3,5,7
    python cli.py heatmap  --config refine.env --image test/0001.pgm --rank 20 --k 7
    python cli.py selftest
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from config import load_settings
from services import eval_harness
from services.selftest import run_selftest
from utils.errors import RefineError
from utils.serialize import serialize_for_json

logger = logging.getLogger(__name__)

EXIT_REFINE_ERROR = 2
EXIT_NOT_CONVERGED = 3


def _int_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refine", description="Integral-image sensing design and evaluation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE configuration file")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--block-side", type=int, dest="block_side", help="block side f")
    common.add_argument("--rank", type=_int_list, help="M or a comma-separated list of M")
    common.add_argument("--filters", type=_int_list, help="odd box filter sides, comma separated")
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("--log-level", dest="log_level", help="logging level")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit the MGGD prior on the training corpus")
    sub.add_parser("design", parents=[common], help="solve for Q* and write the design")
    sub.add_parser("evaluate", parents=[common], help="RSNR / time sweep on the test corpus")
    heatmap = sub.add_parser("heatmap", parents=[common], help="exact vs estimated box-filter maps")
    heatmap.add_argument("--image", required=True, help="test image (PGM or PNG)")
    heatmap.add_argument("--k", type=int, default=7, help="box filter side")
    heatmap.add_argument("--identity", action="store_true", help="use the identity (bypass) operator")
    sub.add_parser("selftest", parents=[common], help="oracle checks at f = 4")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "block_side": args.block_side,
        "ranks": args.rank,
        "filters": args.filters,
        "out_dir": args.out_dir,
        "log_level": args.log_level,
    }

    try:
        settings = load_settings(args.config, **overrides)
    except RefineError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"❌ {e}")
        return EXIT_REFINE_ERROR

    logging.basicConfig(level=settings.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "fit":
            model, report = eval_harness.cmd_fit(settings)
            print(json.dumps(serialize_for_json({"beta": model.beta, "dim": model.dim,
                                                 "distances": dict(zip(map(str, report.beta_grid),
                                                                       report.distances))})))
        elif args.command == "design":
            design, result = eval_harness.cmd_design(settings)
            if not design.converged:
                logger.error(f"❌ Solver did not converge in {result.iterations} iterations "
                             f"(violation {result.max_violation:.3e}); partial design written")
                return EXIT_NOT_CONVERGED
        elif args.command == "evaluate":
            _, summary = eval_harness.cmd_evaluate(settings)
            print(f"{len(summary)} operator(s) evaluated; see {settings.out_dir}/eval_summary.csv")
        elif args.command == "heatmap":
            m_rank = args.rank[0] if args.rank else None
            result = eval_harness.cmd_heatmap(settings, args.image, m_rank=m_rank, k=args.k,
                                              identity=args.identity)
            print(json.dumps(serialize_for_json(result)))
        elif args.command == "selftest":
            results = run_selftest(settings.seed)
            failed = [name for name, ok, _ in results if not ok]
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            return 1 if failed else 0
    except RefineError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_REFINE_ERROR
    except FileNotFoundError as e:
        logger.error(f"❌ {e}")
        return EXIT_REFINE_ERROR

    return 0


if __name__ == "__main__":
    sys.exit(main())
