#!/usr/bin/env python3
"""Train agents across the preset's beta grid and write the frontier CSV.

Thin wrapper over ``cvahedge frontier``. With the full preset iteration
count this takes a few minutes per beta on one core; pass a smaller
--iterations for a quick look.
"""

import argparse

from cvahedge.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("preset", nargs="?", default="nodefault-100bp",
                        help="preset name or config path")
    parser.add_argument("--betas", default=None,
                        help="comma list overriding the preset's beta grid")
    parser.add_argument("--iterations", type=int, default=None)
    parser.add_argument("--episodes", type=int, default=None,
                        help="out-of-sample evaluation episodes")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    argv = ["frontier", "--config", args.preset]
    if args.betas:
        argv += ["--beta", args.betas]
    if args.iterations is not None:
        argv += ["--iterations", str(args.iterations)]
    if args.episodes is not None:
        argv += ["--episodes", str(args.episodes)]
    if args.out:
        argv += ["--out", args.out]
    return cli_main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
