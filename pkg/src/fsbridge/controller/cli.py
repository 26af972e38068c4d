'''
MIT License

Copyright (c) 2024 fsbridge contributors

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
'''

"""``fsbridge`` command-line front end.

Usage::

    fsbridge <group> <command> [--config FILE] [--set section.key=value ...]
             [--seed N] [--out-dir DIR] [--threads N] [-v]

Exit codes: 0 on success, 2 on configuration or input errors, 3 on
numerical failure.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from fsbridge.config import load_config
from fsbridge.controller import commands
from fsbridge.errors import BridgeError, ConfigError, InvalidParameterError, NumericalError, SerializationError, log_error

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="INI run configuration")
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help="override one config key (repeatable)")
    common.add_argument('--seed', type=int, help="base seed (overrides train.seed)")
    common.add_argument('--out-dir', default='.', help="directory receiving the artifacts")
    common.add_argument('--threads', type=int, help="worker threads for parallel evaluation")
    common.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog='fsbridge', description="Diffusion bridges in function spaces")
    groups = parser.add_subparsers(dest='group', required=True)

    def leaf(sub, name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    basis = groups.add_parser('basis', help="eigen-systems").add_subparsers(dest='command', required=True)
    leaf(basis, 'build', "build and save the eigen-system")

    bridge = groups.add_parser('bridge', help="exact bridges").add_subparsers(dest='command', required=True)
    leaf(bridge, 'sample', "sample bridge paths between Dirac endpoints")

    for name, help_text in (('bm', "Bridge Matching"), ('bayes', "posterior sampling")):
        sub = groups.add_parser(name, help=help_text).add_subparsers(dest='command', required=True)
        leaf(sub, 'train', f"train the {help_text} control")
        sample = leaf(sub, 'sample', "draw terminal fields from a trained control")
        sample.add_argument('--checkpoint', help="parameter file (default: OUT_DIR/params.json)")
        sample.add_argument('--resolution', type=int, help="sampling resolution per axis")

    ev = groups.add_parser('eval', help="metrics").add_subparsers(dest='command', required=True)
    mmd = leaf(ev, 'mmd', "kernel two-sample test power")
    mmd.add_argument('--generated', required=True, help="CSV of generated fields")
    mmd.add_argument('--reference', help="CSV of reference fields (default: held-out dataset draw)")
    mmd.add_argument('--project', action='store_true', help="project reference fields onto the retained modes")
    mmd.add_argument('--null', action='store_true', help="reference against itself (null calibration)")
    gp = leaf(ev, 'gp', "posterior samples against the closed-form GP posterior")
    gp.add_argument('--samples', required=True, help="CSV of posterior samples")
    gp.add_argument('--task', help="regression task JSON (default: data.task or OUT_DIR/task.json)")

    groups.add_parser('selftest', parents=[common], help="run the oracle checks")
    return parser


def _dispatch(args: argparse.Namespace, ctx: commands.RunContext) -> int:
    key = (args.group, getattr(args, 'command', None))
    if key == ('basis', 'build'):
        return commands.basis_build(ctx)
    if key == ('bridge', 'sample'):
        return commands.bridge_sample(ctx)
    if key == ('bm', 'train'):
        return commands.bm_train_command(ctx)
    if key == ('bm', 'sample'):
        return commands.bm_sample_command(ctx, args.checkpoint, args.resolution)
    if key == ('bayes', 'train'):
        return commands.bayes_train_command(ctx)
    if key == ('bayes', 'sample'):
        return commands.bayes_sample_command(ctx, args.checkpoint, args.resolution)
    if key == ('eval', 'mmd'):
        return commands.eval_mmd(ctx, args.generated, args.reference, args.project, args.null)
    if key == ('eval', 'gp'):
        return commands.eval_gp(ctx, args.samples, args.task)
    if args.group == 'selftest':
        return commands.selftest(ctx)
    raise ConfigError("Unknown command", " ".join(k for k in key if k))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        config = commands.apply_data_preset(load_config(args.config, overrides))
        os.makedirs(args.out_dir, exist_ok=True)
        return _dispatch(args, commands.RunContext(config=config, out_dir=args.out_dir, threads=args.threads))
    except (ConfigError, InvalidParameterError, SerializationError) as e:
        log_error(logger, e, "Configuration")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(f"Missing file: {e.filename}")
        return EXIT_CONFIG
    except NumericalError as e:
        log_error(logger, e, "Numerical")
        return EXIT_NUMERICAL
    except BridgeError as e:
        log_error(logger, e)
        return e.code


if __name__ == '__main__':
    sys.exit(main())
