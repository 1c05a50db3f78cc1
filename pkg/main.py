import argparse
import os
import sys

from config_manager import COMMON_DEFAULTS, DEFAULTS, SUBCOMMANDS, ConfigManager
from qtimes_errors import ConfigError
from qtimes_runner import ExperimentRunner
from qtimes_utils import dumps_json
from theme_manager import ThemeManager

if getattr(sys, 'frozen', False):
    base_path = os.path.dirname(sys.executable)
else:
    base_path = os.path.dirname(os.path.abspath(__file__))
CONFIG_FILE = os.path.join(base_path, "qtimes.cfg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got '{text}'")


def _add_knobs(parser, defaults):
    for key, default in defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, dest=key, type=_bool, default=None, metavar="BOOL")
        elif isinstance(default, int):
            parser.add_argument(flag, dest=key, type=int, default=None)
        elif isinstance(default, float):
            parser.add_argument(flag, dest=key, type=float, default=None)
        else:
            parser.add_argument(flag, dest=key, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="qtimes", description="Quantum arrival and dwell time experiments.")
    parser.add_argument("--config", default=None, help="key = value run file")
    parser.add_argument("--no-color", action="store_true")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _add_knobs(p, COMMON_DEFAULTS)
        _add_knobs(p, DEFAULTS[name])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    theme = ThemeManager(use_color=not args.no_color)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("config", "no_color", "quiet", "subcommand") and v is not None}
    try:
        config_file = args.config
        if config_file is None and os.path.exists(CONFIG_FILE):
            config_file = CONFIG_FILE
        if config_file is not None and not os.path.exists(config_file):
            raise ConfigError(f"config file '{config_file}' does not exist")
        manager = ConfigManager(config_file)
        experiment = manager.build_experiment(args.subcommand, overrides)
    except ConfigError as e:
        print(dumps_json({"error": "config", "message": str(e)}))
        return EXIT_CONFIG

    runner = ExperimentRunner(theme=theme, quiet=args.quiet)
    runner.configure(experiment)
    try:
        code = runner.run()
    except KeyboardInterrupt:
        runner.stop()
        print(theme.format_log("Interrupted", "warning"))
        return EXIT_NUMERICAL
    if code != EXIT_OK:
        print(runner.error_json() or dumps_json({"error": "validation", "message": "acceptance checks failed"}))
    return code


if __name__ == "__main__":
    sys.exit(main())
