"""
This file contains internal helpers used by cli.py: application state, config loading and console output.
"""

import enum
import functools
import inspect
import json
import operator
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Optional, TypeAlias, Union

import configuraptor
import tomli
import typer
from configuraptor import convert_config
from configuraptor.helpers import find_pyproject_toml
from rich import print

from .dca import DEFAULT_WEIGHT_SET, DcaConfig, WeightMatrix, weight_set
from .errors import ConfigError, DcaBotError
from .signals import NormalizationConfig
from .simulator import Scenario, ScenarioConfig

EXIT_CODE_SUCCESS = 0
EXIT_CODE_ERROR = 1
EXIT_CODE_USAGE = 2


class ExitCodes:
    """
    Store the possible EXIT_CODE_ items for ease of use (and autocomplete).
    """

    # enum but not really
    success = EXIT_CODE_SUCCESS
    error = EXIT_CODE_ERROR
    usage = EXIT_CODE_USAGE


# a Command can return these:
T_Command_Return = bool | int | None
# t command is any @app.command() method, which can have anything as input and bool or int as output
T_Command: TypeAlias = Callable[..., T_Command_Return]
# the inner wrapper gets the same (kw)args as the command and returns its exit code
T_Inner_Wrapper: TypeAlias = Callable[..., int | None]
T_Outer_Wrapper: TypeAlias = Callable[[T_Command], T_Inner_Wrapper]


def print_json(data: Any) -> None:
    """
    Dump a report (or the State) as JSON on stdout.
    """
    indent = state.get_config().json_indent or None
    # none is different from 0 for the indent kwarg, but 0 will be changed to None for this module
    typer.echo(json.dumps(data, default=str, indent=indent))


def info(*args: str) -> None:
    """
    'print' but with blue text.
    """
    print(f"[blue]{' '.join(args)}[/blue]", file=sys.stderr)


def warn(*args: str) -> None:
    """
    'print' but with yellow text.
    """
    print(f"[yellow]{' '.join(args)}[/yellow]", file=sys.stderr)


def danger(*args: str) -> None:
    """
    'print' but with red text.
    """
    print(f"[red]{' '.join(args)}[/red]", file=sys.stderr)


def with_exit_code() -> T_Outer_Wrapper:
    """
    Convert the return value of an app.command (bool or int) to a typer Exit with return code, \
    unless the return value is Falsey, in which case the default exit happens (with exit code 0 indicating success).

    Domain errors (bad input files, invalid parameters) become a one-line red diagnostic and exit code 1;
    at --verbosity 4 they are re-raised with their traceback instead.

    Usage:
    > @app.command()
    > @with_exit_code()
    def some_command(): ...
    """

    def outer_wrapper(func: T_Command) -> T_Inner_Wrapper:
        @functools.wraps(func)
        def inner_wrapper(*args: Any, **kwargs: Any) -> int:
            try:
                result = func(*args, **kwargs)
            except (DcaBotError, OSError) as e:
                if state.verbosity > 3:
                    raise e
                danger(f"{func.__name__.replace('_', '-')}: {e}")
                result = ExitCodes.error

            if result is None:
                # assume no issue then
                result = 0

            if retcode := int(result):
                raise typer.Exit(code=retcode)

            return retcode

        return inner_wrapper

    return outer_wrapper


class Verbosity(enum.Enum):
    """
    Verbosity is used with the --verbosity argument of the cli.
    """

    # typer enum can only be string
    quiet = "1"
    normal = "2"
    verbose = "3"
    debug = "4"  # re-raise instead of printing a diagnostic

    @staticmethod
    def _compare(
        self: "Verbosity",
        other: "Verbosity_Comparable",
        _operator: Callable[["Verbosity_Comparable", "Verbosity_Comparable"], bool],
    ) -> bool:
        """
        Shared implementation of <, <=, ==, >=, > against ints, numeric strings and other Verbosity members.
        """
        match other:
            case Verbosity():
                return _operator(self.value, other.value)
            case int():
                return _operator(int(self.value), other)
            case str():
                return _operator(int(self.value), int(other))

    def __gt__(self, other: "Verbosity_Comparable") -> bool:
        """
        Magic method for self > other.
        """
        return self._compare(self, other, operator.gt)

    def __ge__(self, other: "Verbosity_Comparable") -> bool:
        """
        Magic method for self >= other.
        """
        return self._compare(self, other, operator.ge)

    def __lt__(self, other: "Verbosity_Comparable") -> bool:
        """
        Magic method for self < other.
        """
        return self._compare(self, other, operator.lt)

    def __le__(self, other: "Verbosity_Comparable") -> bool:
        """
        Magic method for self <= other.
        """
        return self._compare(self, other, operator.le)

    def __eq__(self, other: Union["Verbosity", str, int, object]) -> bool:
        """
        Magic method for self == other.

        Typer compares parameter defaults against Ellipsis and inspect._empty; those are never equal.
        """
        if other is Ellipsis or other is inspect._empty:
            return False
        if not isinstance(other, (str, int, Verbosity)):
            raise TypeError(f"Object of type {type(other)} can not be compared with Verbosity")
        return self._compare(self, other, operator.eq)

    def __hash__(self) -> int:
        """
        Magic method for `hash(self)`, also required for Typer to work.
        """
        return hash(self.value)


Verbosity_Comparable = Verbosity | str | int

DEFAULT_VERBOSITY = Verbosity.normal


class Format(enum.Enum):
    """
    Options for dcabot --format.
    """

    text = "text"
    json = "json"

    def __eq__(self, other: object) -> bool:
        """
        Magic method for self == other; a Format also equals its string value.
        """
        if other is Ellipsis or other is inspect._empty:
            return False
        if isinstance(other, Format):
            return self.value == other.value
        return self.value == other

    def __hash__(self) -> int:
        """
        Magic method for `hash(self)`, also required for Typer to work.
        """
        return hash(self.value)


DEFAULT_FORMAT = Format.text


class AbstractConfig(configuraptor.TypedConfig):
    """
    Strictly typed config base.
    """

    _strict = True


@dataclass
class Config(AbstractConfig):
    """
    Every tunable of the pipeline, typed.

    Filled from [tool.dcabot] in pyproject.toml, then a --config key=value file, then command-line flags.
    Also accessible via state.config
    """

    ### signals ###
    n_ps: float = 40.0
    n_ds: float = 10.0
    n_ss1: float = 5.0
    n_ss2: float = 20.0

    ### dca ###
    population_size: int = 100
    threshold_low: float = 100.0
    threshold_high: float = 500.0
    weight_set: str = DEFAULT_WEIGHT_SET
    # nine explicit weights (csm, semi, mat rows) override weight_set
    weights: Optional[list[float]] = None
    replication: int = 1
    seed: int = 0
    repetitions: int = 10

    ### analysis ###
    mcav_threshold: float = 0.5
    mac_threshold: float = 0.2
    src_threshold: float = 0.5
    suspect_pid: Optional[int] = None

    ### simulator ###
    duration_s: int = 60
    bot_response_mean_s: float = 3.226
    keylog_rate: float = 40.0
    flood_rate: float = 100.0
    chat_gap_s: float = 30.0
    command_gap_s: float = 4.0
    channel_gap_s: float = 1.0
    pong_interval_s: float = 60.0
    background_rate: float = 0.5

    json_indent: int = 4
    pyproject: Optional[str] = None

    def weight_matrix(self) -> WeightMatrix:
        """
        The explicit weights if given, else the named preset.
        """
        if self.weights:
            return WeightMatrix.from_flat(self.weights)
        return weight_set(self.weight_set)

    def normalization(self) -> NormalizationConfig:
        """
        Build the signal normalization constants.
        """
        return NormalizationConfig(n_ps=self.n_ps, n_ds=self.n_ds, n_ss1=self.n_ss1, n_ss2=self.n_ss2)

    def dca(self, seed: Optional[int] = None, weights: Optional[WeightMatrix] = None) -> DcaConfig:
        """
        Build the population config for one run.
        """
        return DcaConfig(
            population_size=self.population_size,
            threshold_low=self.threshold_low,
            threshold_high=self.threshold_high,
            weights=weights or self.weight_matrix(),
            replication=self.replication,
            seed=self.seed if seed is None else seed,
        )

    def scenario(self, scenario: str | Scenario, seed: Optional[int] = None) -> ScenarioConfig:
        """
        Build the generator config for one session.
        """
        return ScenarioConfig(
            scenario=Scenario.parse(scenario),
            duration_s=self.duration_s,
            seed=self.seed if seed is None else seed,
            bot_response_mean_s=self.bot_response_mean_s,
            keylog_rate=self.keylog_rate,
            flood_rate=self.flood_rate,
            chat_gap_s=self.chat_gap_s,
            command_gap_s=self.command_gap_s,
            channel_gap_s=self.channel_gap_s,
            pong_interval_s=self.pong_interval_s,
            background_rate=self.background_rate,
            n_ss1=self.n_ss1,
        )

    def seeds(self) -> list[int]:
        """
        seed, seed + 1, ..., seed + repetitions - 1.
        """
        return list(range(self.seed, self.seed + self.repetitions))

    def snapshot(self) -> dict[str, Any]:
        """
        The tunables as a plain dict (for run manifests).
        """
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("pyproject", "json_indent")}


MaybeConfig: TypeAlias = Optional[Config]

_FIELD_TYPES: dict[str, Any] = {f.name: f.type for f in fields(Config)}


def _coerce(values: dict[str, Any]) -> dict[str, Any]:
    """
    Normalize keys (dashes to underscores) and widen ints where the config expects floats.

    TOML and key=value files write `n-ps = 40` just as often as `n-ps = 40.0`.
    """
    result = {}
    for key, value in values.items():
        key = key.replace("-", "_")
        hint = _FIELD_TYPES.get(key)
        if hint is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif hint == Optional[list[float]] and isinstance(value, list):
            value = [float(_) if isinstance(_, int) and not isinstance(_, bool) else _ for _ in value]
        result[key] = value
    return result


def _parse_value(raw: str) -> Any:
    """
    Read a value as a TOML scalar or array; bare words stay strings.
    """
    try:
        return tomli.loads(f"value = {raw}")["value"]
    except tomli.TOMLDecodeError:
        return raw


def read_key_value_file(path: str | Path) -> dict[str, Any]:
    """
    Parse a flat `key=value` config file: one pair per line, `#` starts a comment.

    Raises:
        ConfigError: a line without '='.
    """
    values: dict[str, Any] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            values[key] = _parse_value(value)
    return _coerce(values)


def _get_dcabot_config(toml_path: Optional[str | Path] = None) -> MaybeConfig:
    """
    Parse the [tool.dcabot] part of the nearest pyproject.toml.

    Args:
        toml_path: by default, a relevant pyproject.toml is searched for upwards from the working directory.
                    If a toml_path is provided, that file will be used instead.
    """
    if toml_path is None:
        toml_path = find_pyproject_toml()

    if not toml_path:
        return None

    with open(toml_path, "rb") as f:
        full_config = tomli.load(f)

    tool_config = full_config.get("tool", {}).get("dcabot", {})

    config = configuraptor.load_into(Config, _coerce(tool_config))
    config.update(pyproject=str(toml_path))
    return config


def get_dcabot_config(
    verbosity: Verbosity = DEFAULT_VERBOSITY,
    toml_path: Optional[str] = None,
    config_file: Optional[str] = None,
    **overwrites: Any,
) -> Config:
    """
    Load the relevant config settings.

    A broken pyproject.toml falls back to the defaults; a broken --config file is an error.

    Args:
        verbosity: if pyproject.toml can't be used, level 3+ will show a warning and 4+ will raise the exception.
        toml_path: use this pyproject.toml instead of searching for one
        config_file: a key=value file that overrides pyproject.toml
        overwrites (dict[str, Any): cli arguments can overwrite the config.
                If a value is None, the key is not overwritten.
    """
    # strip out any 'overwrites' with None as value
    overwrites = convert_config(overwrites)

    config: MaybeConfig
    try:
        config = _get_dcabot_config(toml_path)
    except Exception as e:
        if verbosity > 3:
            # verbosity = debug
            raise e
        elif verbosity > 2:
            # verbosity = verbose
            warn(f"Error parsing pyproject.toml ({e}), falling back to defaults.")
        config = None

    config = config or Config()

    if config_file:
        values = read_key_value_file(config_file)
        # round-trip through load_into for strict type checks
        current = {key: value for key, value in config.snapshot().items() if value is not None}
        checked = configuraptor.load_into(Config, {**current, **values})
        checked.update(pyproject=config.pyproject)
        config = checked

    config.update(**_coerce(overwrites))
    return config


@dataclass()
class ApplicationState:
    """
    Application State - global user defined variables.

    State contains generic variables passed BEFORE the subcommand (so --verbosity, --config, ...),
    whereas Config contains the tunables, updated with arguments AFTER the subcommand
    (e.g. dcabot detect-dca --weight-set WS5 updates the config, not the state).
    """

    verbosity: Verbosity = DEFAULT_VERBOSITY
    output_format: Format = DEFAULT_FORMAT
    config_file: Optional[str] = None
    config: MaybeConfig = None

    def load_config(self, **overwrites: Any) -> Config:
        """
        Load the config from pyproject.toml and the --config file, with optional overwriting settings.
        """
        if "verbosity" in overwrites:
            self.verbosity = overwrites.pop("verbosity")
        if "config_file" in overwrites:
            self.config_file = overwrites.pop("config_file")
        if "output_format" in overwrites:
            self.output_format = overwrites.pop("output_format")

        self.config = get_dcabot_config(verbosity=self.verbosity, config_file=self.config_file, **overwrites)
        return self.config

    def get_config(self) -> Config:
        """
        Get a filled config instance.
        """
        return self.config or self.load_config()

    def update_config(self, **values: Any) -> Config:
        """
        Overwrite default/toml settings with cli values.

        Example:
            `config = state.update_config(weight_set="WS5")`
            This will update the state's config and return the same object with the updated settings.
        """
        existing_config = self.get_config()

        values = _coerce(convert_config(values))
        existing_config.update(**values)
        return existing_config

    def log(self, *args: str) -> None:
        """
        Report a pipeline step at --verbosity 3 and up.
        """
        if self.verbosity > 2:
            info(*args)


state = ApplicationState()


def reset_state() -> None:
    """
    Forget the loaded config and global flags.
    """
    state.verbosity = DEFAULT_VERBOSITY
    state.output_format = DEFAULT_FORMAT
    state.config_file = None
    state.config = None

