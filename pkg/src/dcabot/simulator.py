"""
Seeded generator of raw call traces for the eight experimental sessions.

Each session has a lead-in, an attack window over the middle two thirds and a cool-down.
Processes get fixed pids so traces (and everything derived from them) are stable across runs.

Scenarios:
    E1       idle bot answering server PINGs next to the user's normal applications
    E2.1.a/b keylogging bot (GetKeyboardState / GetAsyncKeyState) answering botmaster commands
    E2.2.a/b flooding bot (connect+send SYN shape / socket+sendto UDP shape)
    E2.3.a/b keylogging and flooding at the same time
    E3       no bot: IRC chat, one 10 KB file transfer, editors doing file I/O
"""

import enum
import typing
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .errors import InvalidScenario
from .logio import FILE_CALLS, Manifest
from .signals import RawCallEvent


class Scenario(enum.Enum):
    """
    The eight sessions; values are the ids used on the command line.
    """

    E1 = "E1"
    E2_1_A = "E2.1.a"
    E2_1_B = "E2.1.b"
    E2_2_A = "E2.2.a"
    E2_2_B = "E2.2.b"
    E2_3_A = "E2.3.a"
    E2_3_B = "E2.3.b"
    E3 = "E3"

    @classmethod
    def parse(cls, value: "str | Scenario") -> "Scenario":
        """
        Look up a scenario by id (case-insensitive).

        Raises:
            InvalidScenario: unknown id.
        """
        if isinstance(value, Scenario):
            return value
        for scenario in cls:
            if scenario.value.lower() == str(value).strip().lower():
                return scenario
        raise InvalidScenario(
            f"unknown scenario {value!r}, choose from {', '.join(s.value for s in cls)}", scenario=str(value)
        )

    @property
    def keylogging(self) -> bool:
        """
        Does the bot intercept keystrokes?
        """
        return self in (Scenario.E2_1_A, Scenario.E2_1_B, Scenario.E2_3_A, Scenario.E2_3_B)

    @property
    def flooding(self) -> bool:
        """
        Does the bot flood a target?
        """
        return self in (Scenario.E2_2_A, Scenario.E2_2_B, Scenario.E2_3_A, Scenario.E2_3_B)

    @property
    def variant(self) -> Optional[str]:
        """
        "a" or "b" for the E2 sessions.
        """
        return self.value[-1] if self.value.startswith("E2") else None


class Behavior(enum.Enum):
    """
    Call generators a process can run.
    """

    ping_pong = "ping-pong"
    command_channel = "command-channel"
    keylog = "keylog"
    syn_flood = "syn-flood"
    udp_flood = "udp-flood"
    chat = "chat"
    file_transfer = "file-transfer"
    file_access = "file-access"
    keyboard_polling = "keyboard-polling"
    mostly_idle = "mostly-idle"


BOT = "bot"
IRC = "irc"
CMD = "cmd"
NOTEPAD = "notepad"
WORDPAD = "wordpad"
HOOK = "hook"

PIDS: dict[str, int] = {BOT: 722, IRC: 1001, CMD: 1002, NOTEPAD: 1003, WORDPAD: 1004, HOOK: 1005}

KEYLOG_CALLS = {"a": "GetKeyboardState", "b": "GetAsyncKeyState"}
# the editors' own keyboard-status polling
EDITOR_KEYBOARD_CALL = "GetKeyboardState"

TYPING_BURST_MEAN_S = 8.0
TYPING_PAUSE_MEAN_S = 2.0
EDITOR_POLL_CHANCE = 0.3
EDITOR_POLL_CALLS = 3
TRANSFER_SENDS = 10
TRANSFER_SPACING_S = 0.1


@dataclass(frozen=True)
class ProcessProfile:
    """
    One simulated process.
    """

    pid: int
    name: str
    behaviors: frozenset[Behavior]


def profiles_for(scenario: Scenario) -> tuple[ProcessProfile, ...]:
    """
    The processes running in a session, with what each of them does.
    """

    def profile(name: str, *behaviors: Behavior) -> ProcessProfile:
        return ProcessProfile(PIDS[name], name, frozenset(behaviors))

    editor_behaviors = [Behavior.file_access]
    if scenario.keylogging or scenario is Scenario.E3:
        editor_behaviors.append(Behavior.keyboard_polling)

    if scenario is Scenario.E3:
        return (
            profile(IRC, Behavior.chat, Behavior.file_transfer, Behavior.file_access),
            profile(CMD, Behavior.mostly_idle),
            profile(NOTEPAD, *editor_behaviors),
            profile(WORDPAD, *editor_behaviors),
            profile(HOOK, Behavior.mostly_idle),
        )

    bot = [Behavior.ping_pong]
    if scenario is not Scenario.E1:
        bot.append(Behavior.command_channel)
    if scenario.keylogging:
        bot.append(Behavior.keylog)
    if scenario.flooding:
        bot.append(Behavior.syn_flood if scenario.variant == "a" else Behavior.udp_flood)

    return (
        profile(BOT, *bot),
        profile(IRC, Behavior.chat, Behavior.file_access),
        profile(CMD, Behavior.file_access),
        profile(NOTEPAD, *editor_behaviors),
        profile(WORDPAD, *editor_behaviors),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """
    Everything that shapes one generated session. Times in seconds, rates in calls per second.

    command_gap_s: mean gap between botmaster commands the bot answers while attacking
    channel_gap_s: mean gap between C&C channel messages the bot reads while flooding
    pong_interval_s: how often the idle bot answers a server PING
    background_rate: file-access rate of the normal applications
    """

    scenario: Scenario
    duration_s: int = 60
    seed: int = 0
    bot_response_mean_s: float = 3.226
    keylog_rate: float = 40.0
    flood_rate: float = 100.0
    chat_gap_s: float = 30.0
    command_gap_s: float = 4.0
    channel_gap_s: float = 1.0
    pong_interval_s: float = 60.0
    background_rate: float = 0.5
    n_ss1: float = 5.0

    def __post_init__(self) -> None:
        """
        Resolve a scenario id and validate the parameters.

        Raises:
            InvalidScenario: unknown scenario or unusable parameters.
        """
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        name = self.scenario.value

        if isinstance(self.duration_s, bool) or not isinstance(self.duration_s, int) or self.duration_s < 10:
            raise InvalidScenario(f"duration_s must be an integer of at least 10, got {self.duration_s!r}", name)
        if self.seed < 0:
            raise InvalidScenario(f"seed must be non-negative, got {self.seed}", name)

        positive = (
            "bot_response_mean_s",
            "keylog_rate",
            "flood_rate",
            "chat_gap_s",
            "command_gap_s",
            "channel_gap_s",
            "pong_interval_s",
            "background_rate",
            "n_ss1",
        )
        for key in positive:
            if not getattr(self, key) > 0:
                raise InvalidScenario(f"{key} must be positive, got {getattr(self, key)!r}", name)

        if self.flood_rate < 1 / self.n_ss1:
            raise InvalidScenario(
                f"flood_rate {self.flood_rate} is too slow to flood (needs at least {1 / self.n_ss1:g} calls/s)", name
            )


def attack_window(duration_s: float) -> tuple[float, float]:
    """
    The middle two thirds of a session, in seconds.
    """
    return duration_s / 6, duration_s * 5 / 6


class _TraceBuilder:
    """
    Collects (t_ms, pid, name, call) tuples; sorting is stable so same-millisecond calls keep their order.
    """

    def __init__(self, cfg: ScenarioConfig) -> None:
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.end_ms = cfg.duration_s * 1000
        self.calls: list[tuple[int, int, str, str]] = []

    def exp(self, mean: float) -> float:
        # exponential draw kept strictly positive
        return max(float(self.rng.exponential(mean)), 0.001)

    def add(self, t_s: float, profile: ProcessProfile, call: str) -> None:
        t_ms = int(t_s * 1000)
        if 0 <= t_ms < self.end_ms:
            self.calls.append((t_ms, profile.pid, profile.name, call))

    def add_ms(self, t_ms: int, profile: ProcessProfile, call: str) -> None:
        if 0 <= t_ms < self.end_ms:
            self.calls.append((t_ms, profile.pid, profile.name, call))

    def poisson(self, rate: float, start: float, end: float) -> list[float]:
        times = []
        t = start + self.exp(1 / rate)
        while t < end:
            times.append(t)
            t += self.exp(1 / rate)
        return times

    def regular(self, rate: float, start: float, end: float) -> np.ndarray:
        return np.arange(start * 1000, end * 1000, 1000 / rate)

    def events(self) -> list[RawCallEvent]:
        ordered = sorted(self.calls, key=lambda call: call[0])
        return [RawCallEvent.of(t_ms, pid, name, call) for t_ms, pid, name, call in ordered]


def _typing_bursts(builder: _TraceBuilder, start: float, end: float) -> list[tuple[float, float]]:
    """
    Alternating typing bursts and pauses, starting with a burst.
    """
    bursts = []
    t = start
    while t < end:
        length = builder.exp(TYPING_BURST_MEAN_S)
        bursts.append((t, min(t + length, end)))
        t += length + builder.exp(TYPING_PAUSE_MEAN_S)
    return bursts


def _ping_pong(builder: _TraceBuilder, bot: ProcessProfile) -> None:
    interval = builder.cfg.pong_interval_s
    t = float(builder.rng.uniform(0, min(interval, builder.cfg.duration_s)))
    while t < builder.cfg.duration_s:
        builder.add(t, bot, "recv")
        builder.add(t, bot, "send")
        t += interval


def _command_channel(builder: _TraceBuilder, bot: ProcessProfile, window: tuple[float, float], respond: bool) -> None:
    start, end = window
    gap = builder.cfg.command_gap_s if respond else builder.cfg.channel_gap_s
    # the command that starts the attack
    t = start
    while t < end:
        builder.add(t, bot, "recv")
        if respond:
            builder.add(t + builder.exp(builder.cfg.bot_response_mean_s), bot, "send")
        t += builder.exp(gap)


def _keylog(builder: _TraceBuilder, bot: ProcessProfile, bursts: list[tuple[float, float]], call: str) -> None:
    for start, end in bursts:
        for t_ms in builder.regular(builder.cfg.keylog_rate, start, end):
            builder.add_ms(int(t_ms), bot, call)


def _flood(builder: _TraceBuilder, bot: ProcessProfile, window: tuple[float, float], calls: tuple[str, str]) -> None:
    for t_ms in builder.regular(builder.cfg.flood_rate, *window):
        for call in calls:
            builder.add_ms(int(t_ms), bot, call)


def _chat(builder: _TraceBuilder, irc: ProcessProfile) -> None:
    for t in builder.poisson(1 / builder.cfg.chat_gap_s, 0, builder.cfg.duration_s):
        builder.add(t, irc, "recv" if builder.rng.random() < 0.5 else "send")


def _file_transfer(builder: _TraceBuilder, irc: ProcessProfile, window: tuple[float, float]) -> None:
    start = float(builder.rng.uniform(*window))
    for index in range(TRANSFER_SENDS):
        builder.add(start + index * TRANSFER_SPACING_S, irc, "send")


def _file_access(builder: _TraceBuilder, profile: ProcessProfile, rate: float) -> None:
    for t in builder.poisson(rate, 0, builder.cfg.duration_s):
        builder.add(t, profile, FILE_CALLS[int(builder.rng.integers(len(FILE_CALLS)))])


def _keyboard_polling(
    builder: _TraceBuilder, editors: list[ProcessProfile], bursts: list[tuple[float, float]]
) -> None:
    for start, _ in bursts:
        if builder.rng.random() >= EDITOR_POLL_CHANCE:
            continue
        editor = editors[int(builder.rng.integers(len(editors)))]
        for index in range(EDITOR_POLL_CALLS):
            builder.add(start + index * 0.05, editor, EDITOR_KEYBOARD_CALL)


def generate_scenario(cfg: ScenarioConfig) -> list[RawCallEvent]:
    """
    Generate the raw call trace of one session, sorted by time.

    The same config (seed included) always gives the same trace.
    """
    builder = _TraceBuilder(cfg)
    scenario = cfg.scenario
    window = attack_window(cfg.duration_s)
    profiles = {p.name: p for p in profiles_for(scenario)}

    # the user types during the attack window, or all session long when there is no attack
    typing_span = (0.0, float(cfg.duration_s)) if scenario is Scenario.E3 else window
    bursts = _typing_bursts(builder, *typing_span) if scenario.keylogging or scenario is Scenario.E3 else []

    if bot := profiles.get(BOT):
        _ping_pong(builder, bot)
        if Behavior.command_channel in bot.behaviors:
            _command_channel(builder, bot, window, respond=not scenario.flooding)
        if Behavior.keylog in bot.behaviors:
            _keylog(builder, bot, bursts, KEYLOG_CALLS[typing.cast(str, scenario.variant)])
        if Behavior.syn_flood in bot.behaviors:
            _flood(builder, bot, window, ("connect", "send"))
        if Behavior.udp_flood in bot.behaviors:
            _flood(builder, bot, window, ("socket", "sendto"))

    for profile in profiles.values():
        if Behavior.chat in profile.behaviors:
            _chat(builder, profile)
        if Behavior.file_transfer in profile.behaviors:
            _file_transfer(builder, profile, window)
        if Behavior.file_access in profile.behaviors:
            _file_access(builder, profile, cfg.background_rate)
        if Behavior.mostly_idle in profile.behaviors:
            _file_access(builder, profile, cfg.background_rate / 4)

    editors = [p for p in profiles.values() if Behavior.keyboard_polling in p.behaviors]
    if editors:
        _keyboard_polling(builder, editors, bursts)

    return builder.events()


def manifest_for(cfg: ScenarioConfig) -> Manifest:
    """
    Scenario id, seed, every parameter and the pid -> process name map.
    """
    manifest: dict[str, Any] = {
        "scenario": cfg.scenario.value,
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "bot_response_mean_s": cfg.bot_response_mean_s,
        "keylog_rate": cfg.keylog_rate,
        "flood_rate": cfg.flood_rate,
        "chat_gap_s": cfg.chat_gap_s,
        "command_gap_s": cfg.command_gap_s,
        "channel_gap_s": cfg.channel_gap_s,
        "pong_interval_s": cfg.pong_interval_s,
        "background_rate": cfg.background_rate,
        "processes": {str(p.pid): p.name for p in profiles_for(cfg.scenario)},
    }
    return manifest


def process_names(manifest: Optional[Manifest]) -> dict[int, str]:
    """
    The pid -> name map a manifest carries (empty when there is none).
    """
    if not manifest:
        return {}
    return {int(pid): str(name) for pid, name in manifest.get("processes", {}).items()}
