"""Schedule types, the continuous encoding, and diary preprocessing.

A raw schedule is a person-day of contiguous timed episodes covering the full
1440 minutes. The model-facing encoding is a fixed-length sequence of
(activity token, fractional-day duration) pairs: a start token, the activity
steps, then end-token padding. Durations of the activity steps sum to one day.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import DAY_MINUTES, EOS, SOS, ActivityVocab, DEFAULT_VOCAB

DEFAULT_L = 16

# activity types whose consecutive repeats are structural zeros
MERGEABLE = ("home", "work", "education")


class ScheduleError(ValueError):
    pass


class TooManyEpisodesError(ScheduleError):
    pass


class MalformedEncodingError(ScheduleError):
    pass


class NonHomeBasedError(ScheduleError):
    """Signals filtering of a schedule that does not start and end at home."""


Episode = tuple[str, int, int]


@dataclass
class RawSchedule:
    pid: str
    episodes: list[Episode]

    def validate(self) -> None:
        if not self.episodes:
            raise ScheduleError(f"pid {self.pid}: empty schedule")
        if self.episodes[0][1] != 0:
            raise ScheduleError(f"pid {self.pid}: first episode starts after minute 0")
        if self.episodes[-1][2] != DAY_MINUTES:
            raise ScheduleError(f"pid {self.pid}: last episode ends before minute {DAY_MINUTES}")
        for i, (act, start, end) in enumerate(self.episodes):
            if end <= start:
                raise ScheduleError(f"pid {self.pid}: zero-length episode {act} at {start}")
            if i and start != self.episodes[i - 1][2]:
                raise ScheduleError(f"pid {self.pid}: gap before {act} at minute {start}")


@dataclass
class EncodedSchedule:
    acts: np.ndarray  # (L,) int token indices
    durs: np.ndarray  # (L,) fractional days

    @property
    def length(self) -> int:
        return int(self.acts.shape[0])

    def first_eos(self) -> int:
        hits = np.flatnonzero(self.acts == EOS)
        if hits.size == 0:
            raise MalformedEncodingError("no end token")
        return int(hits[0])

    def validate(self) -> None:
        acts, durs = self.acts, self.durs
        if acts.shape != durs.shape or acts.ndim != 1:
            raise MalformedEncodingError("token/duration shape mismatch")
        if acts[0] != SOS:
            raise MalformedEncodingError("sequence does not begin with the start token")
        k = self.first_eos()
        if k < 2:
            raise MalformedEncodingError("end token before any activity")
        if not np.all(acts[k:] == EOS):
            raise MalformedEncodingError("token after the first end token")
        if np.any(acts[1:k] < 2):
            raise MalformedEncodingError("special token inside the activity region")
        special = (acts == SOS) | (acts == EOS)
        if np.any(durs[special] != 0.0):
            raise MalformedEncodingError("nonzero duration on a special token")
        if np.any(durs < 0.0) or np.any(durs > 1.0):
            raise MalformedEncodingError("duration outside [0, 1]")
        total = float(durs[1:k].sum())
        if abs(total - 1.0) > 1e-6:
            raise MalformedEncodingError(f"durations sum to {total}, not 1")


def encode_schedule(
    raw: RawSchedule, vocab: ActivityVocab = DEFAULT_VOCAB, L: int = DEFAULT_L
) -> EncodedSchedule:
    raw.validate()
    n = len(raw.episodes)
    if n > L - 2:
        raise TooManyEpisodesError(
            f"pid {raw.pid}: {n} episodes exceed capacity {L - 2}"
        )
    acts = np.full(L, EOS, dtype=np.int64)
    durs = np.zeros(L, dtype=np.float64)
    acts[0] = SOS
    for i, (act, start, end) in enumerate(raw.episodes):
        acts[1 + i] = vocab.index(act)
        durs[1 + i] = (end - start) / DAY_MINUTES
    return EncodedSchedule(acts, durs)


def decode_schedule(
    enc: EncodedSchedule, vocab: ActivityVocab = DEFAULT_VOCAB, pid: str = "0"
) -> RawSchedule:
    enc.validate()
    k = enc.first_eos()
    minutes = [int(round(float(d) * DAY_MINUTES)) for d in enc.durs[1:k]]
    # nearest-minute rounding can produce empty episodes and drift; repair by
    # flooring at one minute and paying for it from the longest episodes
    minutes = [max(1, m) for m in minutes]
    minutes[-1] = DAY_MINUTES - sum(minutes[:-1])
    while minutes[-1] < 1:
        j = int(np.argmax(minutes[:-1]))
        give = min(minutes[j] - 1, 1 - minutes[-1])
        if give <= 0:
            raise MalformedEncodingError("durations too short to fill the day")
        minutes[j] -= give
        minutes[-1] += give
    episodes: list[Episode] = []
    start = 0
    for tok, m in zip(enc.acts[1:k], minutes):
        episodes.append((vocab.name(int(tok)), start, start + m))
        start += m
    return RawSchedule(pid, episodes)


def preprocess(raw: RawSchedule) -> RawSchedule:
    """Absorb trip gaps, merge repeated home/work/education, reject non-home-based.

    Gaps between episodes are treated as trips and absorbed into the preceding
    episode so activity start times are preserved; a trailing gap extends the
    final episode to midnight.
    """
    if not raw.episodes:
        raise ScheduleError(f"pid {raw.pid}: empty schedule")
    if raw.episodes[0][1] != 0:
        raise ScheduleError(f"pid {raw.pid}: first episode starts after minute 0")
    absorbed: list[Episode] = []
    for i, (act, start, end) in enumerate(raw.episodes):
        if end <= start:
            raise ScheduleError(f"pid {raw.pid}: zero-length episode {act} at {start}")
        if i and start < absorbed[-1][2]:
            raise ScheduleError(f"pid {raw.pid}: overlapping episode {act} at {start}")
        if i:
            prev_act, prev_start, _ = absorbed[-1]
            absorbed[-1] = (prev_act, prev_start, start)
        absorbed.append((act, start, end))
    last_act, last_start, last_end = absorbed[-1]
    if last_end > DAY_MINUTES:
        raise ScheduleError(f"pid {raw.pid}: episode ends after minute {DAY_MINUTES}")
    absorbed[-1] = (last_act, last_start, DAY_MINUTES)

    merged: list[Episode] = []
    for act, start, end in absorbed:
        if merged and merged[-1][0] == act and act in MERGEABLE:
            merged[-1] = (act, merged[-1][1], end)
        else:
            merged.append((act, start, end))

    if merged[0][0] != "home" or merged[-1][0] != "home":
        raise NonHomeBasedError(f"pid {raw.pid}: schedule is not home-based")
    out = RawSchedule(raw.pid, merged)
    out.validate()
    return out
