"""Bounded priority store of program examples ranked by difficulty reward.

Candidates too similar (BLEU) to an incumbent are discarded outright. At
capacity, the minimum under (difficulty, insertion order) is evicted, so among
equal difficulties the older entry goes first.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from . import seeding
from .lang import parse_program
from .rewards import bleu_similarity

DEFAULT_CAPACITY = 50
DEFAULT_DEDUP_THRESHOLD = 0.25
SEED_SENTINEL_DIFFICULTY = 1.0


@dataclass(frozen=True)
class QueueEntry:
    source: str          # canonical program text
    r_diff: float
    insertion_counter: int = 0
    origin: str = "generated"  # "seed" or "generated:<iter>:<step>"


@dataclass
class ExampleQueue:
    capacity: int = DEFAULT_CAPACITY
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD
    entries: list = field(default_factory=list)
    counter: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, source: str, r_diff: float, origin: str = "generated"):
        """Returns ("accepted", entry) or ("rejected", reason)."""
        for e in self.entries:
            if bleu_similarity(e.source, source) > self.dedup_threshold:
                return "rejected", "duplicate"
        entry = QueueEntry(source, r_diff, self.counter, origin)
        self.counter += 1
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            victim = min(self.entries,
                         key=lambda e: (e.r_diff, e.insertion_counter))
            self.entries.remove(victim)
            if victim is entry:
                return "rejected", "capacity"
        return "accepted", entry

    def sample(self, n: int, seed: int) -> list:
        """Uniform without replacement from a seeded substream."""
        if n > len(self.entries):
            raise ValueError(f"cannot sample {n} of {len(self.entries)} entries")
        rng = random.Random(seeding.derive_seed(seed, "queue-sample"))
        return rng.sample(self.entries, n)

    def snapshot(self) -> bytes:
        header = {"M": self.capacity, "sigma_high": self.dedup_threshold,
                  "counter": self.counter}
        lines = [json.dumps(header, sort_keys=True)]
        for e in self.entries:
            lines.append(json.dumps({
                "source": e.source, "r_diff": e.r_diff,
                "insertion_counter": e.insertion_counter, "origin": e.origin,
            }, sort_keys=True))
        return ("\n".join(lines) + "\n").encode("utf-8")


class MalformedSnapshot(ValueError):
    pass


def restore(data: bytes) -> ExampleQueue:
    try:
        lines = data.decode("utf-8").splitlines()
        header = json.loads(lines[0])
        q = ExampleQueue(header["M"], header["sigma_high"])
        q.counter = header["counter"]
        for line in lines[1:]:
            rec = json.loads(line)
            q.entries.append(QueueEntry(rec["source"], rec["r_diff"],
                                        rec["insertion_counter"], rec["origin"]))
        return q
    except (IndexError, KeyError, ValueError, UnicodeDecodeError) as e:
        raise MalformedSnapshot(f"cannot restore queue snapshot: {e}")


def init_with_seeds(seed_programs,
                    capacity: int = DEFAULT_CAPACITY,
                    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD) -> ExampleQueue:
    """Start a queue from seed programs; each gets the sentinel difficulty 1.0
    so it survives early iterations but yields to newer equal-difficulty
    entries."""
    q = ExampleQueue(capacity, dedup_threshold)
    for src in seed_programs:
        report = parse_program(src)
        if not report.ok:
            cats = ", ".join(e.category for e in report.errors)
            raise ValueError(f"seed program does not parse ({cats})")
        status, detail = q.insert(src, SEED_SENTINEL_DIFFICULTY, origin="seed")
        if status != "accepted":
            raise ValueError(f"seed program rejected: {detail}")
    return q
