"""Small bAbI-format story generators for smoke tests and demos.

These mimic the grammar of task 1 (single supporting fact) and task 20
(agent motivations). They are not the released dataset and results on
them are not comparable to published numbers.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

PEOPLE = ("Mary", "John", "Daniel", "Sandra")
LOCATIONS = ("bathroom", "bedroom", "garden", "hallway", "kitchen", "office")
MOVES = ("moved to", "went to", "journeyed to", "travelled to", "went back to")

AGENTS = ("Sumit", "Yann", "Jason", "Antoine")
MOTIVES = {
    "tired": ("bedroom", "pajamas"),
    "hungry": ("kitchen", "apple"),
    "thirsty": ("kitchen", "milk"),
    "bored": ("garden", "football"),
}


def _story_task1(rng: np.random.Generator, n_statements: int = 10) -> list[str]:
    lines, where, n = [], {}, 0
    for i in range(n_statements):
        person = PEOPLE[rng.integers(len(PEOPLE))]
        place = LOCATIONS[rng.integers(len(LOCATIONS))]
        where[person] = place
        n += 1
        lines.append(f"{n} {person} {MOVES[rng.integers(len(MOVES))]} the {place}.")
        if i % 2 == 1:
            asked = sorted(where)[rng.integers(len(where))]
            n += 1
            lines.append(f"{n} Where is {asked}? \t{where[asked]}\t{n - 1}")
    return lines


def _story_task20(rng: np.random.Generator) -> list[str]:
    lines, n = [], 0
    order = rng.permutation(len(AGENTS))
    motive_names = sorted(MOTIVES)
    for a in order:
        agent = AGENTS[a]
        motive = motive_names[rng.integers(len(motive_names))]
        place, thing = MOTIVES[motive]
        n += 1
        lines.append(f"{n} {agent} is {motive}.")
        n += 1
        lines.append(f"{n} Where will {agent.lower()} go? \t{place}\t{n - 1}")
        n += 1
        lines.append(f"{n} {agent} went to the {place}.")
        n += 1
        lines.append(f"{n} Why did {agent.lower()} go to the {place}? \t{motive}\t{n - 3}")
        n += 1
        lines.append(f"{n} {agent} grabbed the {thing} there.")
        n += 1
        lines.append(f"{n} Why did {agent.lower()} get the {thing}? \t{motive}\t{n - 5}")
    return lines


GENERATORS = {1: _story_task1, 20: _story_task20}


def generate_lines(task: int, n_stories: int, seed: int = 0) -> list[str]:
    """bAbI lines for ``n_stories`` stories in the style of ``task``.

    Tasks other than 1 and 20 reuse the task-1 grammar, which is enough to
    exercise code that only needs the four-person entity set.
    """
    gen = GENERATORS.get(task, _story_task1)
    rng = np.random.default_rng([seed, task])
    out = []
    for _ in range(n_stories):
        out.extend(gen(rng))
    return out


def write_task(data_dir, task: int, sizes=(1800, 200, 200), seed: int = 0) -> Path:
    """Write ``qa{task}_{train,valid,test}.txt`` story files into ``data_dir``."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    for offset, (split, n) in enumerate(zip(("train", "valid", "test"), sizes)):
        lines = generate_lines(task, n, seed=seed * 10 + offset)
        (data_dir / f"qa{task}_{split}.txt").write_text("\n".join(lines) + "\n",
                                                         encoding="utf-8")
    return data_dir
