"""Synthetic typicality experiment for end-to-end runs and smoke tests.

Builds a training corpus in which each verb frame's typical object occurs
ten times as often as its atypical object, together with matched stimulus
rows (one typical and one atypical target per frame) and the expected
pattern {typical LOWER atypical}.  A model trained on the corpus should
assign typical targets roughly log2(10) fewer bits of surprisal.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EXPERIMENT_ID = "synth_typicality"
TYPICAL_PER_ATYPICAL = 10


@dataclass(frozen=True)
class SyntheticExperiment:
    train_sentences: tuple[tuple[str, ...], ...]
    stimulus_text: str
    pattern_text: str


def generate(seed: int = 0, n_items: int = 60, atypical_repeats: int = 2) -> SyntheticExperiment:
    """Deterministic corpus + stimuli for one typicality experiment.

    Each frame contributes ``atypical_repeats`` atypical and ``10 *
    atypical_repeats`` typical training sentences (exact counts, shuffled by
    the seed), so the 10:1 frequency ratio holds per frame by construction.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for k in range(n_items):
        frames.append({
            "agent": f"agent{k:02d}",
            "verb": f"verb{k:02d}",
            "typical": f"object{k:02d}t",
            "atypical": f"object{k:02d}a",
        })

    sentences: list[tuple[str, ...]] = []
    for frame in frames:
        base = (frame["agent"], frame["verb"])
        for _ in range(TYPICAL_PER_ATYPICAL * atypical_repeats):
            sentences.append(base + (frame["typical"], "today"))
        for _ in range(atypical_repeats):
            sentences.append(base + (frame["atypical"], "today"))
    order = rng.permutation(len(sentences))
    shuffled = tuple(sentences[i] for i in order)

    stimulus_lines = ["experiment\titem\tcondition\tsentence"]
    for k, frame in enumerate(frames):
        for condition in ("typical", "atypical"):
            sentence = f"{frame['agent']} {frame['verb']} *{frame[condition]}* today"
            stimulus_lines.append(
                f"{EXPERIMENT_ID}\tf{k:02d}\t{condition}\t{sentence}"
            )
    pattern_text = (
        "# synthetic construction: typical continuations are 10x more frequent\n"
        "# than atypical ones in the training corpus, so lower surprisal is\n"
        "# expected for typical targets\n"
        f"{EXPERIMENT_ID}: typical LOWER atypical\n"
    )
    return SyntheticExperiment(
        train_sentences=shuffled,
        stimulus_text="\n".join(stimulus_lines) + "\n",
        pattern_text=pattern_text,
    )


def write_dataset(out_dir, seed: int = 0, n_items: int = 60) -> dict[str, Path]:
    """Materialize the synthetic dataset as files under ``out_dir``."""
    out_dir = Path(out_dir)
    corpus_dir = out_dir / "corpus"
    expected_dir = out_dir / "expected"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    expected_dir.mkdir(parents=True, exist_ok=True)
    data = generate(seed=seed, n_items=n_items)
    train_path = out_dir / "train.txt"
    train_path.write_text(
        "\n".join(" ".join(s) for s in data.train_sentences) + "\n", encoding="utf-8"
    )
    stimulus_path = corpus_dir / f"{EXPERIMENT_ID}.tsv"
    stimulus_path.write_text(data.stimulus_text, encoding="utf-8")
    pattern_path = expected_dir / f"{EXPERIMENT_ID}.txt"
    pattern_path.write_text(data.pattern_text, encoding="utf-8")
    return {"train": train_path, "stimuli": stimulus_path, "pattern": pattern_path}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="generate the synthetic typicality dataset"
    )
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--items", type=int, default=60)
    args = parser.parse_args(argv)
    paths = write_dataset(args.out_dir, seed=args.seed, n_items=args.items)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
