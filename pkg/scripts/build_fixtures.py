#!/usr/bin/env python3
"""Regenerate the committed fixtures: the smoke bundle and the eval corpus.

Both are deterministic; rerunning this script must leave git clean.
"""

from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from querydesk.evalharness import CorpusSpec, build_corpus, save_corpus  # noqa: E402
from querydesk.store import generate_dataset, save_dataset  # noqa: E402

SMOKE_SEED = 7
SMOKE_RECORDS = 1000


def main() -> None:
    fixtures = ROOT / "fixtures"
    dataset = generate_dataset(SMOKE_SEED, SMOKE_RECORDS)
    save_dataset(dataset, fixtures / "smoke")
    print(f"wrote smoke bundle: {len(dataset.records)} records, {len(dataset.org)} targets")

    corpus = build_corpus(CorpusSpec(), dataset)
    save_corpus(corpus, fixtures / "corpus.jsonl")
    print(f"wrote corpus: {len(corpus)} cases")


if __name__ == "__main__":
    main()
