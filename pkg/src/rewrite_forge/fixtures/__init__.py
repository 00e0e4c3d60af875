"""Packaged fixture data.

Ships a desk-scale scored corpus, a task-spec table, and digitized
checkpoint curves so the analysis stages run end to end out of the box.
"""

import json
from importlib import resources
from pathlib import Path

CURVES_7B = "curves_7b.json"
CURVES_1P1B = "curves_1p1b.json"
CATEGORY_CURVES_7B = "category_curves_7b.json"
TASK_SPECS = "task_specs.json"
DESK_CORPUS = "desk_corpus.jsonl"

SCALE_CURVES = {"7B": CURVES_7B, "1.1B": CURVES_1P1B}
SCALE_CATEGORY_CURVES = {"7B": CATEGORY_CURVES_7B}


def fixture_path(name: str) -> Path:
    path = Path(str(resources.files(__package__).joinpath(name)))
    if not path.exists():
        raise FileNotFoundError(f"no packaged fixture named {name!r}")
    return path


def load_json(name: str):
    return json.loads(fixture_path(name).read_text(encoding="utf-8"))
