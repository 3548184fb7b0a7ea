"""Python bindings for the op2 humanoid control core."""

import json
import os

from ._core import *  # noqa: F401,F403
from ._core import DATA_DIR, Error, load_model_file, run_scenario as _run_scenario


def shipped_model():
    return load_model_file(os.path.join(DATA_DIR, "nimbro_op2.model"))


def load_scenario(name):
    with open(os.path.join(DATA_DIR, "scenarios", name + ".json")) as f:
        return json.load(f)


def run(model, scenario, seed=None):
    """Run a scenario (dict) and return its metrics as a dict."""
    return json.loads(_run_scenario(model, json.dumps(scenario), seed))
