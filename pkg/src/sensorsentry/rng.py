"""Counter-based random streams.

Every random draw in the toolkit comes from a Philox generator keyed by
integers only, so results never depend on call order or worker scheduling.
"""

import os

import numpy as np

DEFAULT_SEED = 20240601
SEED_ENV = "SENSORSENTRY_SEED"


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw else DEFAULT_SEED


def keyed(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def image_stream(global_seed: int, image_index: int) -> int:
    """64-bit stream id for one generated image."""
    state = np.random.SeedSequence([int(global_seed), int(image_index)]).generate_state(1, np.uint64)
    return int(state[0])


def knob_rng(stream: int, mode: int, knob: int) -> np.random.Generator:
    return keyed(stream, mode, knob)
