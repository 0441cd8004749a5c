"""Root-seed split scheme.

Every random stream is derived from ``(root_seed, namespace, index)`` through
``numpy.random.SeedSequence``, so any single episode can be replayed alone:

* ``env``      episode spawn sampling, one child per episode index
* ``dropout``  LiDAR point dropout, one child per episode index
* ``policy``   network initialisation (index 0)
* ``action``   action sampling during training, one child per update
* ``shuffle``  minibatch permutation, one child per update
* ``eval_env`` / ``eval_dropout``  the same two streams for test episodes,
  kept apart so evaluation never replays a training episode
"""
import numpy as np

NAMESPACES = {"env": 1, "dropout": 2, "policy": 3, "action": 4, "shuffle": 5, "eval_env": 6, "eval_dropout": 7}


def seed_for(root: int, namespace: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(root), NAMESPACES[namespace], int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(root: int, namespace: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root), NAMESPACES[namespace], int(index)]))
