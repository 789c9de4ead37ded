"""Named random streams derived from one experiment seed."""

import zlib

import numpy as np


def derive_rng(seed, label):
    """Generator for component ``label`` of experiment ``seed``.

    The label is hashed to a fixed integer, so adding a new component never
    shifts the stream of an existing one.
    """
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
