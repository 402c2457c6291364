"""Checksums of the files making up an optimised bundle.

A bundle's configuration file records one ``<algorithm>.<file name>`` entry per
artefact so that a truncated or hand-edited file is caught before it is decoded.
"""

import io
import logging
import hashlib
import os

logger = logging.getLogger(__name__)

DEFAULT_ALGORITHM = "md5"


class HashMismatchError(IOError):
    pass


def compute_hash(filename, algorithm=DEFAULT_ALGORITHM, chunk_size=io.DEFAULT_BUFFER_SIZE):
    """Hex digest of `filename`, read in chunks of `chunk_size` bytes."""
    h = hashlib.new(algorithm)
    with open(filename, mode="rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


def check_hash(filename, expected, algorithm=DEFAULT_ALGORITHM, **kwargs):
    """Raise `HashMismatchError` unless `filename` hashes to `expected` (case insensitive)."""
    actual = compute_hash(filename, algorithm=algorithm, **kwargs)
    if expected.lower() != actual.lower():
        raise HashMismatchError(f'Hash mismatch using {algorithm} on file: "{filename}"')


def manifest_entries(paths, algorithm=DEFAULT_ALGORITHM) -> dict:
    """Map ``"<algorithm>.<basename>"`` to the digest of each path in `paths`."""
    return {
        f"{algorithm}.{os.path.basename(p)}": compute_hash(p, algorithm=algorithm) for p in paths
    }


def verify_manifest(paths, entries, algorithm=DEFAULT_ALGORITHM):
    """Check every path in `paths` against `entries`, popping the matching keys.

    Paths without an entry are skipped with a warning. The popped entries are
    returned so the remaining items of `entries` hold only non-hash data.
    """
    checked = {}
    for p in paths:
        key = f"{algorithm}.{os.path.basename(p)}"
        expected = entries.pop(key, None)
        if expected is None:
            logger.warning(f'No {algorithm} entry for "{p}"; skipping integrity check.')
            continue
        check_hash(p, str(expected), algorithm=algorithm)
        checked[key] = expected
    return checked
