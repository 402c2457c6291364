"""Plain-text ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values are parsed as
integers, floats (``inf`` included), booleans, ``none`` or comma separated lists of
those; anything else stays a string.
"""

import logging
import os

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A configuration file could not be parsed.

    Attributes
    ----------
    path : str or None
    line : int
        One based line number of the offending entry.
    """

    def __init__(self, message, path=None, line=0):
        self.path = path
        self.line = line
        where = f' ("{path}", line {line})' if path is not None else ""
        super().__init__(f"{message}{where}")


def _parse_scalar(text):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_value(text):
    text = text.strip()
    if "," in text:
        return [_parse_scalar(item.strip()) for item in text.split(",") if item.strip()]
    return _parse_scalar(text)


def format_value(value) -> str:
    if isinstance(value, (list, tuple)):
        # Single element lists need a trailing comma to read back as a list.
        items = ", ".join(format_value(v) for v in value)
        return items + "," if len(value) == 1 else items
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def parse_config(text, path=None) -> dict:
    data = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f'Expected "key = value", got "{line}"', path=path, line=lineno)
        if key in data:
            logger.warning(f'Duplicate configuration key "{key}"; the last value wins.')
        data[key] = parse_value(value)
    return data


def read_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), path=os.fspath(path))


def write_config(path, data: dict, header=None):
    lines = []
    if header is not None:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key, value in data.items():
        lines.append(f"{key} = {format_value(value)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
