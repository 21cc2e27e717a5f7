"""Versioned structured-text files.

Every input file starts with a header line such as ``modqp-config v1``; the
rest of the file is a YAML key-value tree. Mappings and sequences loaded
here remember the source line of each entry so validation errors can point
at ``file:line: field``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from .errors import ScenarioError


class Node:
    """Mixin recording the line of the container and of each entry."""

    line = None
    lines = None

    def line_of(self, key):
        if self.lines and key in self.lines:
            return self.lines[key]
        return self.line


class NodeDict(dict, Node):
    pass


class NodeList(list, Node):
    pass


class _Loader(yaml.SafeLoader):
    line_offset = 0


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = NodeDict()
    out.line = node.start_mark.line + 1 + loader.line_offset
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1 + loader.line_offset
    return out


def _construct_sequence(loader, node):
    out = NodeList(loader.construct_object(child, deep=True) for child in node.value)
    out.line = node.start_mark.line + 1 + loader.line_offset
    out.lines = {i: child.start_mark.line + 1 + loader.line_offset
                 for i, child in enumerate(node.value)}
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def parse_text(text: str, header: str, path=None) -> NodeDict:
    """Check the version header and parse the YAML body that follows it."""
    first, _, body = text.partition("\n")
    if first.strip() != header:
        raise ScenarioError(f"expected header line {header!r}, found {first.strip()!r}",
                            path=path, line=1)

    class Loader(_Loader):
        line_offset = 1

    try:
        data = yaml.load(body, Loader=Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 2 if mark is not None else None
        raise ScenarioError(f"malformed file: {exc}", path=path, line=line) from None
    if data is None:
        data = NodeDict()
        data.line, data.lines = 2, {}
    if not isinstance(data, dict):
        raise ScenarioError("file body must be a mapping", path=path, line=2)
    return data


def read_file(path, header: str) -> NodeDict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read file: {exc.strerror}", path=path) from None
    return parse_text(text, header, path=path)


class Reader:
    """Typed field access over a parsed tree, raising located errors."""

    def __init__(self, path=None):
        self.path = path

    def error(self, message, node=None, key=None, field=None):
        line = None
        if isinstance(node, Node):
            line = node.line_of(key) if key is not None else node.line
        return ScenarioError(message, path=self.path, line=line, field=field)

    def require(self, node, key, field):
        if not isinstance(node, dict) or key not in node:
            return self._missing(node, field)
        return node[key]

    def _missing(self, node, field):
        raise self.error("required field is missing", node, field=field)

    def vector(self, node, key, field, size=3, default=None):
        if not isinstance(node, dict) or key not in node:
            if default is not None:
                return np.asarray(default, dtype=float)
            return self._missing(node, field)
        value = node[key]
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise self.error("expected a list of numbers", node, key, field) from None
        if size is not None and arr.shape != (size,):
            raise self.error(f"expected {size} numbers, got {list(np.shape(arr))}", node, key, field)
        if np.any(np.isnan(arr)):
            raise self.error("NaN is not allowed", node, key, field)
        return arr

    def number(self, node, key, field, default=None, positive=False):
        if not isinstance(node, dict) or key not in node:
            if default is not None:
                return float(default)
            return self._missing(node, field)
        value = node[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error("expected a number", node, key, field)
        value = float(value)
        if math.isnan(value) or (positive and not value > 0):
            raise self.error("expected a positive number" if positive else "NaN is not allowed",
                             node, key, field)
        return value

    def string(self, node, key, field, default=None):
        if not isinstance(node, dict) or key not in node:
            if default is not None:
                return default
            return self._missing(node, field)
        value = node[key]
        if not isinstance(value, str):
            raise self.error("expected a string", node, key, field)
        return value

    def mapping(self, node, key, field, default=None):
        if not isinstance(node, dict) or key not in node:
            if default is not None:
                return default
            return self._missing(node, field)
        value = node[key]
        if not isinstance(value, dict):
            raise self.error("expected a mapping", node, key, field)
        return value

    def sequence(self, node, key, field, default=None):
        if not isinstance(node, dict) or key not in node:
            if default is not None:
                return default
            return self._missing(node, field)
        value = node[key]
        if not isinstance(value, list):
            raise self.error("expected a list", node, key, field)
        return value


class _Dumper(yaml.SafeDumper):
    pass


def _represent_float(dumper, value):
    if math.isinf(value):
        text = ".inf" if value > 0 else "-.inf"
    elif math.isnan(value):
        text = ".nan"
    else:
        # YAML 1.1 floats need a dot, including in exponent form.
        text = repr(value)
        if "." not in text:
            mant, e, exp = text.partition("e")
            text = f"{mant}.0{e}{exp}"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


def _represent_list(dumper, value):
    flow = all(isinstance(v, (int, float, str)) for v in value)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", value, flow_style=flow)


_Dumper.add_representer(float, _represent_float)
_Dumper.add_representer(list, _represent_list)


def dump_text(data: dict, header: str) -> str:
    body = yaml.dump(data, Dumper=_Dumper, sort_keys=False, default_flow_style=False, width=100)
    return f"{header}\n{body}"
