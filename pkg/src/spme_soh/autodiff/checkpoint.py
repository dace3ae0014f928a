"""Plain-text network checkpoints.

Layout: component tag, architecture descriptor, one line of comma-separated
floats per layer (weights then bias, empty for parameterless layers), then
``norm.<name> = lo,hi`` lines.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .nn import Network

COMPONENT_TAGS = ("surrogate_css_neg", "surrogate_css_pos", "surrogate_ce0", "surrogate_ceL",
                  "identifier", "soh_head")


class CheckpointError(ValueError):
    pass


def dumps(net: Network, tag, norm_items=None):
    if tag not in COMPONENT_TAGS:
        raise CheckpointError(f"unknown component tag {tag!r}")
    lines = [tag, net.descriptor()]
    for layer in net.layers:
        vals = np.concatenate([p.data.ravel() for p in layer.params]) if layer.params else []
        lines.append(",".join(repr(float(v)) for v in vals))
    for key, value in (norm_items or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save(path, net: Network, tag, norm_items=None):
    path = Path(path)
    path.write_text(dumps(net, tag, norm_items), encoding="utf-8")
    return file_hash(path)


def loads(text, source="<checkpoint>"):
    """(tag, network, norm_items) from checkpoint text."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise CheckpointError(f"{source}: truncated checkpoint")
    tag = lines[0].strip()
    if tag not in COMPONENT_TAGS:
        raise CheckpointError(f"{source}:1: unknown component tag {tag!r}")
    try:
        net = Network.from_descriptor(lines[1].strip())
    except ValueError as exc:
        raise CheckpointError(f"{source}:2: {exc}") from exc
    n_layers = len(net.layers)
    if len(lines) < 2 + n_layers:
        raise CheckpointError(f"{source}: expected {n_layers} layer lines")
    for i, layer in enumerate(net.layers):
        lineno = 3 + i
        raw = lines[2 + i].strip()
        try:
            vals = np.array([float(v) for v in raw.split(",")]) if raw else np.zeros(0)
        except ValueError as exc:
            raise CheckpointError(f"{source}:{lineno}: non-numeric weight") from exc
        need = sum(p.data.size for p in layer.params)
        if vals.size != need:
            raise CheckpointError(f"{source}:{lineno}: expected {need} values, got {vals.size}")
        off = 0
        for p in layer.params:
            p.data = vals[off:off + p.data.size].reshape(p.data.shape).copy()
            off += p.data.size
    norm = {}
    for j, line in enumerate(lines[2 + n_layers:], 3 + n_layers):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{source}:{j}: expected 'key = value'")
        norm[key.strip()] = value.strip()
    return tag, net, norm


def load(path, expect_tag=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    tag, net, norm = loads(path.read_text(encoding="utf-8"), str(path))
    if expect_tag is not None and tag != expect_tag:
        raise CheckpointError(f"{path}: tag {tag!r}, expected {expect_tag!r}")
    return tag, net, norm


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
