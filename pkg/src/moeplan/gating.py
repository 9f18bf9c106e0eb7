"""Expert-selection traces that drive the simulator.

Text format, one record per line after a header::

    # moeplan-trace tokens=2 layers=32 experts_per_layer=8 top_k=2 fingerprint=...
    0,0,3,6
    0,1,0,5
    ...

Fields are ``token,layer,slot_1,...,slot_k`` with slots ascending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .profiles import ModelProfile
from .rng import below_array, u64_stream

HEADER_TAG = "# moeplan-trace"


class TraceError(ValueError):
    """Malformed trace document or an invariant violation."""


@dataclass(frozen=True, eq=False)
class GatingTrace:
    """``slots[t, l]`` holds the sorted top-k slots chosen at token t, layer l."""

    slots: np.ndarray
    experts_per_layer: int
    profile_fingerprint: str = ""

    @property
    def tokens(self) -> int:
        return self.slots.shape[0]

    @property
    def num_layers(self) -> int:
        return self.slots.shape[1]

    @property
    def top_k(self) -> int:
        return self.slots.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GatingTrace):
            return NotImplemented
        return (self.experts_per_layer == other.experts_per_layer
                and self.profile_fingerprint == other.profile_fingerprint
                and self.slots.shape == other.slots.shape
                and bool(np.array_equal(self.slots, other.slots)))

    def matches(self, profile: ModelProfile) -> bool:
        return (self.num_layers == profile.num_layers
                and self.experts_per_layer == profile.experts_per_layer
                and self.top_k == profile.top_k)

    def expert_index(self) -> np.ndarray:
        """Flat expert ids ``layer * E + slot``, shape (tokens, layers, k)."""
        layer = np.arange(self.num_layers, dtype=np.int64)[None, :, None]
        return layer * self.experts_per_layer + self.slots.astype(np.int64)


def _check_slots(slots: np.ndarray, experts_per_layer: int) -> None:
    if slots.ndim != 3 or 0 in slots.shape:
        raise TraceError("trace must have at least one token, layer and slot")
    if slots.min() < 0 or slots.max() >= experts_per_layer:
        raise TraceError(f"slot outside [0, {experts_per_layer})")
    if slots.shape[2] > 1 and np.any(np.diff(slots, axis=2) <= 0):
        raise TraceError("records must list distinct slots in ascending order")


def generate_trace(profile: ModelProfile, tokens: int, seed: int) -> GatingTrace:
    """Uniform top-k selections without replacement per (token, layer).

    Draw ``(t * L + l) * k + j`` of the seed's SplitMix64 stream performs step
    j of a partial Fisher-Yates over that record's slots.
    """
    if tokens < 1:
        raise ValueError("tokens must be >= 1")
    L, E, k = profile.num_layers, profile.experts_per_layer, profile.top_k
    records = tokens * L
    draws = u64_stream(seed, 0, records * k).reshape(records, k)
    perm = np.tile(np.arange(E, dtype=np.int64), (records, 1))
    rows = np.arange(records)
    for j in range(k):
        r = j + below_array(draws[:, j], E - j).astype(np.int64)
        picked = perm[rows, r].copy()
        perm[rows, r] = perm[:, j]
        perm[:, j] = picked
    slots = np.sort(perm[:, :k], axis=1).reshape(tokens, L, k).astype(np.int16)
    return GatingTrace(slots=slots, experts_per_layer=E,
                       profile_fingerprint=profile.fingerprint())


def write_trace(trace: GatingTrace) -> str:
    header = (f"{HEADER_TAG} tokens={trace.tokens} layers={trace.num_layers} "
              f"experts_per_layer={trace.experts_per_layer} top_k={trace.top_k} "
              f"fingerprint={trace.profile_fingerprint or '-'}")
    flat = trace.slots.reshape(-1, trace.top_k)
    t_idx, l_idx = np.divmod(np.arange(flat.shape[0]), trace.num_layers)
    table = np.column_stack([t_idx, l_idx, flat])
    lines = [",".join(map(str, row)) for row in table.tolist()]
    return header + "\n" + "\n".join(lines) + "\n"


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith(HEADER_TAG):
        raise TraceError(f"line 1: missing '{HEADER_TAG}' header")
    fields = {}
    for item in line[len(HEADER_TAG):].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise TraceError(f"line 1: bad header field {item!r}")
        fields[key] = value
    for key in ("tokens", "layers", "experts_per_layer", "top_k"):
        if key not in fields or not fields[key].isdigit() or int(fields[key]) < 1:
            raise TraceError(f"line 1: header needs a positive integer '{key}'")
    return fields


def read_trace(document: str) -> GatingTrace:
    lines = document.splitlines()
    if not lines:
        raise TraceError("empty trace document")
    header = _parse_header(lines[0])
    tokens, L = int(header["tokens"]), int(header["layers"])
    E, k = int(header["experts_per_layer"]), int(header["top_k"])
    if k > E:
        raise TraceError("line 1: top_k exceeds experts_per_layer")
    slots = np.full((tokens, L, k), -1, dtype=np.int16)
    seen = np.zeros((tokens, L), dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            values = [int(v) for v in line.split(",")]
        except ValueError:
            raise TraceError(f"line {lineno}: non-integer field") from None
        if len(values) != 2 + k:
            raise TraceError(f"line {lineno}: expected {2 + k} fields, got {len(values)}")
        t, l, chosen = values[0], values[1], values[2:]
        if not (0 <= t < tokens and 0 <= l < L):
            raise TraceError(f"line {lineno}: token/layer ({t}, {l}) out of range")
        if seen[t, l]:
            raise TraceError(f"line {lineno}: duplicate record for ({t}, {l})")
        if len(set(chosen)) != k:
            raise TraceError(f"line {lineno}: duplicate slot in record")
        bad = [s for s in chosen if not 0 <= s < E]
        if bad:
            raise TraceError(f"line {lineno}: slot {bad[0]} outside [0, {E})")
        seen[t, l] = True
        slots[t, l] = sorted(chosen)
    if not seen.all():
        t, l = np.argwhere(~seen)[0]
        raise TraceError(f"missing record for token {t}, layer {l}")
    fingerprint = header.get("fingerprint", "-")
    return GatingTrace(slots=slots, experts_per_layer=E,
                       profile_fingerprint="" if fingerprint == "-" else fingerprint)
