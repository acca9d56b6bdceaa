"""Cargo-flavoured semantic versions and version requirements.

Two independent evaluation routes exist on purpose: :func:`matches` checks
each comparator with prefix/tuple logic, while :func:`normalize_requirement`
turns a requirement into an interval set over the prerelease-aware version
order.  The test-suite asserts both routes agree.

Partial versions (``1``, ``1.2``) denote the whole block of versions sharing
that prefix, prereleases included (which the prerelease rule then filters).
Bounds that sit at the smallest prerelease ``X-0`` are rendered as plain
``X`` for display.
"""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

__all__ = [
    "SemverError",
    "Version",
    "Op",
    "Comparator",
    "Requirement",
    "Bound",
    "Interval",
    "RangeSet",
    "parse_version",
    "parse_requirement",
    "normalize_requirement",
    "matches",
    "compatible",
    "compat_key",
    "max_satisfying",
]

Identifier = Union[int, str]

_IDENT_RE = re.compile(r"[0-9A-Za-z-]+\Z")


class SemverError(ValueError):
    """Malformed version or requirement text.

    ``span`` is the ``(start, end)`` slice of ``text`` that could not be
    parsed.
    """

    def __init__(self, message: str, text: str, span: Tuple[int, int]):
        self.text = text
        self.span = span
        start, end = span
        super().__init__(f"{message}: {text[start:end]!r} at {start}..{end} in {text!r}")


def _ident_key(ident: Identifier):
    # numeric identifiers sort below alphanumeric ones
    return (0, ident, "") if isinstance(ident, int) else (1, 0, ident)


@dataclass(frozen=True)
class Version:
    major: int
    minor: int
    patch: int
    pre: Tuple[Identifier, ...] = ()
    build: Optional[str] = field(default=None, compare=False)

    @classmethod
    def parse(cls, text: str) -> "Version":
        return parse_version(text)

    @property
    def triple(self) -> Tuple[int, int, int]:
        return (self.major, self.minor, self.patch)

    @property
    def is_prerelease(self) -> bool:
        return bool(self.pre)

    @functools.cached_property
    def _key(self):
        return (
            self.major,
            self.minor,
            self.patch,
            0 if self.pre else 1,
            tuple(_ident_key(i) for i in self.pre),
        )

    def sort_key(self):
        return self._key

    @functools.cached_property
    def _hash(self) -> int:
        return hash((self.major, self.minor, self.patch, self.pre))

    def __hash__(self) -> int:
        # versions are dict keys everywhere in resolution; hash once
        return self._hash

    def __lt__(self, other: "Version") -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._key < other._key

    def __le__(self, other: "Version") -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._key <= other._key

    def __gt__(self, other: "Version") -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._key > other._key

    def __ge__(self, other: "Version") -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._key >= other._key

    def __str__(self) -> str:
        text = f"{self.major}.{self.minor}.{self.patch}"
        if self.pre:
            text += "-" + ".".join(str(i) for i in self.pre)
        if self.build:
            text += "+" + self.build
        return text

    def __repr__(self) -> str:
        return f"Version({str(self)!r})"


def _min_pre(triple: Sequence[int]) -> Version:
    """Smallest version with the given core triple (``X-0``)."""
    return Version(triple[0], triple[1], triple[2], (0,))


def _parse_numeric(text: str, start: int, end: int, what: str) -> int:
    part = text[start:end]
    if not part:
        raise SemverError(f"empty {what}", text, (start, end))
    if not part.isdigit() or not part.isascii():
        raise SemverError(f"non-numeric {what}", text, (start, end))
    if len(part) > 1 and part[0] == "0":
        raise SemverError(f"leading zero in {what}", text, (start, end))
    return int(part)


def _parse_pre(text: str, start: int, end: int) -> Tuple[Identifier, ...]:
    idents: list = []
    pos = start
    for raw in text[start:end].split("."):
        stop = pos + len(raw)
        if not raw:
            raise SemverError("empty prerelease identifier", text, (pos, stop))
        if not _IDENT_RE.match(raw):
            raise SemverError("invalid prerelease identifier", text, (pos, stop))
        if raw.isdigit():
            idents.append(_parse_numeric(text, pos, stop, "prerelease identifier"))
        else:
            idents.append(raw)
        pos = stop + 1
    return tuple(idents)


def _split_core(text: str, offset: int = 0):
    """Split ``text[offset:]`` into core, prerelease and build spans."""
    end = len(text)
    plus = text.find("+", offset)
    core_end = end if plus < 0 else plus
    dash = text.find("-", offset, core_end)
    pre_span = None if dash < 0 else (dash + 1, core_end)
    core_span = (offset, core_end if dash < 0 else dash)
    build_span = None if plus < 0 else (plus + 1, end)
    return core_span, pre_span, build_span


def _parse_build(text: str, start: int, end: int) -> str:
    build = text[start:end]
    pos = start
    for raw in build.split("."):
        if not raw or not _IDENT_RE.match(raw):
            raise SemverError("invalid build identifier", text, (pos, pos + len(raw)))
        pos += len(raw) + 1
    return build


def parse_version(text: str) -> Version:
    """Parse ``MAJOR.MINOR.PATCH[-PRE][+BUILD]``."""
    if not text:
        raise SemverError("empty version", text, (0, 0))
    (cs, ce), pre_span, build_span = _split_core(text)
    parts = text[cs:ce].split(".")
    if len(parts) != 3:
        raise SemverError("expected MAJOR.MINOR.PATCH", text, (cs, ce))
    nums = []
    pos = cs
    for name, raw in zip(("major", "minor", "patch"), parts):
        nums.append(_parse_numeric(text, pos, pos + len(raw), f"{name} component"))
        pos += len(raw) + 1
    pre = _parse_pre(text, *pre_span) if pre_span else ()
    build = _parse_build(text, *build_span) if build_span else None
    return Version(nums[0], nums[1], nums[2], pre, build)


class Op(str, enum.Enum):
    CARET = "^"
    TILDE = "~"
    WILDCARD = "*"
    EXACT = "="
    GREATER = ">"
    GREATER_EQ = ">="
    LESS = "<"
    LESS_EQ = "<="


@dataclass(frozen=True)
class Comparator:
    """One clause of a requirement.

    ``major`` is ``None`` only for the bare ``*`` wildcard; ``minor`` and
    ``patch`` are ``None`` when the clause gives a partial version.
    """

    op: Op
    major: Optional[int]
    minor: Optional[int] = None
    patch: Optional[int] = None
    pre: Tuple[Identifier, ...] = ()

    @property
    def components(self) -> Tuple[int, ...]:
        return tuple(c for c in (self.major, self.minor, self.patch) if c is not None)

    @property
    def is_full(self) -> bool:
        return self.patch is not None

    def base_version(self) -> Version:
        """The comparator's version with missing components zero-filled."""
        comps = self.components + (0,) * (3 - len(self.components))
        return Version(*comps, pre=self.pre)

    def __str__(self) -> str:
        if self.op is Op.WILDCARD:
            if self.major is None:
                return "*"
            return ".".join(str(c) for c in self.components) + ".*"
        text = ".".join(str(c) for c in self.components)
        if self.pre:
            text += "-" + ".".join(str(i) for i in self.pre)
        return self.op.value + text


@dataclass(frozen=True)
class Requirement:
    comparators: Tuple[Comparator, ...]
    source_text: str = ""

    @classmethod
    def parse(cls, text: str) -> "Requirement":
        return parse_requirement(text)

    def matches(self, version: Version) -> bool:
        return matches(self, version)

    @property
    def exact_pin(self) -> Optional[Version]:
        """The single version pinned by a lone full ``=`` comparator, if any."""
        if len(self.comparators) == 1:
            c = self.comparators[0]
            if c.op is Op.EXACT and c.is_full:
                return c.base_version()
        return None

    def __str__(self) -> str:
        return self.source_text or ", ".join(str(c) for c in self.comparators)


_OPERATORS = (">=", "<=", ">", "<", "=", "^", "~")
_WILDCARDS = ("*", "x", "X")


def _parse_comparator(text: str, start: int, end: int) -> Comparator:
    # strip surrounding whitespace inside the clause
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    if start == end:
        raise SemverError("empty comparator", text, (start, end))

    op = None
    for candidate in _OPERATORS:
        if text.startswith(candidate, start):
            op = Op(candidate)
            start += len(candidate)
            break
    while start < end and text[start].isspace():
        start += 1
    if start == end:
        raise SemverError("operator without version", text, (start - 1, end))
    if not (text[start].isdigit() or text[start] in _WILDCARDS):
        raise SemverError("unknown operator", text, (start, start + 1))

    (cs, ce), pre_span, build_span = _split_core(text[:end], start)
    if build_span:
        raise SemverError("build metadata not allowed in requirement", text, (build_span[0] - 1, end))
    parts = text[cs:ce].split(".")
    if len(parts) > 3:
        raise SemverError("more than three version components", text, (cs, ce))

    nums: list = []
    wildcard = False
    pos = cs
    for raw in parts:
        stop = pos + len(raw)
        if raw in _WILDCARDS:
            wildcard = True
        elif wildcard:
            raise SemverError("version component after wildcard", text, (pos, stop))
        else:
            nums.append(_parse_numeric(text, pos, stop, "version component"))
        pos = stop + 1

    if wildcard:
        if op is not None:
            raise SemverError("wildcard cannot follow an operator", text, (cs, ce))
        if pre_span:
            raise SemverError("prerelease on wildcard", text, (pre_span[0] - 1, pre_span[1]))
        op = Op.WILDCARD
    elif op is None:
        op = Op.CARET

    pre = ()
    if pre_span:
        if len(nums) != 3:
            raise SemverError("prerelease requires MAJOR.MINOR.PATCH", text, (cs, pre_span[1]))
        pre = _parse_pre(text, *pre_span)

    padded = nums + [None] * (3 - len(nums))
    return Comparator(op, padded[0], padded[1], padded[2], pre)


def parse_requirement(text: str) -> Requirement:
    """Parse a comma-separated list of comparators; bare versions are caret."""
    if not text or not text.strip():
        raise SemverError("empty requirement", text, (0, len(text)))
    comparators = []
    start = 0
    for clause in text.split(","):
        end = start + len(clause)
        comparators.append(_parse_comparator(text, start, end))
        start = end + 1
    return Requirement(tuple(comparators), text.strip())


# --- route 1: direct comparator evaluation -------------------------------


def _caret_width(components: Sequence[int]) -> int:
    """How many leading components must stay equal under a caret."""
    for i, c in enumerate(components):
        if c != 0:
            return i + 1
    return len(components)


def _comparator_matches(c: Comparator, v: Version) -> bool:
    comps = c.components
    n = len(comps)
    prefix = v.triple[:n]

    if c.op is Op.WILDCARD:
        return prefix == comps
    if not c.is_full:
        if c.op is Op.EXACT:
            return prefix == comps
        if c.op is Op.GREATER:
            return prefix > comps
        if c.op is Op.GREATER_EQ:
            return prefix >= comps
        if c.op is Op.LESS:
            return prefix < comps
        if c.op is Op.LESS_EQ:
            return prefix <= comps
        if c.op is Op.TILDE:
            return prefix == comps
        # caret on a partial version
        w = _caret_width(comps)
        return prefix >= comps and v.triple[:w] == comps[:w]

    base = c.base_version()
    if c.op is Op.EXACT:
        return v == base
    if c.op is Op.GREATER:
        return v > base
    if c.op is Op.GREATER_EQ:
        return v >= base
    if c.op is Op.LESS:
        return v < base
    if c.op is Op.LESS_EQ:
        return v <= base
    if c.op is Op.TILDE:
        return v >= base and v.triple[:2] == comps[:2]
    w = _caret_width(comps)
    return v >= base and v.triple[:w] == comps[:w]


def _prerelease_allowed(req: Requirement, v: Version) -> bool:
    if not v.pre:
        return True
    return any(c.pre and c.components == v.triple for c in req.comparators)


def matches(req: Requirement, v: Version) -> bool:
    """True iff ``v`` satisfies every comparator of ``req``.

    A prerelease only matches when some comparator names a prerelease of the
    very same ``major.minor.patch``.
    """
    if not _prerelease_allowed(req, v):
        return False
    return all(_comparator_matches(c, v) for c in req.comparators)


# --- route 2: interval normalization -------------------------------------


@dataclass(frozen=True)
class Bound:
    version: Version
    inclusive: bool


def _lower_le(a: Optional[Bound], b: Optional[Bound]) -> bool:
    """Is lower bound ``a`` at most as restrictive as ``b``?"""
    if a is None:
        return True
    if b is None:
        return False
    if a.version != b.version:
        return a.version < b.version
    return a.inclusive or not b.inclusive


def _upper_ge(a: Optional[Bound], b: Optional[Bound]) -> bool:
    if a is None:
        return True
    if b is None:
        return False
    if a.version != b.version:
        return a.version > b.version
    return a.inclusive or not b.inclusive


def _bound_text(v: Version) -> str:
    # X-0 is the infimum of X's prereleases; print it as X
    if v.pre == (0,):
        return f"{v.major}.{v.minor}.{v.patch}"
    return str(v)


@dataclass(frozen=True)
class Interval:
    lower: Optional[Bound] = None
    upper: Optional[Bound] = None

    def __post_init__(self):
        lo, hi = self.lower, self.upper
        if lo is not None and hi is not None:
            if lo.version > hi.version or (
                lo.version == hi.version and not (lo.inclusive and hi.inclusive)
            ):
                raise ValueError(f"empty interval: {lo} .. {hi}")

    def __contains__(self, v: Version) -> bool:
        lo, hi = self.lower, self.upper
        if lo is not None and (v < lo.version or (v == lo.version and not lo.inclusive)):
            return False
        if hi is not None and (v > hi.version or (v == hi.version and not hi.inclusive)):
            return False
        return True

    def intersect(self, other: "Interval") -> Optional["Interval"]:
        lower = other.lower if _lower_le(self.lower, other.lower) else self.lower
        upper = other.upper if _upper_ge(self.upper, other.upper) else self.upper
        try:
            return Interval(lower, upper)
        except ValueError:
            return None

    def __str__(self) -> str:
        lo, hi = self.lower, self.upper
        if lo is None and hi is None:
            return "*"
        if lo is not None and hi is not None and lo.version == hi.version:
            return "=" + _bound_text(lo.version)
        parts = []
        if lo is not None:
            parts.append((">=" if lo.inclusive else ">") + _bound_text(lo.version))
        if hi is not None:
            parts.append(("<=" if hi.inclusive else "<") + _bound_text(hi.version))
        return ", ".join(parts)


def _bump(components: Sequence[int]) -> Version:
    """Smallest version above every version with the given prefix."""
    comps = list(components)
    comps[-1] += 1
    comps += [0] * (3 - len(comps))
    return _min_pre(comps)


def _block_start(components: Sequence[int]) -> Version:
    comps = list(components) + [0] * (3 - len(components))
    return _min_pre(comps)


def _comparator_interval(c: Comparator) -> Interval:
    if c.op is Op.WILDCARD and c.major is None:
        return Interval()
    comps = c.components
    if c.op is Op.WILDCARD or (not c.is_full and c.op in (Op.EXACT, Op.TILDE)):
        return Interval(Bound(_block_start(comps), True), Bound(_bump(comps), False))

    if c.is_full:
        base = c.base_version()
        lo_in, lo_out = Bound(base, True), Bound(base, False)
        hi_in, hi_out = Bound(base, True), Bound(base, False)
    else:
        # a partial version stands for its whole block
        lo_in = Bound(_block_start(comps), True)
        lo_out = Bound(_bump(comps), True)
        hi_in = Bound(_bump(comps), False)
        hi_out = Bound(_block_start(comps), False)

    if c.op is Op.EXACT:
        return Interval(lo_in, hi_in)
    if c.op is Op.GREATER:
        return Interval(lo_out, None)
    if c.op is Op.GREATER_EQ:
        return Interval(lo_in, None)
    if c.op is Op.LESS:
        return Interval(None, hi_out)
    if c.op is Op.LESS_EQ:
        return Interval(None, hi_in)
    if c.op is Op.TILDE:
        return Interval(lo_in, Bound(_bump(comps[:2]), False))
    # caret
    w = _caret_width(comps)
    return Interval(lo_in, Bound(_bump(comps[:w]), False))


@dataclass(frozen=True)
class RangeSet:
    """Canonical form of a requirement: at most one interval plus the set of
    core triples on which prereleases are admitted."""

    intervals: Tuple[Interval, ...]
    prerelease_triples: frozenset = frozenset()
    unsatisfiable: bool = False

    def __contains__(self, v: Version) -> bool:
        if v.pre and v.triple not in self.prerelease_triples:
            return False
        return any(v in iv for iv in self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __getitem__(self, i: int) -> Interval:
        return self.intervals[i]

    def __str__(self) -> str:
        if not self.intervals:
            return "<empty>"
        return " | ".join(str(iv) for iv in self.intervals)


def _has_admissible(iv: Interval, pre_triples: Iterable[Tuple[int, int, int]]) -> bool:
    lo = iv.lower
    if lo is None:
        release = Version(0, 0, 0)
    elif lo.version.pre:
        release = Version(*lo.version.triple)
    elif lo.inclusive:
        release = lo.version
    else:
        release = Version(lo.version.major, lo.version.minor, lo.version.patch + 1)
    if release in iv:
        return True
    for triple in pre_triples:
        if iv.intersect(Interval(Bound(_min_pre(triple), True), Bound(Version(*triple), False))):
            return True
    return False


def normalize_requirement(req: Requirement) -> RangeSet:
    """Intersect the comparator intervals of ``req``.

    Contradictory requirements yield an empty set with ``unsatisfiable``
    set rather than raising.
    """
    pre_triples = frozenset(c.components for c in req.comparators if c.pre)
    current: Optional[Interval] = Interval()
    for c in req.comparators:
        current = current.intersect(_comparator_interval(c))
        if current is None:
            return RangeSet((), pre_triples, unsatisfiable=True)
    if not _has_admissible(current, pre_triples):
        return RangeSet((), pre_triples, unsatisfiable=True)
    return RangeSet((current,), pre_triples)


# --- compatibility and selection -----------------------------------------


def compat_key(v: Version) -> Tuple[int, ...]:
    """Core components up to and including the leftmost non-zero one."""
    return v.triple[: _caret_width(v.triple)]


def compatible(a: Version, b: Version) -> bool:
    """Cargo's compatibility convention, judged from the smaller version."""
    smaller = min(a, b)
    w = _caret_width(smaller.triple)
    return a.triple[:w] == b.triple[:w]


def max_satisfying(
    candidates: Iterable[Tuple[Version, bool]],
    req: Requirement,
    allow_yanked: bool = False,
) -> Optional[Version]:
    """Greatest candidate matching ``req``; yanked releases are skipped unless
    allowed or pinned exactly by ``req``."""
    pin = req.exact_pin
    best = None
    for version, yanked in candidates:
        if yanked and not allow_yanked and version != pin:
            continue
        if (best is None or version > best) and matches(req, version):
            best = version
    return best
