"""Bounded-size decision rules and their combinatorics.

A rule looks at the truncated sizes of the components of ``arity`` uniformly
chosen vertices and picks two of them to join.  Sizes above ``cutoff`` are
reported as the class ``OMEGA``.  Rules whose decisions need exact sizes
(product and sum rules) are flagged ``unbounded`` and can only be simulated.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class _Omega:
    """Class of all sizes above the cutoff."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "w"

    def __reduce__(self):
        return (_Omega, ())


OMEGA = _Omega()

KIND_TABLE = 0
KIND_PRODUCT = 1
KIND_SUM = 2


class RuleError(ValueError):
    pass


class InconclusivePeriod(RuntimeError):
    pass


def truncate_profile(sizes: Sequence[int], cutoff: int) -> tuple:
    """Map exact component sizes to their truncated classes."""
    out = []
    for s in sizes:
        s = int(s)
        if s < 1:
            raise RuleError(f"component sizes are positive, got {s}")
        out.append(s if s <= cutoff else OMEGA)
    return tuple(out)


def class_index(c, cutoff: int) -> int:
    """Index of a truncated class: sizes 1..K -> 0..K-1, OMEGA -> K."""
    if c is OMEGA or c == "w":
        return cutoff
    c = int(c)
    if not 1 <= c <= cutoff:
        raise RuleError(f"class {c} outside 1..{cutoff}")
    return c - 1


def index_class(i: int, cutoff: int):
    return OMEGA if i == cutoff else i + 1


@dataclass(frozen=True)
class RuleSpec:
    """Decision table over truncated profiles.

    ``table`` is a flat int array indexed by ``sum_j idx_j * (K+1)**j`` and
    holding an index into ``pairs`` (0-based pairs ``j1 < j2``).
    """

    name: str
    arity: int
    cutoff: int
    table: np.ndarray | None = None
    unbounded: bool = False
    kind: int = KIND_TABLE
    pairs: tuple = field(default=())

    def __post_init__(self):
        if self.arity < 2:
            raise RuleError("a rule needs at least two vertices")
        if self.cutoff < 0:
            raise RuleError("cutoff must be non-negative")
        if not self.pairs:
            object.__setattr__(
                self, "pairs", tuple(itertools.combinations(range(self.arity), 2))
            )
        if self.kind == KIND_TABLE:
            if self.table is None:
                raise RuleError("table rule without a table")
            tab = np.asarray(self.table, dtype=np.int16).ravel()
            if tab.size != (self.cutoff + 1) ** self.arity:
                raise RuleError("decision table has the wrong size")
            if tab.min() < 0 or tab.max() >= len(self.pairs):
                raise RuleError("decision table is not total")
            tab.setflags(write=False)
            object.__setattr__(self, "table", tab)

    @property
    def n_classes(self) -> int:
        return self.cutoff + 1

    def profile_index(self, profile: Sequence) -> int:
        b = self.cutoff + 1
        idx = 0
        for j, c in enumerate(profile):
            idx += class_index(c, self.cutoff) * b**j
        return idx

    def pair_array(self) -> np.ndarray:
        return np.array(self.pairs, dtype=np.int64)

    def profiles(self):
        """Iterate ``(index tuple, pair)`` over all truncated profiles."""
        b = self.cutoff + 1
        for flat in range((self.cutoff + 1) ** self.arity):
            idx = tuple((flat // b**j) % b for j in range(self.arity))
            yield idx, self.pairs[int(self.table[flat])]

    def __hash__(self):
        tb = None if self.table is None else self.table.tobytes()
        return hash((self.name, self.arity, self.cutoff, self.kind, tb))

    def __eq__(self, other):
        if not isinstance(other, RuleSpec):
            return NotImplemented
        return hash(self) == hash(other)

    @classmethod
    def from_function(
        cls, name: str, arity: int, cutoff: int, fn: Callable[[tuple], Sequence[int]]
    ) -> "RuleSpec":
        """Compile a predicate on truncated profiles (1-based picks) to a table."""
        pairs = tuple(itertools.combinations(range(arity), 2))
        lookup = {p: i for i, p in enumerate(pairs)}
        b = cutoff + 1
        table = np.empty(b**arity, dtype=np.int16)
        for flat in range(b**arity):
            prof = tuple(index_class((flat // b**j) % b, cutoff) for j in range(arity))
            pick = tuple(sorted(int(x) - 1 for x in fn(prof)))
            if pick not in lookup:
                raise RuleError(f"rule {name} picked invalid pair {pick} for {prof}")
            table[flat] = lookup[pick]
        return cls(name=name, arity=arity, cutoff=cutoff, table=table, pairs=pairs)


def evaluate_rule(rule: RuleSpec, profile: Sequence) -> tuple[int, int]:
    """Return the chosen pair (1-based, increasing) for a profile.

    Table rules take a truncated profile; unbounded rules take exact sizes.
    """
    if len(profile) != rule.arity:
        raise RuleError(f"profile length {len(profile)} != arity {rule.arity}")
    if rule.kind == KIND_TABLE:
        j1, j2 = rule.pairs[int(rule.table[rule.profile_index(profile)])]
        return j1 + 1, j2 + 1
    if any(c is OMEGA for c in profile):
        raise RuleError(f"rule {rule.name} needs exact sizes")
    a, b, c, d = (int(x) for x in profile)
    if rule.kind == KIND_PRODUCT:
        return (1, 2) if a * b <= c * d else (3, 4)
    return (1, 2) if a + b <= c + d else (3, 4)


# ---------------------------------------------------------------- builtins

def _er4(prof):
    return (1, 2)


def _bf(prof):
    return (1, 2) if prof[0] == 1 and prof[1] == 1 else (3, 4)


def _even(prof):
    # Join two vertices of equal class; among four entries from {1, w} one
    # such pair always exists.
    for j1, j2 in itertools.combinations(range(4), 2):
        if prof[j1] == prof[j2]:
            return (j1 + 1, j2 + 1)
    raise AssertionError("unreachable")


def _no3(prof):
    # Equal classes are joined; with three distinct classes {1, 2, w} the two
    # larger ones are joined.  A 1 is therefore never joined to a 2.
    for j1, j2 in itertools.combinations(range(3), 2):
        if prof[j1] == prof[j2]:
            return (j1 + 1, j2 + 1)
    js = [j for j in range(3) if prof[j] != 1]
    return (js[0] + 1, js[1] + 1)


def _unbounded(name, kind):
    return RuleSpec(name=name, arity=4, cutoff=0, unbounded=True, kind=kind)


def builtin_rule(name: str) -> RuleSpec:
    name = name.lower()
    if name in ("er", "er4"):
        return RuleSpec.from_function("er4", 4, 1, _er4)
    if name == "bf":
        return RuleSpec.from_function("bf", 4, 1, _bf)
    if name == "even":
        return RuleSpec.from_function("even", 4, 1, _even)
    if name == "no3":
        return RuleSpec.from_function("no3", 3, 2, _no3)
    if name == "product":
        return _unbounded("product", KIND_PRODUCT)
    if name == "sum":
        return _unbounded("sum", KIND_SUM)
    raise RuleError(f"unknown rule {name!r}")


BUILTIN_NAMES = ("er4", "bf", "even", "no3", "product", "sum")


def _parse_class(v, cutoff):
    if isinstance(v, str):
        if v.lower() in ("w", "omega", "ω"):
            return OMEGA
        v = int(v)
    v = int(v)
    if not 1 <= v <= cutoff:
        raise RuleError(f"profile entry {v} outside 1..{cutoff}")
    return v


def load_rule_file(path: str | Path) -> RuleSpec:
    """Load a JSON decision table.

    Format: ``{"name", "arity", "cutoff", "entries": [{"profile": [...],
    "pick": [j1, j2]}], "default": [j1, j2]}``; ``"w"`` marks the large
    class and picks are 1-based.
    """
    data = json.loads(Path(path).read_text())
    return rule_from_dict(data)


def rule_from_dict(data: dict) -> RuleSpec:
    try:
        arity = int(data["arity"])
        cutoff = int(data["cutoff"])
    except KeyError as exc:
        raise RuleError(f"rule file lacks {exc}") from None
    name = str(data.get("name", "custom"))
    default = data.get("default")
    table: dict = {}
    for e in data.get("entries", []):
        if e.get("profile") == "default":
            default = e["pick"]
            continue
        prof = tuple(_parse_class(v, cutoff) for v in e["profile"])
        if len(prof) != arity:
            raise RuleError(f"profile {e['profile']} has wrong length")
        pick = tuple(int(x) for x in e["pick"])
        if prof in table and table[prof] != pick:
            raise RuleError(f"conflicting entries for {e['profile']}")
        table[prof] = pick

    def fn(prof):
        if prof in table:
            return table[prof]
        if default is None:
            raise RuleError(f"rule {name} has no entry for profile {prof}")
        return tuple(default)

    return RuleSpec.from_function(name, arity, cutoff, fn)


def resolve_rule(spec: str | RuleSpec) -> RuleSpec:
    if isinstance(spec, RuleSpec):
        return spec
    p = Path(spec)
    if p.suffix == ".json" or p.exists():
        return load_rule_file(p)
    return builtin_rule(spec)


def rule_to_dict(rule: RuleSpec) -> dict:
    if rule.unbounded:
        raise RuleError("unbounded rules have no decision table")
    entries = []
    for idx, (j1, j2) in rule.profiles():
        prof = [("w" if i == rule.cutoff else i + 1) for i in idx]
        entries.append({"profile": prof, "pick": [j1 + 1, j2 + 1]})
    return {"name": rule.name, "arity": rule.arity, "cutoff": rule.cutoff, "entries": entries}


# ------------------------------------------------------- size combinatorics

def reachable_sizes(rule: RuleSpec, bound: int) -> np.ndarray:
    """Sizes up to ``bound`` that the rule can ever create, as a boolean mask.

    Starts from {1} and closes under ``a + b`` whenever some profile realised
    by available sizes picks classes containing ``a`` and ``b``.
    """
    if rule.unbounded:
        raise RuleError("theory requires bounded-size rule")
    K = rule.cutoff
    reach = np.zeros(bound + 1, dtype=bool)
    reach[1] = True
    # class pairs the rule can ever pick, keyed by required class set
    picks = []
    for idx, (j1, j2) in rule.profiles():
        picks.append((frozenset(idx), idx[j1], idx[j2]))
    while True:
        avail = {i for i in range(K) if reach[i + 1]}
        if reach[K + 1:].any():
            avail.add(K)
        masks = {}
        for c in range(K + 1):
            m = np.zeros(bound + 1, dtype=bool)
            if c < K:
                m[c + 1] = reach[c + 1]
            else:
                m[K + 1:] = reach[K + 1:]
            masks[c] = m
        new = reach.copy()
        seen = set()
        for need, a, b in picks:
            if not need <= avail or (a, b) in seen:
                continue
            seen.add((a, b))
            xa = np.flatnonzero(masks[a])
            xb = np.flatnonzero(masks[b])
            s = np.add.outer(xa, xb).ravel()
            new[s[s <= bound]] = True
        if (new == reach).all():
            return reach
        reach = new


@dataclass(frozen=True)
class PeriodInfo:
    period: int
    k_R: int
    bound: int


def detect_period(rule: RuleSpec, bound: int | None = None) -> PeriodInfo:
    """Period (a power of two) of the reachable sizes and the first size k_R
    after which every multiple of the period is reachable."""
    K = rule.cutoff
    lo = max(4 * (K + 1), 64)
    if bound is None:
        bound = 4 * lo
    if bound < lo:
        raise RuleError(f"bound must be at least {lo}")
    reach = reachable_sizes(rule, bound)
    a = 0
    while 2**a <= K:
        a += 1
    sizes = np.flatnonzero(reach[bound // 4 + 1: bound // 2 + 1]) + bound // 4 + 1
    if sizes.size == 0:
        raise InconclusivePeriod("no reachable sizes in the probe range")
    p = 1
    for b in range(a, -1, -1):
        if np.all(sizes % 2**b == 0):
            p = 2**b
            break
    big = np.flatnonzero(reach[K + 1:]) + K + 1
    if np.any(big % p):
        raise InconclusivePeriod("reachable sizes above the cutoff are not periodic")
    half = bound // 2
    mult = np.arange(p, half + 1, p)
    missing = mult[~reach[mult]]
    k_R = int(missing.max()) + p if missing.size else p
    if k_R > half:
        raise InconclusivePeriod(f"k_R={k_R} not certified below bound/2; raise the bound")
    return PeriodInfo(period=p, k_R=k_R, bound=bound)
