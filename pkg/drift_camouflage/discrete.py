"""Discrete-time sign scrambling with exact rational arithmetic.

Given independent signs eps_n (n <= 0) with P[eps_n = 1] = p_n, each h_n is a
fair bit extracted from the eps_i with i in a private index set I_n lying
strictly below n, so h_n is predictable. The products h_n * eps_n are then
i.i.d. fair signs. Infinite sets and bit streams are truncated at explicit
budgets; every exact statement is relative to the decided mass.
"""
import itertools
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .models import SeededRng

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)
ENUMERATION_BIT_LIMIT = 24
LAW_KINDS = ("constant", "periodic", "table", "geometric")


class EnumerationBudgetError(ValueError):
    def __init__(self, bit_count: int, limit: int = ENUMERATION_BIT_LIMIT):
        super().__init__(f"Exact enumeration needs {bit_count} bits, more than the limit of {limit}")
        self.bit_count = bit_count
        self.limit = limit


def parse_fraction(value) -> Fraction:
    """'7/10', '0.7', 0.7 and Fraction(7, 10) all give 7/10."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError(f"Not a probability: {value!r}")
    if isinstance(value, (int, float, str)):
        try:
            return Fraction(str(value).strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"Not a rational number: {value!r}") from exc
    raise ValueError(f"Not a rational number: {value!r}")


def _check_probability(p: Fraction, where: str) -> Fraction:
    if not 0 < p < 1:
        raise ValueError(f"Probability {where} must lie strictly inside (0, 1), got {p}")
    return p


@dataclass(frozen=True)
class BiasedBitLaw:
    """P[eps_n = 1] for n <= 0, addressed by the offset -n.

    constant: p for every n; periodic: values[offset % len]; table: explicit
    offsets with an optional default; geometric: scale * ratio**offset.
    """
    kind: str
    values: Tuple[Fraction, ...] = ()
    table: Tuple[Tuple[int, Fraction], ...] = ()
    default: Optional[Fraction] = None
    scale: Optional[Fraction] = None
    ratio: Optional[Fraction] = None

    def __post_init__(self) -> None:
        if self.kind not in LAW_KINDS:
            raise ValueError(f"Unknown law kind '{self.kind}', expected one of {', '.join(LAW_KINDS)}")
        if self.kind in ("constant", "periodic") and not self.values:
            raise ValueError(f"Law kind '{self.kind}' needs at least one probability")
        if self.kind == "table" and not self.table:
            raise ValueError("Law kind 'table' needs at least one entry")
        if self.kind == "geometric":
            if self.scale is None or self.ratio is None:
                raise ValueError("Law kind 'geometric' needs 'scale' and 'ratio'")
            _check_probability(self.scale, "'scale'")
            if not 0 < self.ratio <= 1:
                raise ValueError(f"Geometric 'ratio' must lie in (0, 1], got {self.ratio}")
        for i, p in enumerate(self.values):
            _check_probability(p, f"at position {i}")
        for offset, p in self.table:
            _check_probability(p, f"at offset {offset}")
        if self.default is not None:
            _check_probability(self.default, "'default'")

    @classmethod
    def constant(cls, p) -> "BiasedBitLaw":
        return cls("constant", values=(parse_fraction(p),))

    @classmethod
    def periodic(cls, ps: Sequence) -> "BiasedBitLaw":
        return cls("periodic", values=tuple(parse_fraction(p) for p in ps))

    @classmethod
    def from_table(cls, entries: Mapping, default=None) -> "BiasedBitLaw":
        table = tuple(sorted((int(k), parse_fraction(v)) for k, v in entries.items()))
        for offset, _ in table:
            if offset < 0:
                raise ValueError(f"Table offsets must be non-negative, got {offset}")
        return cls("table", table=table, default=None if default is None else parse_fraction(default))

    @classmethod
    def geometric(cls, scale, ratio) -> "BiasedBitLaw":
        return cls("geometric", scale=parse_fraction(scale), ratio=parse_fraction(ratio))

    @classmethod
    def from_config(cls, config: Mapping) -> "BiasedBitLaw":
        kind = config.get("kind")
        if kind == "constant":
            return cls.constant(config["p"])
        if kind == "periodic":
            return cls.periodic(config["p"])
        if kind == "table":
            return cls.from_table(config["p"], config.get("default"))
        if kind == "geometric":
            return cls.geometric(config["scale"], config["ratio"])
        raise ValueError(f"Unknown law kind '{kind}', expected one of {', '.join(LAW_KINDS)}")

    def prob(self, n: int) -> Fraction:
        if n > 0:
            raise ValueError(f"Indices are non-positive, got {n}")
        offset = -n
        if self.kind == "constant":
            return self.values[0]
        if self.kind == "periodic":
            return self.values[offset % len(self.values)]
        if self.kind == "geometric":
            return self.scale * self.ratio ** offset
        for k, p in self.table:
            if k == offset:
                return p
        if self.default is None:
            raise ValueError(f"Law table has no entry for offset {offset} and no default")
        return self.default

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": self.kind, "p": str(self.values[0])}
        if self.kind == "periodic":
            return {"kind": self.kind, "p": [str(p) for p in self.values]}
        if self.kind == "geometric":
            return {"kind": self.kind, "scale": str(self.scale), "ratio": str(self.ratio)}
        out = {"kind": self.kind, "p": {str(k): str(p) for k, p in self.table}}
        if self.default is not None:
            out["default"] = str(self.default)
        return out


@dataclass
class DiffuseReport:
    horizon: int
    terms: List[Fraction]
    partial_sum: Fraction
    tail_sum: Fraction
    # mass of the most likely sign pattern over the window
    heaviest_atom: Fraction
    tail_threshold: float
    flagged_non_diffuse: bool

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "partial_sum": str(self.partial_sum),
            "partial_sum_float": float(self.partial_sum),
            "tail_sum": float(self.tail_sum),
            "heaviest_atom": float(self.heaviest_atom),
            "tail_threshold": self.tail_threshold,
            "flagged_non_diffuse": self.flagged_non_diffuse,
        }


def check_diffuse(law: BiasedBitLaw, horizon: int, tail_threshold: float = 1e-3) -> DiffuseReport:
    """Partial sum of min(p_n, 1 - p_n) over n = -horizon..0.

    A law is flagged when the terms over the deeper half of the window add up
    to less than tail_threshold, i.e. the series visibly converges.
    """
    if horizon < 1:
        raise ValueError(f"'horizon' must be at least 1, got {horizon}")
    terms: List[Fraction] = []
    atom = Fraction(1)
    for offset in range(horizon + 1):
        p = _check_probability(law.prob(-offset), f"at index {-offset}")
        terms.append(min(p, 1 - p))
        atom *= max(p, 1 - p)
    tail = sum(terms[(horizon + 1) // 2:], Fraction(0))
    report = DiffuseReport(
        horizon=horizon,
        terms=terms,
        partial_sum=sum(terms, Fraction(0)),
        tail_sum=tail,
        heaviest_atom=atom,
        tail_threshold=tail_threshold,
        flagged_non_diffuse=tail < tail_threshold,
    )
    if report.flagged_non_diffuse:
        logger.info("Law %s looks non-diffuse: tail sum %g below %g", law.kind, float(tail), tail_threshold)
    return report


@dataclass(frozen=True)
class IndexFamily:
    # n -> strictly decreasing indices, all below n
    assignment: Mapping[int, Tuple[int, ...]]

    @classmethod
    def from_assignment(cls, assignment: Mapping[int, Iterable[int]], strict: bool = True) -> "IndexFamily":
        family = cls({int(n): tuple(int(i) for i in members) for n, members in assignment.items()})
        for n, members in family.assignment.items():
            if n > 0:
                raise ValueError(f"Family keys are non-positive, got {n}")
            if any(a <= b for a, b in zip(members, members[1:])):
                raise ValueError(f"I_{n} must be strictly decreasing, got {list(members)}")
        if strict:
            report = check_family(family, depth=0)
            if not report.disjoint:
                raise ValueError("Index sets must be pairwise disjoint")
            if not report.predictable:
                raise ValueError("Every index in I_n must lie strictly below n")
        return family

    @property
    def window(self) -> Tuple[int, ...]:
        return tuple(sorted(self.assignment, reverse=True))

    @property
    def horizon(self) -> int:
        """Deepest index referenced by the family."""
        deepest = [m for members in self.assignment.values() for m in members]
        return min(deepest + list(self.assignment))

    def members(self, n: int, bits: Optional[int] = None) -> Tuple[int, ...]:
        if n not in self.assignment:
            raise ValueError(f"Family does not cover index {n}")
        members = self.assignment[n]
        if bits is None:
            return members
        if bits > len(members):
            raise ValueError(f"I_{n} has {len(members)} indices, {bits} requested")
        return members[:bits]

    def levels(self, depth: Optional[int] = None) -> List[FrozenSet[int]]:
        """I^(0) = I_0, I^(l+1) = union of I_n over n in I^(l); truncated to the assigned sets."""
        out: List[FrozenSet[int]] = []
        current = frozenset(self.assignment.get(0, ()))
        while current and (depth is None or len(out) <= depth):
            out.append(current)
            current = frozenset(i for n in current for i in self.assignment.get(n, ()))
        return out

    def residual(self) -> FrozenSet[int]:
        used = {0}.union(*self.levels())
        return frozenset(i for i in range(self.horizon, 0) if i not in used)


def build_index_family(n_window: int, bits_per_set: int) -> IndexFamily:
    """Greedy disjoint family for n = 0, -1, ..., -(n_window - 1).

    Round r visits every n with |n| < r in order n = 0, -1, ... and hands it the
    largest unassigned index below n and below its current members.
    """
    if n_window < 1 or bits_per_set < 1:
        raise ValueError(f"'n_window' and 'bits_per_set' must be at least 1, got {n_window}, {bits_per_set}")
    window = [-k for k in range(n_window)]
    sets: Dict[int, List[int]] = {n: [] for n in window}
    assigned = set()
    r = 0
    while any(len(sets[n]) < bits_per_set for n in window):
        r += 1
        for n in window[:r]:
            candidate = (sets[n][-1] if sets[n] else n) - 1
            while candidate in assigned:
                candidate -= 1
            sets[n].append(candidate)
            assigned.add(candidate)
    family = IndexFamily({n: tuple(members) for n, members in sets.items()})
    logger.debug("Built index family over %d indices in %d rounds, horizon %d", n_window, r, family.horizon)
    return family


@dataclass
class FamilyReport:
    disjoint: bool
    predictable: bool
    depth: int
    levels_bounded: bool
    levels_disjoint: bool
    residual_closed: bool
    horizon: int

    @property
    def passed(self) -> bool:
        return self.disjoint and self.predictable and self.levels_bounded and self.levels_disjoint and self.residual_closed

    def to_dict(self) -> dict:
        return {
            "disjoint": self.disjoint,
            "predictable": self.predictable,
            "depth": self.depth,
            "levels_bounded": self.levels_bounded,
            "levels_disjoint": self.levels_disjoint,
            "residual_closed": self.residual_closed,
            "horizon": self.horizon,
            "passed": self.passed,
        }


def check_family(family: IndexFamily, depth: int = 4) -> FamilyReport:
    seen = set()
    disjoint = True
    for members in family.assignment.values():
        if seen.intersection(members):
            disjoint = False
        seen.update(members)
    predictable = all(i < n for n, members in family.assignment.items() for i in members)

    levels = family.levels(depth)
    bounded = all(i <= -l - 1 for l, level in enumerate(levels) for i in level)
    levels_disjoint = all(not (a & b) for a, b in itertools.combinations(levels, 2))
    residual = family.residual() if disjoint and predictable else frozenset()
    closed = all(set(family.assignment[m]) <= residual for m in residual if m in family.assignment)
    return FamilyReport(disjoint, predictable, depth, bounded, levels_disjoint, closed, family.horizon)


@dataclass(frozen=True)
class ExtractorState:
    low: Fraction
    high: Fraction
    bits_consumed: int
    # +1, -1 or None while undecided
    decision: Optional[int]

    @property
    def decided(self) -> bool:
        return self.decision is not None

    @property
    def width(self) -> Fraction:
        return self.high - self.low


def _check_bits(bits: Sequence[int], probs: Sequence) -> List[Fraction]:
    if len(bits) != len(probs):
        raise ValueError(f"Got {len(bits)} bits but {len(probs)} probabilities")
    for b in bits:
        if b not in (-1, 1):
            raise ValueError(f"Bits must be -1 or +1, got {b}")
    return [_check_probability(parse_fraction(p), f"at position {i}") for i, p in enumerate(probs)]


def extract_fair_bit(bits: Sequence[int], probs: Sequence) -> ExtractorState:
    """Interval splitting on the lexicographic CDF: +1 keeps the left part of width p*w.

    Decides +1 once the interval sits in [0, 1/2), -1 once it sits in [1/2, 1).
    """
    ps = _check_bits(bits, probs)
    low, high = Fraction(0), Fraction(1)
    for k, (bit, p) in enumerate(zip(bits, ps), start=1):
        cut = low + p * (high - low)
        if bit == 1:
            high = cut
        else:
            low = cut
        if high <= HALF:
            return ExtractorState(low, high, k, 1)
        if low >= HALF:
            return ExtractorState(low, high, k, -1)
    return ExtractorState(low, high, len(ps), None)


def straddler(probs: Sequence) -> Tuple[Fraction, Fraction]:
    """The depth-len(probs) interval [low, high) that still contains 1/2.

    P[h = +1] = low, P[h = -1] = 1 - high and the undecided mass is high - low;
    low == high == 1/2 when every pattern decides.
    """
    low, high = Fraction(0), Fraction(1)
    for i, p in enumerate(probs):
        p = _check_probability(parse_fraction(p), f"at position {i}")
        cut = low + p * (high - low)
        if cut > HALF:
            high = cut
        else:
            low = cut
        if not low < HALF < high:
            return HALF, HALF
    return low, high


@dataclass
class ScrambledRecord:
    window: Tuple[int, ...]
    eps: Dict[int, int]
    h: Dict[int, Optional[int]]
    bits_consumed: Dict[int, int]

    @property
    def decided(self) -> Dict[int, bool]:
        return {n: self.h[n] is not None for n in self.window}

    @property
    def products(self) -> Dict[int, Optional[int]]:
        return {n: None if self.h[n] is None else self.h[n] * self.eps[n] for n in self.window}


def _window(n_window: int) -> Tuple[int, ...]:
    if n_window < 1:
        raise ValueError(f"'window' must be at least 1, got {n_window}")
    return tuple(-k for k in range(n_window))


def referenced_indices(family: IndexFamily, n_window: int, bits_per_set: int) -> List[int]:
    window = _window(n_window)
    indices = set(window)
    for n in window:
        indices.update(family.members(n, bits_per_set))
    return sorted(indices, reverse=True)


def scramble(
    law: BiasedBitLaw,
    family: IndexFamily,
    n_window: int,
    bits_per_set: int,
    eps: Optional[Mapping[int, int]] = None,
    rng: Optional[SeededRng] = None,
) -> ScrambledRecord:
    """h_n from (eps_i) over the first bits_per_set members of I_n; eps given or drawn from rng."""
    window = _window(n_window)
    needed = referenced_indices(family, n_window, bits_per_set)
    if eps is None:
        if rng is None:
            raise ValueError("Either 'eps' or 'rng' is required")
        gen = rng.generator(purpose=2)
        eps = {i: 1 if gen.random() < float(law.prob(i)) else -1 for i in needed}
    else:
        missing = [i for i in needed if i not in eps]
        if missing:
            raise ValueError(f"Sign assignment misses indices {missing[:5]}")

    h: Dict[int, Optional[int]] = {}
    consumed: Dict[int, int] = {}
    for n in window:
        members = family.members(n, bits_per_set)
        state = extract_fair_bit([eps[i] for i in members], [law.prob(i) for i in members])
        h[n] = state.decision
        consumed[n] = state.bits_consumed
    return ScrambledRecord(window, {i: int(eps[i]) for i in needed}, h, consumed)


@dataclass
class MonteCarloSummary:
    n_samples: int
    plus_frequency: float
    undecided_fraction: float

    def to_row(self) -> list:
        return [self.n_samples, self.plus_frequency, self.undecided_fraction]


def sample_scrambled(law: BiasedBitLaw, family: IndexFamily, n_window: int, bits_per_set: int, n_samples: int, seed: int) -> MonteCarloSummary:
    """Frequency of h_0 * eps_0 = +1 among decided draws, over independent windows."""
    if n_samples < 1:
        raise ValueError(f"'n_samples' must be at least 1, got {n_samples}")
    plus = decided = 0
    for k in range(n_samples):
        record = scramble(law, family, n_window, bits_per_set, rng=SeededRng(seed, k))
        product = record.products[0]
        if product is not None:
            decided += 1
            plus += product == 1
    return MonteCarloSummary(n_samples, plus / decided if decided else float("nan"), 1.0 - decided / n_samples)


def _key(values: Iterable[Optional[int]]) -> str:
    return ",".join("?" if v is None else f"{v:+d}" for v in values)


@dataclass
class ExactLaw:
    window: Tuple[int, ...]
    bit_count: int
    # (eps over window, h over window; None marks undecided) -> probability
    cells: Dict[Tuple[Tuple[int, ...], Tuple[Optional[int], ...]], Fraction] = field(default_factory=dict)

    @property
    def undecided_mass(self) -> Fraction:
        return sum((m for (_, h), m in self.cells.items() if None in h), Fraction(0))

    @property
    def decided_mass(self) -> Fraction:
        return 1 - self.undecided_mass

    def _position(self, n: int) -> int:
        if n not in self.window:
            raise ValueError(f"Index {n} is outside the window {self.window}")
        return self.window.index(n)

    def h_law(self, n: int) -> Dict[Optional[int], Fraction]:
        k = self._position(n)
        out: Dict[Optional[int], Fraction] = {1: Fraction(0), -1: Fraction(0), None: Fraction(0)}
        for (_, h), m in self.cells.items():
            out[h[k]] += m
        return out

    def product_law(self, n: int) -> Dict[Optional[int], Fraction]:
        k = self._position(n)
        out: Dict[Optional[int], Fraction] = {1: Fraction(0), -1: Fraction(0), None: Fraction(0)}
        for (eps, h), m in self.cells.items():
            out[None if h[k] is None else h[k] * eps[k]] += m
        return out

    def fairness_defect(self, n: int) -> Fraction:
        """max |P[h_n = s] - (1 - u_n)/2| over s = +1, -1, u_n the undecided mass of h_n."""
        law = self.h_law(n)
        target = (1 - law[None]) / 2
        return max(abs(law[1] - target), abs(law[-1] - target))

    def products(self) -> Dict[Tuple[int, ...], Fraction]:
        """Joint law of (h_n * eps_n) over the window, on fully decided cells."""
        out: Dict[Tuple[int, ...], Fraction] = {}
        for (eps, h), m in self.cells.items():
            if None in h:
                continue
            key = tuple(a * b for a, b in zip(h, eps))
            out[key] = out.get(key, Fraction(0)) + m
        return out

    def factorizes(self) -> bool:
        target = self.decided_mass / 2 ** len(self.window)
        joint = self.products()
        return all(joint.get(x, Fraction(0)) == target for x in itertools.product((1, -1), repeat=len(self.window)))

    def conditional_fairness(self) -> Dict[Tuple[int, ...], Fraction]:
        """P[h_0 eps_0 = +1 | (h_n eps_n) for n < 0] for every conditioning value of positive decided mass."""
        joint = self.products()
        totals: Dict[Tuple[int, ...], Fraction] = {}
        plus: Dict[Tuple[int, ...], Fraction] = {}
        for x, m in joint.items():
            rest = x[1:]
            totals[rest] = totals.get(rest, Fraction(0)) + m
            if x[0] == 1:
                plus[rest] = plus.get(rest, Fraction(0)) + m
        return {rest: plus.get(rest, Fraction(0)) / total for rest, total in totals.items() if total > 0}

    def signs_law_preserved(self) -> bool:
        """The window signs given the products have the unconditional law (both on decided mass).

        Expected only when the h_n are fair and read no window sign.
        """
        decided = {k: m for k, m in self.cells.items() if None not in k[1]}
        total = sum(decided.values(), Fraction(0))
        if total == 0:
            return False
        prior: Dict[Tuple[int, ...], Fraction] = {}
        by_product: Dict[Tuple[int, ...], Dict[Tuple[int, ...], Fraction]] = {}
        for (eps, h), m in decided.items():
            prior[eps] = prior.get(eps, Fraction(0)) + m / total
            x = tuple(a * b for a, b in zip(h, eps))
            row = by_product.setdefault(x, {})
            row[eps] = row.get(eps, Fraction(0)) + m
        for row in by_product.values():
            mass = sum(row.values(), Fraction(0))
            for eps, p in prior.items():
                if row.get(eps, Fraction(0)) / mass != p:
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "window": list(self.window),
            "bit_count": self.bit_count,
            "undecided_mass": str(self.undecided_mass),
            "decided_mass": str(self.decided_mass),
            "products": {_key(x): str(m) for x, m in sorted(self.products().items(), reverse=True)},
            "h_law": {str(n): {_key([s]): str(m) for s, m in self.h_law(n).items()} for n in self.window},
            "factorizes": self.factorizes(),
            "conditional_fairness": {_key(rest): str(p) for rest, p in sorted(self.conditional_fairness().items(), reverse=True)},
            "signs_law_preserved": self.signs_law_preserved(),
        }


def exact_joint_law(law: BiasedBitLaw, family: IndexFamily, n_window: int, bits_per_set: int) -> ExactLaw:
    """Enumerate every sign assignment of the referenced indices with exact probabilities."""
    window = _window(n_window)
    indices = referenced_indices(family, n_window, bits_per_set)
    if len(indices) > ENUMERATION_BIT_LIMIT:
        raise EnumerationBudgetError(len(indices))
    probs = {i: law.prob(i) for i in indices}
    members = {n: family.members(n, bits_per_set) for n in window}

    result = ExactLaw(window, len(indices))
    for signs in itertools.product((1, -1), repeat=len(indices)):
        eps = dict(zip(indices, signs))
        mass = Fraction(1)
        for i, s in eps.items():
            mass *= probs[i] if s == 1 else 1 - probs[i]
        h = tuple(extract_fair_bit([eps[i] for i in members[n]], [probs[i] for i in members[n]]).decision for n in window)
        key = (tuple(eps[n] for n in window), h)
        result.cells[key] = result.cells.get(key, Fraction(0)) + mass
    logger.info("Enumerated %d assignments over %d bits, undecided mass %s", 2 ** len(indices), len(indices), result.undecided_mass)
    return result
