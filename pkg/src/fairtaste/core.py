"""Domain types for tabular online fair classification.

Everything lives on a finite domain: contexts are integers in
``[0, num_contexts)``, groups and labels are ``-1`` / ``+1``.  Distributions,
hypotheses and mixture policies are stored exactly (as tables), so that true
group rates and expected losses are computable in closed form.  All types are
immutable after construction and safe to share across concurrent runs; RNG
state is owned by a single run and never shared.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

GROUPS = (-1, 1)
LABELS = (-1, 1)

#: simplex tolerance for probability tables and mixture weights
PROB_TOL = 1e-12


def group_index(a: int) -> int:
    """Map a group label in {-1, +1} to a column index {0, 1}."""
    if a == -1:
        return 0
    if a == 1:
        return 1
    raise ValueError(f"group label must be -1 or +1, got {a!r}")


class RateFunctional(enum.Enum):
    """Which group-conditional rate a fairness constraint equalizes."""

    FALSE_POSITIVE = "false_positive"
    FALSE_NEGATIVE = "false_negative"
    POSITIVE_RATE = "positive_rate"


@dataclass(frozen=True)
class Example:
    """A single draw (context, group, label)."""

    context: int
    group: int
    label: int

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"bad group {self.group!r}")
        if self.label not in LABELS:
            raise ValueError(f"bad label {self.label!r}")
        if self.context < 0:
            raise ValueError(f"bad context {self.context!r}")


class TabularDistribution:
    """Exact distribution over (context, group, label).

    ``mass[x, g]`` is the probability of arrival (context x, group g) and
    ``pos_rate[x, g]`` the conditional probability of label +1.  Column 0 is
    group -1, column 1 is group +1.  Construction checks that negative
    examples have positive mass in both groups, which the learner's
    false-positive-rate machinery relies on.
    """

    def __init__(self, mass, pos_rate):
        mass = np.asarray(mass, dtype=float)
        pos_rate = np.asarray(pos_rate, dtype=float)
        if mass.ndim != 2 or mass.shape[1] != 2:
            raise ValueError("mass must have shape (num_contexts, 2)")
        if pos_rate.shape != mass.shape:
            raise ValueError("pos_rate shape must match mass shape")
        if np.any(mass < 0):
            raise ValueError("mass entries must be nonnegative")
        if abs(mass.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"mass must sum to 1, got {mass.sum()!r}")
        if np.any(pos_rate < 0) or np.any(pos_rate > 1):
            raise ValueError("pos_rate entries must lie in [0, 1]")
        neg = (mass * (1.0 - pos_rate)).sum(axis=0)
        if not np.all(neg > 0):
            raise ValueError(
                "each group needs positive mass of negative examples; "
                f"got Pr[a=j, y=-1] = {neg.tolist()}"
            )
        self.mass = mass
        self.pos_rate = pos_rate
        self.mass.setflags(write=False)
        self.pos_rate.setflags(write=False)
        # flat layout for sampling: cell k = (context, group-column)
        self._cell_cum = np.cumsum(mass.ravel())

    @property
    def num_contexts(self) -> int:
        return self.mass.shape[0]

    def negative_mass(self, group: int) -> float:
        """Pr[a = group, y = -1]."""
        g = group_index(group)
        return float((self.mass[:, g] * (1.0 - self.pos_rate[:, g])).sum())

    def sample(self, rng: np.random.Generator) -> Example:
        """Draw one example; advances the generator deterministically."""
        k = int(np.searchsorted(self._cell_cum, rng.random(), side="right"))
        k = min(k, 2 * self.num_contexts - 1)
        x, g = divmod(k, 2)
        label = 1 if rng.random() < self.pos_rate[x, g] else -1
        return Example(x, GROUPS[g], label)

    def sample_n(self, rng: np.random.Generator, n: int):
        """Vectorized draw of n examples; returns arrays (context, group, label).

        Consumes the generator in the same per-example order as repeated
        ``sample`` calls (one uniform for the cell, one for the label).
        """
        u = rng.random((n, 2))
        k = np.searchsorted(self._cell_cum, u[:, 0], side="right")
        k = np.minimum(k, 2 * self.num_contexts - 1)
        x = k // 2
        g = k % 2
        label = np.where(u[:, 1] < self.pos_rate[x, g], 1, -1)
        group = np.where(g == 0, -1, 1)
        return x.astype(int), group.astype(int), label.astype(int)

    def __eq__(self, other):
        if not isinstance(other, TabularDistribution):
            return NotImplemented
        return np.array_equal(self.mass, other.mass) and np.array_equal(
            self.pos_rate, other.pos_rate
        )

    def __repr__(self):
        return f"TabularDistribution(num_contexts={self.num_contexts})"


class Hypothesis:
    """A deterministic classifier, stored as a (num_contexts, 2) table of +-1."""

    def __init__(self, predictions, tag: str | None = None):
        predictions = np.asarray(predictions, dtype=np.int8)
        if predictions.ndim != 2 or predictions.shape[1] != 2:
            raise ValueError("predictions must have shape (num_contexts, 2)")
        if not np.all(np.isin(predictions, (-1, 1))):
            raise ValueError("predictions must be -1 or +1")
        self.predictions = predictions
        self.predictions.setflags(write=False)
        self.tag = tag

    @property
    def num_contexts(self) -> int:
        return self.predictions.shape[0]

    def key(self) -> bytes:
        """Structural identity: the prediction table, ignoring the tag."""
        return self.predictions.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Hypothesis):
            return NotImplemented
        return np.array_equal(self.predictions, other.predictions)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Hypothesis(tag={self.tag!r})"


def predict(h: Hypothesis, x: int, a: int) -> int:
    """Evaluate hypothesis h on (context, group); total on the table domain."""
    if not 0 <= x < h.num_contexts:
        raise IndexError(f"context {x} out of range [0, {h.num_contexts})")
    return int(h.predictions[x, group_index(a)])


def constant_hypothesis(num_contexts: int, label: int, tag=None) -> Hypothesis:
    return Hypothesis(
        np.full((num_contexts, 2), label, dtype=np.int8),
        tag=tag or ("plus" if label == 1 else "minus"),
    )


def group_identity_hypothesis(num_contexts: int, sign: int, tag=None) -> Hypothesis:
    """The classifier predicting sign * a, i.e. +a (sign=1) or -a (sign=-1)."""
    row = np.array([-sign, sign], dtype=np.int8)
    return Hypothesis(
        np.tile(row, (num_contexts, 1)),
        tag=tag or ("plus_a" if sign == 1 else "minus_a"),
    )


class HypothesisClass:
    """An ordered finite hypothesis class over a fixed tabular domain.

    Always contains the two constant classifiers and the group-identity
    classifiers +a / -a (checked structurally), with no duplicate tables.
    """

    def __init__(self, hypotheses, num_contexts: int):
        hypotheses = list(hypotheses)
        if not hypotheses:
            raise ValueError("hypothesis class must be nonempty")
        for h in hypotheses:
            if h.num_contexts != num_contexts:
                raise ValueError("all hypotheses must share num_contexts")
        keys = [h.key() for h in hypotheses]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate prediction tables in hypothesis class")
        required = {
            "plus": constant_hypothesis(num_contexts, 1),
            "minus": constant_hypothesis(num_contexts, -1),
            "plus_a": group_identity_hypothesis(num_contexts, 1),
            "minus_a": group_identity_hypothesis(num_contexts, -1),
        }
        key_to_index = {k: i for i, k in enumerate(keys)}
        self._special = {}
        for name, h in required.items():
            idx = key_to_index.get(h.key())
            if idx is None:
                raise ValueError(f"hypothesis class must contain {name}")
            self._special[name] = idx
        self.hypotheses = tuple(hypotheses)
        self.num_contexts = num_contexts
        # stacked predictions, shape (|H|, num_contexts, 2)
        self.prediction_matrix = np.stack([h.predictions for h in hypotheses])
        self.prediction_matrix.setflags(write=False)

    def __len__(self):
        return len(self.hypotheses)

    def __getitem__(self, i) -> Hypothesis:
        return self.hypotheses[i]

    @property
    def plus_index(self) -> int:
        return self._special["plus"]

    @property
    def minus_index(self) -> int:
        return self._special["minus"]

    @property
    def plus_a_index(self) -> int:
        return self._special["plus_a"]

    @property
    def minus_a_index(self) -> int:
        return self._special["minus_a"]

    def __eq__(self, other):
        if not isinstance(other, HypothesisClass):
            return NotImplemented
        return self.num_contexts == other.num_contexts and [
            h.key() for h in self.hypotheses
        ] == [h.key() for h in other.hypotheses]

    def __repr__(self):
        return f"HypothesisClass(|H|={len(self)}, num_contexts={self.num_contexts})"


class MixturePolicy:
    """A distribution over hypotheses of a fixed class (a deployable policy).

    Atoms are (hypothesis_index, weight) pairs with distinct indices,
    nonnegative weights summing to 1.
    """

    def __init__(self, hclass: HypothesisClass, atoms):
        atoms = [(int(i), float(w)) for i, w in atoms]
        indices = [i for i, _ in atoms]
        if len(set(indices)) != len(indices):
            raise ValueError("duplicate hypothesis indices in mixture policy")
        for i, w in atoms:
            if not 0 <= i < len(hclass):
                raise IndexError(f"hypothesis index {i} out of range")
            if w < 0:
                raise ValueError(f"negative weight {w!r}")
        total = sum(w for _, w in atoms)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        self.hclass = hclass
        self.atoms = tuple(atoms)

    @classmethod
    def point_mass(cls, hclass: HypothesisClass, index: int) -> "MixturePolicy":
        return cls(hclass, [(index, 1.0)])

    @property
    def support(self):
        return tuple(i for i, w in self.atoms if w > 0)

    def canonical_key(self):
        """Sorted support with weights rounded to 12 decimals; zero atoms dropped."""
        return tuple(sorted((i, round(w, 12)) for i, w in self.atoms if w > 0))

    def prob_positive(self, x: int, a: int) -> float:
        """Pr[pi(x, a) = +1]."""
        g = group_index(a)
        return sum(
            w for i, w in self.atoms if self.hclass.prediction_matrix[i, x, g] == 1
        )

    def prob_action(self, x: int, a: int, yhat: int) -> float:
        p = self.prob_positive(x, a)
        return p if yhat == 1 else 1.0 - p

    def positive_table(self) -> np.ndarray:
        """Pr[pi = +1] per (context, group) cell, shape (num_contexts, 2)."""
        pos = np.zeros((self.hclass.num_contexts, 2))
        for i, w in self.atoms:
            pos += w * (self.hclass.prediction_matrix[i] == 1)
        return pos

    def __eq__(self, other):
        if not isinstance(other, MixturePolicy):
            return NotImplemented
        return (
            self.hclass == other.hclass
            and self.canonical_key() == other.canonical_key()
        )

    def __repr__(self):
        return f"MixturePolicy({list(self.atoms)!r})"


def policy_sample(pi: MixturePolicy, rng: np.random.Generator) -> int:
    """Draw a hypothesis index from the mixture weights."""
    u = rng.random()
    acc = 0.0
    for i, w in pi.atoms:
        acc += w
        if u < acc:
            return i
    return pi.atoms[-1][0]


class Dataset:
    """A finite list of labeled examples over a known context domain."""

    def __init__(self, examples, num_contexts: int):
        self.examples = tuple(examples)
        self.num_contexts = num_contexts
        counts = np.zeros((num_contexts, 2, 2), dtype=np.int64)  # (x, g, label-col)
        for e in self.examples:
            counts[e.context, group_index(e.group), (e.label + 1) // 2] += 1
        self.counts = counts
        self.counts.setflags(write=False)

    def __len__(self):
        return len(self.examples)

    @classmethod
    def from_arrays(cls, contexts, groups, labels, num_contexts: int) -> "Dataset":
        examples = [
            Example(int(x), int(a), int(y))
            for x, a, y in zip(contexts, groups, labels)
        ]
        return cls(examples, num_contexts)

    def negative_count(self, group: int) -> int:
        return int(self.counts[:, group_index(group), 0].sum())

    def positive_count(self, group: int) -> int:
        return int(self.counts[:, group_index(group), 1].sum())

    def group_count(self, group: int) -> int:
        return int(self.counts[:, group_index(group), :].sum())


# ---------------------------------------------------------------------------
# Text serialization (bit-exact round trip via shortest-repr floats)
# ---------------------------------------------------------------------------

def instance_to_text(d: TabularDistribution, hclass: HypothesisClass) -> str:
    """Serialize a distribution + hypothesis class to the flat text schema."""
    lines = [f"num_contexts {d.num_contexts}"]
    for x in range(d.num_contexts):
        for a in GROUPS:
            g = group_index(a)
            lines.append(f"mass {x} {a:+d} {float(d.mass[x, g])!r}")
    for x in range(d.num_contexts):
        for a in GROUPS:
            g = group_index(a)
            lines.append(f"pos_rate {x} {a:+d} {float(d.pos_rate[x, g])!r}")
    for h in hclass.hypotheses:
        tag = h.tag if h.tag else "-"
        vals = " ".join(
            f"{h.predictions[x, g]:+d}"
            for g in (0, 1)
            for x in range(d.num_contexts)
        )
        lines.append(f"hypothesis {tag} {vals}")
    return "\n".join(lines) + "\n"


def instance_from_text(text: str):
    """Parse the schema written by :func:`instance_to_text`."""
    num_contexts = None
    mass_entries, pos_entries, hyp_entries = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "num_contexts":
                num_contexts = int(parts[1])
            elif kind == "mass":
                mass_entries[(int(parts[1]), group_index(int(parts[2])))] = float(
                    parts[3]
                )
            elif kind == "pos_rate":
                pos_entries[(int(parts[1]), group_index(int(parts[2])))] = float(
                    parts[3]
                )
            elif kind == "hypothesis":
                tag = None if parts[1] == "-" else parts[1]
                hyp_entries.append((tag, [int(v) for v in parts[2:]]))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}: {exc}") from exc
    if num_contexts is None:
        raise ValueError("missing num_contexts record")
    mass = np.zeros((num_contexts, 2))
    pos = np.zeros((num_contexts, 2))
    for (x, g), v in mass_entries.items():
        mass[x, g] = v
    for (x, g), v in pos_entries.items():
        pos[x, g] = v
    d = TabularDistribution(mass, pos)
    hyps = []
    for tag, vals in hyp_entries:
        if len(vals) != 2 * num_contexts:
            raise ValueError(f"hypothesis {tag!r} has {len(vals)} entries")
        table = np.empty((num_contexts, 2), dtype=np.int8)
        table[:, 0] = vals[:num_contexts]
        table[:, 1] = vals[num_contexts:]
        hyps.append(Hypothesis(table, tag=tag))
    return d, HypothesisClass(hyps, num_contexts)


def save_instance(path, d: TabularDistribution, hclass: HypothesisClass) -> None:
    with open(path, "w") as f:
        f.write(instance_to_text(d, hclass))


def load_instance(path):
    with open(path) as f:
        return instance_from_text(f.read())
