"""Zero-order fuzzy neural network used as the core/V-F scoring function.

Five layers: inputs, triangular fuzzification, min t-norm rule layer,
normalization, weighted-sum output. Antecedents are fixed by a uniform
partition of [0, 1] per input; only the per-rule consequents are learned.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoRuleFiredError, ParseError, StatsEmptyError

LABELS_5 = ("VL", "L", "M", "H", "VH")
INPUT_NAMES = ("u", "p", "theta", "lambda")


@dataclass(frozen=True)
class TriangularMF:
    a: float
    c: float
    b: float

    def __post_init__(self):
        if not self.a <= self.c <= self.b:
            raise ValueError(f"need a <= c <= b, got {self}")

    def __call__(self, x: float) -> float:
        a, c, b = self.a, self.c, self.b
        if x == c:
            return 1.0
        if x < c:
            if a == c:
                return 1.0  # left shoulder
            return (x - a) / (c - a) if x > a else 0.0
        if c == b:
            return 1.0  # right shoulder
        return (b - x) / (b - c) if x < b else 0.0


def membership(mf: TriangularMF, x: float) -> float:
    return mf(x)


class FuzzyPartition:
    def __init__(self, sets: Sequence[TriangularMF], labels: Sequence[str] | None = None):
        self.sets = tuple(sets)
        if labels is None:
            labels = LABELS_5 if len(self.sets) == 5 else tuple(f"S{i}" for i in range(len(self.sets)))
        self.labels = tuple(labels)
        n = len(self.sets)
        self.uniform = n >= 2 and all(
            abs(mf.c - i / (n - 1)) < 1e-12
            and abs(mf.a - max(0.0, (i - 1) / (n - 1))) < 1e-12
            and abs(mf.b - min(1.0, (i + 1) / (n - 1))) < 1e-12
            for i, mf in enumerate(self.sets)
        )

    @classmethod
    def uniform_grid(cls, n: int) -> "FuzzyPartition":
        if n < 2:
            raise ValueError("a partition needs at least two sets")
        step = 1.0 / (n - 1)
        sets = [TriangularMF(max(0.0, (i - 1) * step), i * step, min(1.0, (i + 1) * step)) for i in range(n)]
        return cls(sets)

    def __len__(self):
        return len(self.sets)

    def degrees(self, x: float) -> list[float]:
        return [mf(x) for mf in self.sets]


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


class RuleBase:
    """Grid rule base: one rule per combination of input fuzzy sets.

    Rule ``i`` encodes its antecedent labels in mixed radix with input 0 as
    the most significant digit. ``firing_sum / firing_count`` is the mean
    (unnormalized) firing strength of each rule over all inferences so far.
    """

    def __init__(self, partitions: Sequence[FuzzyPartition], consequents=None):
        self.partitions = tuple(partitions)
        self.n_inputs = len(self.partitions)
        self.radix = tuple(len(p) for p in self.partitions)
        self.n_rules = int(np.prod(self.radix))
        if consequents is None:
            consequents = np.zeros(self.n_rules)
        consequents = np.asarray(consequents, dtype=float).copy()
        if consequents.shape != (self.n_rules,):
            raise ValueError(f"expected {self.n_rules} consequents, got shape {consequents.shape}")
        if not np.all(np.isfinite(consequents)):
            raise ValueError("consequents must be finite")
        self.consequents = consequents
        weights = []
        w = 1
        for r in reversed(self.radix):
            weights.append(w)
            w *= r
        self.place = tuple(reversed(weights))
        self._uniform = all(p.uniform for p in self.partitions) and len(set(self.radix)) == 1
        if self._uniform:
            n = self.radix[0]
            corners = np.array(list(itertools.product((0, 1), repeat=self.n_inputs)), dtype=np.int64)
            self._corners = corners  # (2^n, n_inputs)
            self._corner_mask = corners.astype(bool)
            self._place_arr = np.array(self.place, dtype=np.int64)
            self._scale = float(n - 1)
        self.reset_stats()

    # --- bookkeeping ----------------------------------------------------

    def reset_stats(self):
        self.firing_sum = np.zeros(self.n_rules)
        self.firing_count = 0

    @property
    def firing_mean(self) -> np.ndarray:
        if self.firing_count == 0:
            raise StatsEmptyError("no inference has been run on this rule base")
        return self.firing_sum / self.firing_count

    def rule_index(self, labels: Sequence[int]) -> int:
        return int(sum(l * w for l, w in zip(labels, self.place)))

    def rule_labels(self, index: int) -> tuple[int, ...]:
        out = []
        for r, w in zip(self.radix, self.place):
            out.append((index // w) % r)
        return tuple(out)

    def with_consequents(self, consequents) -> "RuleBase":
        return RuleBase(self.partitions, consequents)

    # --- inference ------------------------------------------------------

    def firing_strengths(self, x: Sequence[float]) -> np.ndarray:
        """Dense firing strength of every rule, min over antecedents."""
        x = [_clamp01(float(v)) for v in x]
        mu = [np.array(p.degrees(v)) for p, v in zip(self.partitions, x)]
        f = mu[0]
        for m in mu[1:]:
            f = np.minimum.outer(f, m).ravel()
        return f

    def infer_dense(self, x: Sequence[float], record: bool = False) -> float:
        f = self.firing_strengths(x)
        total = f.sum()
        if not total > 0:
            raise NoRuleFiredError(f"no rule fired for input {tuple(x)}")
        if record:
            self.firing_sum += f
            self.firing_count += 1
        return float(np.dot(f / total, self.consequents))

    def sparse_firing(self, x: Sequence[float]) -> list[tuple[int, float]]:
        """(rule index, strength) for every rule with non-zero strength."""
        nz = []
        for p, v in zip(self.partitions, x):
            v = _clamp01(float(v))
            nz.append([(l, m) for l, m in enumerate(p.degrees(v)) if m > 0.0])
        fired = []
        for combo in itertools.product(*nz):
            idx = 0
            strength = 1.0
            for (l, m), w in zip(combo, self.place):
                idx += l * w
                if m < strength:
                    strength = m
            fired.append((idx, strength))
        return fired

    def infer(self, x: Sequence[float], record: bool = True) -> float:
        fired = self.sparse_firing(x)
        total = sum(f for _, f in fired)
        if not total > 0:
            raise NoRuleFiredError(f"no rule fired for input {tuple(x)}")
        y = sum(f * self.consequents[i] for i, f in fired) / total
        if record:
            for i, f in fired:
                self.firing_sum[i] += f
            self.firing_count += 1
        return float(y)

    def infer_batch(self, X, record: bool = True) -> np.ndarray:
        """Infer many inputs at once; rows of ``X`` are state vectors."""
        X = np.clip(np.asarray(X, dtype=float), 0.0, 1.0)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"expected shape (m, {self.n_inputs}), got {X.shape}")
        if not self._uniform:
            return np.array([self.infer(row, record=record) for row in X])
        pos = X * self._scale
        k = np.minimum(pos.astype(np.int64), self.radix[0] - 2)
        w = pos - k
        # (m, corners, inputs)
        idx = k[:, None, :] + self._corners[None, :, :]
        mu = np.where(self._corner_mask[None, :, :], w[:, None, :], 1.0 - w[:, None, :])
        f = mu.min(axis=2)
        rules = idx @ self._place_arr
        total = f.sum(axis=1)
        if not np.all(total > 0):
            raise NoRuleFiredError("no rule fired for some input row")
        y = (f * self.consequents[rules]).sum(axis=1) / total
        if record:
            self.firing_sum += np.bincount(rules.ravel(), weights=f.ravel(), minlength=self.n_rules)
            self.firing_count += X.shape[0]
        return y

    def active_rule_mask(self, threshold: float = 0.1) -> np.ndarray:
        return self.firing_mean > threshold

    # --- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "sets_per_input": self.radix[0],
            "n_inputs": self.n_inputs,
            "consequents": [float(v) for v in self.consequents],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc) -> "RuleBase":
        try:
            rb = build_uniform_rulebase(int(doc["sets_per_input"]), int(doc["n_inputs"]))
            return rb.with_consequents(doc["consequents"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed rule base: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "RuleBase":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid rule base JSON: {exc}") from exc
        return cls.from_dict(doc)

    def fired_rule_report(self, threshold: float | None = None) -> str:
        """CSV of rules (optionally only those above a mean-strength threshold)."""
        mean = self.firing_mean
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rule_index", *INPUT_NAMES[: self.n_inputs], "consequent", "mean_firing_strength"])
        for i in range(self.n_rules):
            if threshold is not None and not mean[i] > threshold:
                continue
            labels = [p.labels[l] for p, l in zip(self.partitions, self.rule_labels(i))]
            writer.writerow([i, *labels, repr(float(self.consequents[i])), repr(float(mean[i]))])
        return buf.getvalue()


def build_uniform_rulebase(sets_per_input: int = 5, n_inputs: int = 4) -> RuleBase:
    part = FuzzyPartition.uniform_grid(sets_per_input)
    return RuleBase([part] * n_inputs)
