"""Cumulant evolution hierarchies for Wick-expanded polynomial dynamics.

For dynamics of the form  d/dt y_j = sum over I in a finite family of
M^I_j(t) * W[y(t)^I]  (each drive written in the Wick basis of the current
law), the joint cumulants obey the closed hierarchy

    d/dt kappa[y_I'] = sum over slots i of I' and drives I of
        M^I_i(t) * E[ W[y^I] * W[y^(I' minus i)] ],

where the pair expectation expands into the partition sum over cumulants in
which no block may sit inside a single Wick factor.  Truncation closes the
hierarchy: cumulants above the state table's max order read as zero.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate as _sp_integrate

from .cumulants import CumulantTable, MomentOracle, moments_from_cumulants
from .indexing import EMPTY, Index, LabeledSeq, canonical_key
from .wick import wick_product_expectation

Amplitude = Callable[[float, CumulantTable], complex]


def constant_amplitude(value: complex) -> Amplitude:
    v = complex(value)
    return lambda t, table: v


@dataclass
class InteractionTerm:
    """One drive on one variable: the Wick monomial sequence and its amplitude.

    The amplitude is called as ``amplitude(t, table)`` with the current
    cumulant table, so state-dependent couplings are expressible.
    """

    seq: LabeledSeq
    amplitude: Amplitude


@dataclass
class AmplitudeModel:
    """The full drive family: for each driven index, its interaction terms."""

    terms: Mapping[Index, Sequence[InteractionTerm]]

    def universe(self) -> list[Index]:
        """All indices the model mentions, deterministically ordered."""
        seen = set(self.terms.keys())
        for terms in self.terms.values():
            for term in terms:
                seen.update(term.seq.indices())
        return sorted(seen, key=lambda i: (type(i).__name__, repr(i)))


@dataclass
class HierarchyState:
    """A truncated cumulant table with a time stamp.

    The closure is the table's max order: cumulants above it read as zero.
    """

    table: CumulantTable
    time: float = 0.0

    @property
    def order_cap(self) -> int:
        return self.table.max_order


def _pair_expectation(kappa_of, left: LabeledSeq, right: LabeledSeq) -> complex:
    """E[W[y^left] * W[y^right]] under the given cumulant source."""
    return wick_product_expectation(kappa_of, [left, right])


def hierarchy_rhs(
    model: AmplitudeModel, state: HierarchyState, target: LabeledSeq
) -> complex:
    """d/dt kappa[target] under the model, at the state's time and table."""
    if len(target) == 0:
        return 0.0 + 0.0j
    if len(target) > state.order_cap:
        raise ValueError(
            f"target order {len(target)} exceeds the closure cap {state.order_cap}"
        )
    kappa_of = state.table.kappa_of
    total = 0.0 + 0.0j
    for label, idx in target.elements:
        drives = model.terms.get(idx, ())
        if not drives:
            continue
        rest = target.without((label,))
        for term in drives:
            amp = complex(term.amplitude(state.time, state.table))
            if amp == 0:
                continue
            total += amp * _pair_expectation(kappa_of, term.seq, rest)
    return total


def hierarchy_rhs_table(
    model: AmplitudeModel, state: HierarchyState, targets: Iterable[tuple]
) -> dict[tuple, complex]:
    """The right-hand side for a family of canonical target keys."""
    out = {}
    for key in targets:
        key = canonical_key(key)
        out[key] = hierarchy_rhs(model, state, LabeledSeq.from_indices(key))
    return out


def all_keys_up_to(indices: Sequence[Index], order: int) -> list[tuple]:
    """All canonical multiset keys over the indices with 1 <= length <= order."""
    pool = sorted(set(indices), key=lambda i: (type(i).__name__, repr(i)))
    keys = []
    for r in range(1, order + 1):
        keys.extend(itertools.combinations_with_replacement(pool, r))
    return [canonical_key(k) for k in keys]


def integrate_hierarchy(
    model: AmplitudeModel,
    state0: HierarchyState,
    t_end: float,
    dt: float,
    record: bool = False,
):
    """March the truncated hierarchy with classic fixed-step RK4.

    Evolves every key over the model universe up to the state's order cap.
    Returns the final state, or (times, states) when ``record`` is set.
    """
    cap = state0.order_cap
    keys = all_keys_up_to(model.universe(), cap)
    provenance = state0.table.provenance

    def pack(table: CumulantTable) -> np.ndarray:
        return np.array([table.kappa(k) for k in keys], dtype=complex)

    def unpack(vec: np.ndarray) -> CumulantTable:
        return CumulantTable(
            entries=dict(zip(keys, vec)), max_order=cap, provenance=provenance
        )

    def rhs(t: float, vec: np.ndarray) -> np.ndarray:
        state = HierarchyState(table=unpack(vec), time=t)
        return np.array(
            [hierarchy_rhs(model, state, LabeledSeq.from_indices(k)) for k in keys],
            dtype=complex,
        )

    n_steps = max(1, int(round(t_end / dt)))
    h = t_end / n_steps
    t = state0.time
    vec = pack(state0.table)
    states = [HierarchyState(table=unpack(vec), time=t)]
    for _ in range(n_steps):
        k1 = rhs(t, vec)
        k2 = rhs(t + h / 2, vec + h / 2 * k1)
        k3 = rhs(t + h / 2, vec + h / 2 * k2)
        k4 = rhs(t + h, vec + h * k3)
        vec = vec + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if record:
            states.append(HierarchyState(table=unpack(vec), time=t))
    if record:
        return [s.time for s in states], states
    return HierarchyState(table=unpack(vec), time=t)


# ----------------------------------------------------------------------
# Duhamel expansion


def _quad_complex(fn: Callable[[float], complex], a: float, b: float) -> complex:
    if a == b:
        return 0.0 + 0.0j
    re, _ = _sp_integrate.quad(lambda s: fn(s).real, a, b, epsabs=1e-12, limit=200)
    im, _ = _sp_integrate.quad(lambda s: fn(s).imag, a, b, epsabs=1e-12, limit=200)
    return complex(re, im)


@dataclass
class RemainderTerm:
    """Descriptor of one unevaluated Duhamel remainder contribution.

    Represents  integral over s' in [0, t] of
    (d/ds' E[W[y(s')^seq] W[y(s')^rest]]) * tail_weight(s')  with
    tail_weight(s') = integral over s in [s', t] of the amplitude; the state
    derivative under the integral is what the next hierarchy level supplies.
    """

    slot_index: Index
    seq: LabeledSeq
    rest: LabeledSeq
    t_end: float
    tail_weight: Callable[[float], complex]


@dataclass
class DuhamelExpansion:
    zeroth: complex
    first_order: complex
    remainder: tuple[RemainderTerm, ...]

    @property
    def value(self) -> complex:
        """Zeroth plus first order (the remainder is not evaluated)."""
        return self.zeroth + self.first_order


def duhamel_expand(
    model: AmplitudeModel, table0: CumulantTable, target: LabeledSeq, t: float
) -> DuhamelExpansion:
    """Integrated hierarchy to first order around the initial law.

    kappa[target](t) = kappa[target](0)
      + sum over slots/drives of E_0[W[y^I] W[y^(target minus i)]] *
        integral over [0, t] of the amplitude (at the frozen initial table)
      + remainder descriptors carrying the tail weights.
    """
    kappa_of = table0.kappa_of
    zeroth = table0.kappa(target.key())
    first = 0.0 + 0.0j
    remainder: list[RemainderTerm] = []
    for label, idx in target.elements:
        rest = target.without((label,))
        for term in model.terms.get(idx, ()):
            pair0 = _pair_expectation(kappa_of, term.seq, rest)
            amp_int = _quad_complex(lambda s: term.amplitude(s, table0), 0.0, t)
            first += pair0 * amp_int

            def tail(
                s_prime: float, _amp=term.amplitude, _t=t
            ) -> complex:
                return _quad_complex(lambda s: _amp(s, table0), s_prime, _t)

            remainder.append(
                RemainderTerm(
                    slot_index=idx,
                    seq=term.seq,
                    rest=rest,
                    t_end=t,
                    tail_weight=tail,
                )
            )
    return DuhamelExpansion(
        zeroth=zeroth, first_order=first, remainder=tuple(remainder)
    )


# ----------------------------------------------------------------------
# Leibniz expansion of Wick time derivatives


@dataclass
class LeibnizTerm:
    """One term of d/dt W[y^I]: the slot whose variable is differentiated
    and the remaining sequence; stands for W[(d/dt y_slot) * y^rest]."""

    slot_label: int
    slot_index: Index
    rest: LabeledSeq


def leibniz_wick_derivative(seq: LabeledSeq) -> tuple[LeibnizTerm, ...]:
    """Formal product-rule expansion of d/dt W[y^I]: one term per slot."""
    return tuple(
        LeibnizTerm(slot_label=label, slot_index=idx, rest=seq.without((label,)))
        for label, idx in seq.elements
    )


# ----------------------------------------------------------------------
# interacting particle chain (positions/momenta, power-law pair force)


def appendix_b_model(
    n_particles: int,
    power: int,
    couplings,
    oracle: MomentOracle | None = None,
) -> AmplitudeModel:
    """Drive family of the anharmonic particle system

        d/dt q_n = p_n,
        d/dt p_n = - sum over m != n of lambda_{nm} (q_n - q_m)^(power - 1),

    written in the Wick basis.  Index ('q', n) is a position, ('p', n) a
    momentum.  Positions are driven by the momentum mean (empty sequence)
    plus the momentum Wick monomial with unit amplitude.  Momenta are driven
    by every subsequence shape U of the expanded pair force, with amplitude

        lambda_{nm} * sum over binomial splits of the force monomials of
        sign * count * (remaining position moment),

    the moment read from the supplied oracle, or from the evolving cumulant
    table when ``oracle`` is None.
    """
    if power < 2:
        raise ValueError("power must be at least 2")
    lam = np.asarray(couplings, dtype=float)
    if lam.shape != (n_particles, n_particles):
        raise ValueError("couplings must be (n, n)")
    if not np.allclose(lam, lam.T):
        raise ValueError("couplings must be symmetric")

    a = power

    def moment_of(key: tuple, table: CumulantTable) -> complex:
        if oracle is not None:
            return 1.0 if not key else oracle.moment(key)
        if not key:
            return 1.0 + 0.0j
        return moments_from_cumulants(table, LabeledSeq.from_indices(key))

    terms: dict[Index, list[InteractionTerm]] = {}
    for n in range(n_particles):
        qn, pn = ("q", n), ("p", n)

        def mean_momentum(t, table, _pn=pn):
            return moment_of((_pn,), table)

        terms[qn] = [
            InteractionTerm(seq=EMPTY, amplitude=mean_momentum),
            InteractionTerm(
                seq=LabeledSeq.from_indices([pn]),
                amplitude=constant_amplitude(1.0),
            ),
        ]

        p_terms: list[InteractionTerm] = []
        for m in range(n_particles):
            if m == n or lam[n, m] == 0.0:
                continue
            qm = ("q", m)
            for k1 in range(a):
                for k2 in range(a - k1):
                    u_seq = LabeledSeq.from_indices([qn] * k1 + [qm] * k2)

                    def amp(
                        t,
                        table,
                        _k1=k1,
                        _k2=k2,
                        _qn=qn,
                        _qm=qm,
                        _lam=float(lam[n, m]),
                    ):
                        total = 0.0 + 0.0j
                        for k in range(_k1, a - _k2):
                            count = (
                                math.comb(a - 1, k)
                                * math.comb(k, _k1)
                                * math.comb(a - 1 - k, _k2)
                            )
                            sign = (-1) ** (a - k)
                            key = (_qn,) * (k - _k1) + (_qm,) * (a - 1 - k - _k2)
                            total += (
                                sign
                                * count
                                * moment_of(canonical_key(key), table)
                            )
                        return _lam * total

                    p_terms.append(InteractionTerm(seq=u_seq, amplitude=amp))
        terms[pn] = p_terms
    return AmplitudeModel(terms=terms)
