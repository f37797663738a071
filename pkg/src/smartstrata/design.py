"""Two-stage SMART structure: treatment sequences, embedded regimes,
observed/latent compliance masks, and coefficient equality constraints.

Coordinates are the *potential* compliances being modeled.  In the
ENGAGE-style trial these are ``d11`` (stage-1 compliance under A1=+1),
``d12`` (stage-1 under A1=-1) and ``d22`` (stage-2 active option for
non-responders).  The general trial adds separate responder and
non-responder stage-2 coordinates; the responder's continue-option
compliance is identified with the stage-1 coordinate and therefore never
appears as its own coordinate.

A regression column is a tuple of coordinate names: ``("d11",)`` is a
main effect, ``("d11", "d22")`` a product term.  The intercept is
implicit.  Coefficient slots are addressed as ``(k, column_name)`` with
``column_name`` the ``*``-joined display form (or ``"intercept"``).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TreatmentSequence",
    "ConstraintSet",
    "SmartDesign",
    "ComplianceClass",
    "build_engage_design",
    "build_general_design",
    "sequences_for_edtr",
    "validate_constraints",
    "design_to_config",
    "design_from_config",
    "quartile_classes",
    "parse_class_spec",
]

INTERCEPT = "intercept"


def column_name(col: tuple[str, ...]) -> str:
    return "*".join(col)


@dataclass(frozen=True)
class TreatmentSequence:
    """One of the K treatment sequences of the SMART.

    ``a2`` is None when the branch is not re-randomized at stage 2 (the
    ENGAGE responders).  ``observed`` lists the coordinates measured for
    subjects who followed this sequence; ``columns`` are the regression
    columns of its outcome model.
    """

    k: int
    a1: int
    responder: bool
    a2: int | None
    observed: tuple[str, ...]
    columns: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if self.a1 not in (-1, 1):
            raise ValueError("a1 must be -1 or +1")
        if self.a2 not in (None, -1, 1):
            raise ValueError("a2 must be -1, +1 or None")


@dataclass(frozen=True)
class ConstraintSet:
    """Equalities between coefficient slots, ((k, col), (k', col)) pairs."""

    equalities: tuple[tuple[tuple[int, str], tuple[int, str]], ...] = ()


@dataclass(frozen=True)
class ComplianceClass:
    """Per-coordinate compliance intervals with a representative point."""

    name: str
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        for a, b in zip(self.lo, self.hi):
            if not (0.0 <= a <= b <= 1.0):
                raise ValueError(f"invalid interval [{a}, {b}] in class {self.name!r}")

    @property
    def representative(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @staticmethod
    def uniform(name, lo, hi, m):
        """Same interval applied to every coordinate."""
        return ComplianceClass(name, (float(lo),) * m, (float(hi),) * m)


def quartile_classes(m):
    """Default reporting classes: upper quartile bands plus full compliance."""
    return [
        ComplianceClass.uniform("25%-50%", 0.25, 0.50, m),
        ComplianceClass.uniform("50%-75%", 0.50, 0.75, m),
        ComplianceClass.uniform("75%-100%", 0.75, 1.00, m),
        ComplianceClass.uniform("100%", 1.00, 1.00, m),
    ]


def parse_class_spec(spec, m):
    """Parse ``"0.25-0.5,0.5-0.75,1.0"`` into compliance classes."""
    classes = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo, hi = float(lo_s), float(hi_s)
        else:
            lo = hi = float(part)
        name = f"{lo:g}-{hi:g}" if lo != hi else f"{lo:g}"
        classes.append(ComplianceClass.uniform(name, lo, hi, m))
    if not classes:
        raise ValueError(f"no classes in spec {spec!r}")
    return classes


@dataclass(frozen=True)
class SmartDesign:
    name: str
    coords: tuple[str, ...]
    sequences: tuple[TreatmentSequence, ...]
    edtr_map: tuple[tuple[int, int], ...]
    constraints: ConstraintSet
    response_columns: tuple[str, ...] = ("d11", "d12")

    def __post_init__(self):
        seen = set(self.coords)
        if len(seen) != len(self.coords):
            raise ValueError("duplicate coordinate names")
        for col in self.response_columns:
            if col not in seen:
                raise ValueError(f"unknown response-model coordinate {col!r}")
        for seq in self.sequences:
            if seq.k != self.sequences.index(seq) + 1:
                raise ValueError("sequences must be numbered 1..K in order")
            for c in seq.observed:
                if c not in seen:
                    raise ValueError(f"sequence {seq.k}: unknown observed coordinate {c!r}")
            for col in seq.columns:
                for c in col:
                    if c not in seen:
                        raise ValueError(f"sequence {seq.k}: unknown column coordinate {c!r}")
                latent = [c for c in col if c not in seq.observed]
                if len(col) > 1 and len(latent) > 1:
                    raise ValueError(
                        f"sequence {seq.k}: product column {column_name(col)} has more than one "
                        "latent coordinate; the augmentation posterior would not be truncated normal"
                    )
        for l, (kr, knr) in enumerate(self.edtr_map, start=1):
            sr, snr = self.sequences[kr - 1], self.sequences[knr - 1]
            if not sr.responder or snr.responder:
                raise ValueError(f"EDTR {l}: pair must be (responder, non-responder) sequences")
            if sr.a1 != snr.a1:
                raise ValueError(f"EDTR {l}: stage-1 arms disagree")
        covered = {k for pair in self.edtr_map for k in pair}
        if covered != {s.k for s in self.sequences}:
            raise ValueError("every sequence must appear in at least one embedded regime")

    # --- simple dimensions ------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.coords)

    @property
    def K(self) -> int:
        return len(self.sequences)

    @property
    def L(self) -> int:
        return len(self.edtr_map)

    @property
    def has_interactions(self) -> bool:
        return any(len(col) > 1 for s in self.sequences for col in s.columns)

    # --- derived numeric structure ---------------------------------------
    @cached_property
    def coord_index(self):
        return {c: j for j, c in enumerate(self.coords)}

    @cached_property
    def observed_masks(self):
        """(K, m) boolean array of observed coordinates per sequence."""
        mask = np.zeros((self.K, self.m), dtype=bool)
        for s in self.sequences:
            for c in s.observed:
                mask[s.k - 1, self.coord_index[c]] = True
        return mask

    def observed_mask(self, k):
        return self.observed_masks[k - 1]

    @cached_property
    def slot_names(self):
        """All coefficient slots (k, column_name), intercept first per sequence."""
        slots = []
        for s in self.sequences:
            slots.append((s.k, INTERCEPT))
            slots.extend((s.k, column_name(col)) for col in s.columns)
        return slots

    @cached_property
    def _slot_class(self):
        """Union-find closure of the equality constraints over slots."""
        parent = {slot: slot for slot in self.slot_names}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.constraints.equalities:
            if a not in parent or b not in parent:
                missing = a if a not in parent else b
                raise ValueError(f"constraint references unknown slot {missing}")
            parent[find(a)] = find(b)
        return {slot: find(slot) for slot in self.slot_names}

    @cached_property
    def global_slots(self):
        """Representative slot per free coefficient, in first-appearance order."""
        reps, out = {}, []
        for slot in self.slot_names:
            root = self._slot_class[slot]
            if root not in reps:
                reps[root] = len(out)
                out.append(slot)
        return tuple(out)

    @cached_property
    def n_coefficients(self):
        return len(self.global_slots)

    @cached_property
    def coef_maps(self):
        """Per sequence: array of global coefficient ids, intercept first."""
        pos = {self._slot_class[rep]: i for i, rep in enumerate(self.global_slots)}
        maps = []
        for s in self.sequences:
            ids = [pos[self._slot_class[(s.k, INTERCEPT)]]]
            ids.extend(pos[self._slot_class[(s.k, column_name(col))]] for col in s.columns)
            maps.append(np.asarray(ids, dtype=int))
        return tuple(maps)

    @cached_property
    def column_indices(self):
        """Per sequence: tuple of coordinate-index tuples, one per column."""
        return tuple(
            tuple(tuple(self.coord_index[c] for c in col) for col in s.columns)
            for s in self.sequences
        )

    def sequence_for(self, a1, s, a2):
        """Sequence id for an observed (a1, s, a2) path; a2 None if absent."""
        key = (int(a1), bool(s), None if a2 is None else int(a2))
        try:
            return self._sequence_lookup[key]
        except KeyError:
            raise ValueError(f"no treatment sequence matches a1={a1}, s={s}, a2={a2}") from None

    @cached_property
    def _sequence_lookup(self):
        return {(s.a1, s.responder, s.a2): s.k for s in self.sequences}

    def design_matrix(self, k, d):
        """Rows of the sequence-k outcome model at compliance rows ``d``."""
        d = np.atleast_2d(np.asarray(d, dtype=float))
        cols = [np.ones(d.shape[0])]
        for idx in self.column_indices[k - 1]:
            v = d[:, idx[0]].copy()
            for j in idx[1:]:
                v *= d[:, j]
            cols.append(v)
        return np.column_stack(cols)


def sequences_for_edtr(design, l):
    """(responder sequence, non-responder sequence) consistent with EDTR l."""
    if not 1 <= l <= design.L:
        raise ValueError(f"EDTR index {l} out of range 1..{design.L}")
    kr, knr = design.edtr_map[l - 1]
    return design.sequences[kr - 1], design.sequences[knr - 1]


def validate_constraints(design):
    """Identifiability check: every latent-compliance slot must be tied to
    an observed one.

    Returns the list of unidentified ``(k, column_name)`` slots; empty
    means the design satisfies the closure requirement.
    """
    violations = []
    classes = design._slot_class
    for s in design.sequences:
        for col in s.columns:
            if all(c in s.observed for c in col):
                continue
            root = classes[(s.k, column_name(col))]
            identified = False
            for other in design.sequences:
                if (other.k, column_name(col)) not in classes:
                    continue
                if classes[(other.k, column_name(col))] != root:
                    continue
                if all(c in other.observed for c in col):
                    identified = True
                    break
            if not identified:
                violations.append((s.k, column_name(col)))
    return violations


# --- built-in designs -----------------------------------------------------

def build_engage_design(interaction=False):
    """The ENGAGE-style SMART: 3 compliances, 6 sequences, 4 regimes.

    Responders are not re-randomized, so their sequences carry no stage-2
    compliance column at all.  With ``interaction=True`` the non-responder
    models gain a stage-1 x stage-2 product column whose slope is tied
    across the two stage-2 options within a branch.
    """
    d11, d12, d22 = ("d11",), ("d12",), ("d22",)
    cols = {
        1: (d11,),
        2: (d11, d22),
        3: (d11, d22),
        4: (d11, d12),
        5: (d12, d22),
        6: (d12, d22),
    }
    if interaction:
        cols[2] += (("d11", "d22"),)
        cols[3] += (("d11", "d22"),)
        cols[5] += (("d12", "d22"),)
        cols[6] += (("d12", "d22"),)
    sequences = (
        TreatmentSequence(1, +1, True, None, ("d11",), cols[1]),
        TreatmentSequence(2, +1, False, +1, ("d11", "d22"), cols[2]),
        TreatmentSequence(3, +1, False, -1, ("d11",), cols[3]),
        TreatmentSequence(4, -1, True, None, ("d12",), cols[4]),
        TreatmentSequence(5, -1, False, +1, ("d12", "d22"), cols[5]),
        TreatmentSequence(6, -1, False, -1, ("d12",), cols[6]),
    )
    eq = [
        ((4, INTERCEPT), (1, INTERCEPT)),
        ((3, INTERCEPT), (2, INTERCEPT)),
        ((6, INTERCEPT), (5, INTERCEPT)),
        ((4, "d11"), (1, "d11")),
        ((3, "d22"), (2, "d22")),
        ((6, "d22"), (5, "d22")),
    ]
    if interaction:
        eq += [((3, "d11*d22"), (2, "d11*d22")), ((6, "d12*d22"), (5, "d12*d22"))]
    return SmartDesign(
        name="engage",
        coords=("d11", "d12", "d22"),
        sequences=sequences,
        edtr_map=((1, 2), (1, 3), (4, 5), (4, 6)),
        constraints=ConstraintSet(tuple(eq)),
    )


def build_general_design():
    """The general two-stage SMART: both response groups re-randomized.

    Five compliances are modeled (the responder continue-option compliance
    coincides with the stage-1 compliance and is not a separate
    coordinate): d11, d12, d22r, d21nr, d22nr.
    """
    sequences = (
        TreatmentSequence(1, +1, True, +1, ("d11",), (("d11",),)),
        TreatmentSequence(2, +1, True, -1, ("d11", "d22r"), (("d11",), ("d22r",))),
        TreatmentSequence(3, +1, False, +1, ("d11", "d21nr"), (("d11",), ("d21nr",))),
        TreatmentSequence(4, +1, False, -1, ("d11", "d22nr"),
                          (("d11",), ("d21nr",), ("d22nr",))),
        TreatmentSequence(5, -1, True, +1, ("d12",), (("d12",),)),
        TreatmentSequence(6, -1, True, -1, ("d12", "d22r"), (("d12",), ("d22r",))),
        TreatmentSequence(7, -1, False, +1, ("d12", "d21nr"), (("d12",), ("d21nr",))),
        TreatmentSequence(8, -1, False, -1, ("d12", "d22nr"),
                          (("d12",), ("d21nr",), ("d22nr",))),
    )
    eq = (
        ((4, INTERCEPT), (3, INTERCEPT)),
        ((8, INTERCEPT), (7, INTERCEPT)),
        ((4, "d11"), (3, "d11")),
        ((8, "d12"), (7, "d12")),
        ((4, "d21nr"), (3, "d21nr")),
        ((8, "d21nr"), (7, "d21nr")),
    )
    return SmartDesign(
        name="general",
        coords=("d11", "d12", "d22r", "d21nr", "d22nr"),
        sequences=sequences,
        edtr_map=((1, 3), (1, 4), (2, 3), (2, 4), (5, 7), (5, 8), (6, 7), (6, 8)),
        constraints=ConstraintSet(eq),
    )


# --- text serialization ----------------------------------------------------

def design_to_config(design):
    """Render the design as INI-style text (round-trips via design_from_config)."""
    cp = configparser.ConfigParser()
    cp["design"] = {
        "name": design.name,
        "coords": ", ".join(design.coords),
        "response_columns": ", ".join(design.response_columns),
    }
    for s in design.sequences:
        cp[f"sequence {s.k}"] = {
            "a1": f"{s.a1:+d}",
            "responder": "yes" if s.responder else "no",
            "a2": "none" if s.a2 is None else f"{s.a2:+d}",
            "observed": ", ".join(s.observed),
            "columns": ", ".join(column_name(c) for c in s.columns),
        }
    cp["edtrs"] = {str(l): f"{kr}, {knr}" for l, (kr, knr) in enumerate(design.edtr_map, 1)}
    cp["constraints"] = {
        str(i): f"{a[0]}:{a[1]} = {b[0]}:{b[1]}"
        for i, (a, b) in enumerate(design.constraints.equalities, 1)
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _parse_list(raw):
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def design_from_config(text):
    """Parse a design from INI-style text produced by design_to_config
    (or written by hand for a non-built-in SMART)."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    coords = _parse_list(cp["design"]["coords"])
    sequences = []
    k = 1
    while cp.has_section(f"sequence {k}"):
        sec = cp[f"sequence {k}"]
        a2_raw = sec.get("a2", "none").strip().lower()
        columns = tuple(tuple(c.split("*")) for c in _parse_list(sec["columns"]))
        sequences.append(
            TreatmentSequence(
                k=k,
                a1=int(sec["a1"]),
                responder=sec.getboolean("responder"),
                a2=None if a2_raw == "none" else int(sec["a2"]),
                observed=_parse_list(sec.get("observed", "")),
                columns=columns,
            )
        )
        k += 1
    if not sequences:
        raise ValueError("design config declares no sequences")
    edtrs = []
    for l in range(1, len(cp["edtrs"]) + 1):
        kr, knr = _parse_list(cp["edtrs"][str(l)])
        edtrs.append((int(kr), int(knr)))
    eqs = []
    if cp.has_section("constraints"):
        for key in cp["constraints"]:
            lhs, rhs = cp["constraints"][key].split("=")
            ka, ca = lhs.strip().split(":")
            kb, cb = rhs.strip().split(":")
            eqs.append(((int(ka), ca.strip()), (int(kb), cb.strip())))
    return SmartDesign(
        name=cp["design"].get("name", "custom"),
        coords=coords,
        sequences=tuple(sequences),
        edtr_map=tuple(edtrs),
        constraints=ConstraintSet(tuple(eqs)),
        response_columns=_parse_list(cp["design"].get("response_columns", "d11, d12")),
    )
