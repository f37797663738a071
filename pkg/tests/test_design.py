import dataclasses

import numpy as np
import pytest

from smartstrata.design import (
    ComplianceClass,
    ConstraintSet,
    SmartDesign,
    TreatmentSequence,
    build_engage_design,
    build_general_design,
    design_from_config,
    design_to_config,
    parse_class_spec,
    quartile_classes,
    sequences_for_edtr,
    validate_constraints,
)


@pytest.fixture(scope="module")
def engage():
    return build_engage_design()


@pytest.fixture(scope="module")
def general():
    return build_general_design()


def test_engage_dimensions(engage):
    assert (engage.m, engage.K, engage.L) == (3, 6, 4)


def test_engage_sequence_1_mask(engage):
    # stage-1 compliance under the assigned arm observed, the rest latent
    assert engage.observed_mask(1).tolist() == [True, False, False]
    assert engage.observed_mask(2).tolist() == [True, False, True]
    assert engage.observed_mask(4).tolist() == [False, True, False]


def test_engage_model_columns(engage):
    cols = {s.k: [c for c in s.columns] for s in engage.sequences}
    assert cols[1] == [("d11",)]
    assert cols[4] == [("d11",), ("d12",)]
    assert cols[2] == cols[3] == [("d11",), ("d22",)]
    assert cols[5] == cols[6] == [("d12",), ("d22",)]


def test_engage_constraints_validate(engage):
    assert validate_constraints(engage) == []


def test_engage_responders_have_no_stage2_column(engage):
    for k in (1, 4):
        assert all("d22" not in col for col in engage.sequences[k - 1].columns)


def test_general_dimensions(general):
    assert (general.m, general.K, general.L) == (5, 8, 8)
    assert validate_constraints(general) == []


def test_general_sequence_masks(general):
    seq4 = general.sequences[3]
    latent_in_model = [
        c for col in seq4.columns for c in col if c not in seq4.observed
    ]
    assert latent_in_model == ["d21nr"]
    assert set(general.sequences[1].observed) == {"d11", "d22r"}


def test_sequences_for_edtr_engage(engage):
    r, nr = sequences_for_edtr(engage, 1)
    assert (r.k, nr.k) == (1, 2)
    r, nr = sequences_for_edtr(engage, 4)
    assert (r.k, nr.k) == (4, 6)
    for l in range(1, 5):
        r, nr = sequences_for_edtr(engage, l)
        assert r.a1 == nr.a1
        assert r.responder and not nr.responder


def test_sequences_for_edtr_general(general):
    r, nr = sequences_for_edtr(general, 8)
    assert (r.k, nr.k) == (6, 8)
    assert r.a2 == -1 and nr.a2 == -1


def test_sequences_for_edtr_out_of_range(engage):
    with pytest.raises(ValueError):
        sequences_for_edtr(engage, 0)
    with pytest.raises(ValueError):
        sequences_for_edtr(engage, 5)


def test_every_sequence_in_some_edtr(engage, general):
    for design in (engage, general):
        covered = {k for pair in design.edtr_map for k in pair}
        assert covered == {s.k for s in design.sequences}


def test_validate_detects_removed_constraint(engage):
    eq = tuple(e for e in engage.constraints.equalities if e != ((4, "d11"), (1, "d11")))
    broken = dataclasses.replace(engage, constraints=ConstraintSet(eq))
    assert validate_constraints(broken) == [(4, "d11")]


def test_interaction_variant():
    design = build_engage_design(interaction=True)
    assert design.has_interactions
    assert validate_constraints(design) == []
    assert ("d11", "d22") in design.sequences[1].columns
    assert ("d12", "d22") in design.sequences[5].columns
    # tied interaction slopes share a global coefficient
    g2 = design.coef_maps[1][-1]
    g3 = design.coef_maps[2][-1]
    assert g2 == g3


def test_product_column_with_two_latent_coordinates_rejected():
    with pytest.raises(ValueError, match="latent"):
        SmartDesign(
            name="bad",
            coords=("d11", "d12", "d22"),
            sequences=(
                TreatmentSequence(1, +1, True, None, ("d11",), (("d12", "d22"),)),
                TreatmentSequence(2, +1, False, +1, ("d11",), (("d11",),)),
            ),
            edtr_map=((1, 2),),
            constraints=ConstraintSet(),
        )


def test_design_matrix_interaction_row():
    design = build_engage_design(interaction=True)
    x = design.design_matrix(2, np.array([[0.5, 0.9, 0.4]]))
    np.testing.assert_allclose(x[0], [1.0, 0.5, 0.4, 0.2])


def test_config_round_trip(engage, general):
    for design in (engage, general, build_engage_design(interaction=True)):
        text = design_to_config(design)
        assert design_from_config(text) == design


def test_sequence_lookup(engage):
    assert engage.sequence_for(1, 1, None) == 1
    assert engage.sequence_for(-1, 0, -1) == 6
    with pytest.raises(ValueError):
        engage.sequence_for(1, 1, 1)  # ENGAGE responders are not re-randomized


def test_compliance_classes():
    classes = quartile_classes(3)
    assert [c.name for c in classes] == ["25%-50%", "50%-75%", "75%-100%", "100%"]
    np.testing.assert_allclose(classes[0].representative, [0.375] * 3)
    np.testing.assert_allclose(classes[-1].representative, [1.0] * 3)
    with pytest.raises(ValueError):
        ComplianceClass("bad", (0.5,), (0.2,))


def test_parse_class_spec():
    classes = parse_class_spec("0.25-0.5,1.0", 2)
    assert len(classes) == 2
    np.testing.assert_allclose(classes[0].representative, [0.375, 0.375])
    np.testing.assert_allclose(classes[1].representative, [1.0, 1.0])
