"""Declaring a SMART that is not one of the built-ins.

Designs are plain text: named sequences with observed-compliance masks,
outcome-model columns, the regime pairing, and the coefficient equality
constraints.  The identifiability check reports latent coefficient
slots that no constraint ties back to a sequence observing that
compliance; the walkthrough below starts from a broken two-arm design
and repairs it.
"""

from smartstrata.design import (
    build_engage_design,
    design_from_config,
    design_to_config,
    validate_constraints,
)

# Two-arm single-stage trial with partial compliance.  Control-arm
# subjects never take the treatment, so the treatment-compliance slope in
# their outcome model is latent: without a cross-arm homogeneity tie it
# cannot be identified.
TWO_ARM = """
[design]
name = two-arm
coords = dtrt, dctl
response_columns = dtrt, dctl

[sequence 1]
a1 = +1
responder = yes
a2 = none
observed = dtrt
columns = dtrt

[sequence 2]
a1 = +1
responder = no
a2 = none
observed = dtrt
columns = dtrt

[sequence 3]
a1 = -1
responder = yes
a2 = none
observed = dctl
columns = dtrt, dctl

[sequence 4]
a1 = -1
responder = no
a2 = none
observed = dctl
columns = dtrt, dctl

[edtrs]
1 = 1, 2
2 = 3, 4

[constraints]
1 = 2:intercept = 1:intercept
2 = 2:dtrt = 1:dtrt
3 = 4:intercept = 3:intercept
4 = 4:dtrt = 3:dtrt
"""

design = design_from_config(TWO_ARM)
print(f"parsed design {design.name!r}: m={design.m}, K={design.K}, L={design.L}, "
      f"{design.n_coefficients} free coefficients")
print("identifiability:", validate_constraints(design))
print("-> dtrt is latent on the control arm and only tied within that arm;")
print("   add a cross-arm homogeneity tie to anchor it where it is observed\n")

FIXED = TWO_ARM.replace(
    "4 = 4:dtrt = 3:dtrt\n",
    "4 = 4:dtrt = 3:dtrt\n5 = 3:dtrt = 1:dtrt\n",
)
fixed = design_from_config(FIXED)
violations = validate_constraints(fixed)
print(f"after adding '3:dtrt = 1:dtrt': "
      f"{'ok' if not violations else violations}; "
      f"{fixed.n_coefficients} free coefficients remain")

# built-ins round-trip through the same format
engage = build_engage_design()
assert design_from_config(design_to_config(engage)) == engage
print("\nthe built-in designs serialize and parse back identically;"
      " engage text below\n")
print(design_to_config(engage))
