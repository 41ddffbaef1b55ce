from dataclasses import replace

import pytest

from stefan_homog.config import SourceSpec, parse_config
from stefan_homog.convex import ConvexPotential
from stefan_homog.fields import Constitutive, OscillatoryField
from stefan_homog.hypotheses import validate_hypotheses

CHECK_NAMES = {"potential_strict_convexity", "potential_growth", "potential_coercivity", "flux_monotone",
               "flux_coercivity", "flux_holder", "source_growth", "ellipticity",
               "kirchhoff_density"}


@pytest.mark.parametrize("name", ["stefan", "heat", "laminate2d", "quasiperiodic", "nonlinear"])
def test_sample_configs_satisfy_all_hypotheses(configs_dir, name):
    rep = validate_hypotheses(parse_config(configs_dir / f"{name}.json"))
    assert rep.passed, [c.as_dict() for c in rep.checks if not c.passed]
    assert {c.name for c in rep.checks} == CHECK_NAMES


def test_porous_medium_flux_degenerates(configs_dir):
    rep = validate_hypotheses(parse_config(configs_dir / "pme.json"))
    assert not rep.passed
    bad = rep["flux_coercivity"]
    assert not bad.passed and bad.witness["u"] == pytest.approx(0.0)
    assert not rep["flux_holder"].passed
    assert rep["potential_growth"].passed


def test_absolute_value_potential_is_not_strictly_convex(stefan_spec):
    pot = ConvexPotential("tabulated", breakpoints=(-1, 0, 1), values=(1, 0, 1), curvature=0.0)
    rep = validate_hypotheses(replace(stefan_spec, potential=pot))
    check = rep["potential_strict_convexity"]
    assert not check.passed and check.witness


def test_sublinear_source_passes_and_linear_fails(stefan_spec):
    osc = OscillatoryField.constant_field(1.0)
    ok = replace(stefan_spec, source=SourceSpec(osc, Constitutive("holder", 0.5)))
    assert validate_hypotheses(ok)["source_growth"].passed
    bad = replace(stefan_spec, source=SourceSpec(osc, Constitutive("identity")))
    assert not validate_hypotheses(bad)["source_growth"].passed


def test_saturating_source_absorbed(stefan_spec):
    src = SourceSpec(OscillatoryField.constant_field(2.0), Constitutive("saturating"), h_f=0.1)
    assert validate_hypotheses(replace(stefan_spec, source=src))["source_growth"].passed


def test_report_serializes(stefan_spec):
    d = validate_hypotheses(stefan_spec).as_dict()
    assert d["passed"] and len(d["checks"]) == len(CHECK_NAMES)
    with pytest.raises(KeyError):
        validate_hypotheses(stefan_spec)["no_such_check"]
