"""
Cross-section model: geometry helpers, validation, derived models and the
JSON model file.
"""

import json

import pytest

from tidecal_core.dike_model import (
    DikeModel, Sensor, SoilZone, clip_polygon_x, default_model, is_simple_polygon, load_model,
    model_from_dict, model_to_dict, points_in_polygon, polygon_area, strip_model,
)
from tidecal_core.errors import InvalidParameter, ModelConfigError

SQUARE = ((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0))


class TestGeometry:
    def test_signed_area(self):
        assert polygon_area(SQUARE) == pytest.approx(100.0)
        assert polygon_area(SQUARE[::-1]) == pytest.approx(-100.0)

    def test_bow_tie_is_not_simple(self):
        assert not is_simple_polygon(((0, 0), (10, 10), (10, 0), (0, 10)))
        assert is_simple_polygon(SQUARE)

    def test_points_on_edges_count_as_inside(self):
        inside = points_in_polygon([(5.0, 5.0), (10.0, 5.0), (11.0, 5.0)], SQUARE, tol=1e-9)
        assert list(inside) == [True, True, False]

    def test_clip_adds_cut_edge(self):
        poly, tags = clip_polygon_x(SQUARE, ["wall", "sea", "wall", "land"], 4.0, cut_tag="land")
        assert polygon_area(poly) == pytest.approx(40.0)
        assert max(x for x, _ in poly) == pytest.approx(4.0)
        assert len(poly) == len(tags) == 4
        assert tags[1] == "land"


class TestDikeModel:
    """Validation happens when the model is built."""

    def test_default_section(self):
        model = default_model()
        assert [s.id for s in model.sensors] == ["E4", "E3", "G2"]
        assert model.diffusivities() == pytest.approx([1.0])
        assert model.bounds() == (-30.0, 90.0, -8.0, 8.3)

    def test_boundary_count_must_match_edges(self):
        zone = SoilZone(SQUARE, 1e-3)
        with pytest.raises(ModelConfigError):
            DikeModel(SQUARE, (zone,), ("wall", "sea", "wall"))

    def test_unknown_boundary_tag(self):
        zone = SoilZone(SQUARE, 1e-3)
        with pytest.raises(ModelConfigError):
            DikeModel(SQUARE, (zone,), ("wall", "river", "wall", "land"))

    def test_sensor_outside_section(self):
        zone = SoilZone(SQUARE, 1e-3)
        with pytest.raises(ModelConfigError):
            DikeModel(SQUARE, (zone,), ("wall", "sea", "wall", "land"), sensors=(Sensor("X", 20.0, 5.0),))

    def test_duplicate_sensor_ids(self):
        zone = SoilZone(SQUARE, 1e-3)
        with pytest.raises(ModelConfigError):
            DikeModel(SQUARE, (zone,), ("wall", "sea", "wall", "land"),
                      sensors=(Sensor("X", 1.0, 1.0), Sensor("X", 2.0, 2.0)))

    def test_non_positive_d_mu(self):
        with pytest.raises(InvalidParameter):
            SoilZone(SQUARE, 0.0)

    def test_sensor_lookup(self):
        model = default_model()
        assert model.sensor("G2").x == 62.0
        with pytest.raises(KeyError):
            model.sensor("nope")

    def test_diffusivity_is_viscosity_scaled(self):
        summer = default_model(d_mu=1e-3)
        winter = summer.with_temperature(0.0)
        ratio = summer.diffusivities()[0] / winter.diffusivities()[0]
        assert ratio == pytest.approx(1.797 / 1.004, rel=1e-9)
        assert winter.zones[0].d_mu == summer.zones[0].d_mu

    def test_with_diffusivity_round_trips(self):
        model = default_model().with_diffusivity(3.5)
        assert model.diffusivities() == pytest.approx([3.5])

    def test_with_d_mu_count_mismatch(self):
        with pytest.raises(InvalidParameter):
            default_model().with_d_mu([1e-3, 2e-3])

    def test_strip_model_sea_on_the_right(self):
        strip = strip_model(length=60.0, probes=(20.0,))
        sea_edges = [(a, b) for a, b, tag in strip.edges() if tag == "sea"]
        assert sea_edges == [((60.0, -12.0), (60.0, -2.0))]
        assert strip.sensors[0].id == "P20"


class TestModelFile:
    """pydantic-validated JSON documents."""

    def test_round_trip(self):
        model = default_model(d_mu=2e-3)
        again = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
        assert again.polygon == model.polygon
        assert again.boundaries == model.boundaries
        assert [z.d_mu for z in again.zones] == [z.d_mu for z in model.zones]
        assert again.viscosity == pytest.approx(model.viscosity)

    def test_load_from_disk(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps(model_to_dict(default_model())))
        assert len(load_model(path).sensors) == 3

    def test_unknown_key_refused(self):
        doc = model_to_dict(default_model())
        doc["colour"] = "green"
        with pytest.raises(ModelConfigError):
            model_from_dict(doc)

    def test_missing_boundary_edge(self):
        doc = model_to_dict(default_model())
        del doc["boundaries"]["3"]
        with pytest.raises(ModelConfigError):
            model_from_dict(doc)

    def test_invalid_zone_becomes_config_error(self):
        doc = model_to_dict(default_model())
        doc["zones"][0]["d_mu_Pa_m2"] = -1.0
        with pytest.raises(ModelConfigError):
            model_from_dict(doc)

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ModelConfigError):
            load_model(path)
