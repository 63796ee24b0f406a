import math
import unittest

import numpy as np
import pytest

from src.errors import ConfigurationError, RecordValidationError
from src.geo.kinematics import (
    CV,
    KNOTS_TO_MS,
    Posit,
    ProjectionModel,
    RawRecord,
    cog_to_psi,
    estimate_turn_rate,
    from_utm,
    local_residual,
    posits_from_records,
    project,
    psi_to_cog,
    to_local_frame,
    to_utm,
    utm_zone_for,
    wrap_course,
)


class TestUtm(unittest.TestCase):

    def test_central_meridian_easting(self):
        # zone 15 is centered on 93 W
        for lat in (0.0, 12.5, 30.0, 60.0):
            x, _, zone = to_utm(lat, -93.0)
            self.assertEqual(zone, '15N')
            self.assertAlmostEqual(x, 500000.0, places=6)

    def test_zone_of_example_report(self):
        _, _, zone = to_utm(28.033870, -96.974543)
        self.assertEqual(zone, '14N')
        self.assertEqual(utm_zone_for(-33.9, 18.4), '34S')

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for lat, lon in zip(rng.uniform(-80, 80, 200), rng.uniform(-179, 179, 200)):
            x, y, zone = to_utm(lat, lon)
            back_lat, back_lon = from_utm(x, y, zone)
            self.assertAlmostEqual(back_lat, lat, delta=1e-6)
            self.assertAlmostEqual(back_lon, lon, delta=1e-6)

    def test_forced_zone_round_trip(self):
        x, y, zone = to_utm(28.0, -96.5, zone='15N')
        self.assertEqual(zone, '15N')
        lat, lon = from_utm(x, y, zone)
        self.assertAlmostEqual(lat, 28.0, delta=1e-6)
        self.assertAlmostEqual(lon, -96.5, delta=1e-6)

    def test_polar_latitude_rejected(self):
        with self.assertRaises(RecordValidationError):
            to_utm(84.5, 10.0)
        with self.assertRaises(RecordValidationError):
            to_utm(-85.0, 10.0)


class TestAngles(unittest.TestCase):

    def test_wrap_course(self):
        self.assertEqual(wrap_course(0.0), 0.0)
        self.assertAlmostEqual(wrap_course(math.radians(340.0)), math.radians(-20.0))
        self.assertEqual(wrap_course(math.pi), math.pi)
        self.assertAlmostEqual(wrap_course(-math.pi), math.pi)

    def test_wrap_course_matches_atan2(self):
        rng = np.random.default_rng(1)
        for a in rng.uniform(-50.0, 50.0, 1000):
            w = wrap_course(a)
            self.assertTrue(-math.pi < w <= math.pi)
            self.assertAlmostEqual(w, math.atan2(math.sin(a), math.cos(a)), places=9)

    def test_course_conventions(self):
        self.assertAlmostEqual(cog_to_psi(90.0), 0.0)
        self.assertAlmostEqual(cog_to_psi(0.0), math.pi / 2)
        self.assertAlmostEqual(cog_to_psi(180.0), -math.pi / 2)
        for cog in (56.1, 179.9, 270.0, 359.9):
            self.assertAlmostEqual(psi_to_cog(cog_to_psi(cog)) % 360.0, cog, places=9)

    def test_local_frame(self):
        self.assertEqual(to_local_frame((3.0, 4.0), 0.0), (3.0, 4.0))
        e_par, e_perp = to_local_frame((0.0, 1.0), math.pi / 2)
        self.assertAlmostEqual(e_par, 1.0)
        self.assertAlmostEqual(e_perp, 0.0)

    def test_local_frame_preserves_length(self):
        rng = np.random.default_rng(2)
        for dx, dy, psi in rng.normal(size=(100, 3)) * [100.0, 100.0, 3.0]:
            e_par, e_perp = to_local_frame((dx, dy), psi)
            self.assertAlmostEqual(math.hypot(e_par, e_perp), math.hypot(dx, dy), places=9)


class TestProjection(unittest.TestCase):

    def setUp(self):
        self.p = Posit(t=0.0, x=0.0, y=0.0, v=10.0, psi=0.0)

    def test_constant_velocity(self):
        q = project(self.p, 60.0, CV)
        self.assertEqual((q.t, q.x, q.y, q.v, q.psi), (60.0, 600.0, 0.0, 10.0, 0.0))

    def test_zero_gap_is_identity(self):
        for model in (CV, ProjectionModel.ctrv(0.01), ProjectionModel.tangential(0.2)):
            self.assertEqual(project(self.p, 0.0, model), self.p)

    def test_quarter_turn(self):
        dt = 100.0
        omega = (math.pi / 2) / dt
        q = project(self.p, dt, ProjectionModel.ctrv(omega))
        self.assertAlmostEqual(q.x, 10.0 / omega, places=9)
        self.assertAlmostEqual(q.y, 10.0 / omega, places=9)
        self.assertAlmostEqual(q.psi, math.pi / 2)

    def test_small_turn_rate_matches_cv(self):
        p = Posit(0.0, 100.0, -50.0, 7.0, 0.7)
        for omega in (1e-12, -1e-12):
            a = project(p, 1800.0, ProjectionModel.ctrv(omega))
            b = project(p, 1800.0, CV)
            self.assertAlmostEqual(a.x, b.x, delta=1e-6)
            self.assertAlmostEqual(a.y, b.y, delta=1e-6)

    def test_backward_projection_restores(self):
        p = Posit(500.0, 1000.0, 2000.0, 6.0, -2.1)
        for model in (CV, ProjectionModel.ctrv(0.001)):
            q = project(project(p, 900.0, model), -900.0, model)
            self.assertAlmostEqual(q.x, p.x, delta=1e-6)
            self.assertAlmostEqual(q.y, p.y, delta=1e-6)
            self.assertAlmostEqual(q.t, p.t)

    def test_tangential_acceleration_stops_at_zero(self):
        q = project(Posit(0.0, 0.0, 0.0, 2.0, 0.0), 100.0, ProjectionModel.tangential(-0.1))
        # stops after 20 s having covered 20 m
        self.assertAlmostEqual(q.x, 20.0)
        self.assertEqual(q.v, 0.0)

    def test_non_finite_model_rejected(self):
        with pytest.raises(ConfigurationError):
            ProjectionModel.ctrv(float('nan'))


class TestResiduals(unittest.TestCase):

    def test_local_residual_of_exact_projection(self):
        p = Posit(0.0, 0.0, 0.0, 5.0, 0.3)
        q = project(p, 600.0)
        residual = local_residual(q, project(p, 600.0), p.psi)
        self.assertAlmostEqual(residual.e_par, 0.0)
        self.assertAlmostEqual(residual.e_perp, 0.0)
        self.assertAlmostEqual(residual.delta_c, 0.0)

    def test_turn_rate_estimate(self):
        a = Posit(0.0, 0.0, 0.0, 5.0, 0.0)
        b = Posit(100.0, 0.0, 0.0, 5.0, 0.1)
        self.assertAlmostEqual(estimate_turn_rate(a, b), 0.001)
        self.assertIsNone(estimate_turn_rate(None, b))
        self.assertIsNone(estimate_turn_rate(b, b))


class TestRecords:

    def test_example_row_validates(self):
        record = RawRecord(0, 338214987, 0.0, 28.033870, -96.974543, 6.5, 56.1)
        record.validate()

    @pytest.mark.parametrize('field,value', [
        ('lat', 95.0),
        ('lon', -181.0),
        ('sog', -0.1),
        ('cog', 360.0),
        ('time', float('inf')),
    ])
    def test_out_of_bounds_rejected(self, field, value):
        fields = dict(point_id=1, track_id=None, time=0.0, lat=10.0, lon=10.0, sog=1.0, cog=10.0)
        fields[field] = value
        with pytest.raises(RecordValidationError):
            RawRecord(**fields).validate()

    def test_posits_sorted_in_anchor_zone(self):
        records = [
            RawRecord(2, None, 60.0, 28.0, -96.9, 10.0, 90.0),
            RawRecord(1, None, 60.0, 28.1, -95.5, 0.0, 0.0),
            RawRecord(0, None, 0.0, 28.2, -95.9, 5.0, 180.0),
        ]
        posits = posits_from_records(records)
        assert [p.source_id for p in posits] == [0, 1, 2]
        assert {p.zone for p in posits} == {'15N'}
        assert posits[2].v == pytest.approx(10.0 * KNOTS_TO_MS)
        assert posits[2].psi == pytest.approx(0.0)

    def test_polar_record_skipped(self):
        records = [
            RawRecord(0, None, 0.0, 28.0, -95.0, 5.0, 0.0),
            RawRecord(1, None, 10.0, 88.0, -95.0, 5.0, 0.0),
        ]
        assert [p.source_id for p in posits_from_records(records)] == [0]

    def test_empty(self):
        assert posits_from_records([]) == []
