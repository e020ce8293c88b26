import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import multivariate_t

from vgmtrack.geometry import (
    Detection,
    Extent,
    KinematicState,
    SensorMount,
    VehicleState,
    aspect_angle,
    reduce_measurement,
)
from vgmtrack.radar_model import (
    ClutterModel,
    OutOfFovError,
    RadarModel,
    ZeroClutterDensityError,
    balance_by_aspect,
    build_training_set,
    clutter_intensity,
    detection_probability,
    likelihood_ratio,
    log_clutter_reduced,
    read_corpus,
    single_object_likelihood,
    write_corpus,
)
from vgmtrack.records import EgoState, Scan, TruthFrame
from vgmtrack.sim import ReflectionTemplate, SensorNoise, SimConfig, default_mounts, figure_eight, simulate
from vgmtrack.vgm import StudentMixture, predictive
from vgmtrack.vgm import io as vgm_io

MOUNT = SensorMount(0.0, 0.0, 0.0)


def vs(x, y, phi=0.0, v=0.0, omega=0.0, a=1.8, b=4.6):
    return VehicleState(KinematicState(x, y, phi, v, omega), Extent(a, b))


def random_mixture(rng, c=5, dof_range=(3, 30)):
    locs = np.column_stack([rng.uniform(-0.3, 0.8, c), rng.uniform(-0.5, 0.5, c), rng.normal(0, 0.3, c), rng.uniform(-np.pi, np.pi, c)])
    precs = []
    for _ in range(c):
        A = rng.normal(size=(4, 4)) * 0.3
        precs.append(np.linalg.inv(A @ A.T + np.diag([0.01, 0.01, 0.05, 0.5])))
    return StudentMixture(rng.dirichlet(np.ones(c)), locs, np.array(precs), rng.uniform(*dof_range, c))


def block_model():
    # single component with the aspect independent of z'
    cov = np.zeros((4, 4))
    cov[:3, :3] = [[0.02, 0.004, 0.0], [0.004, 0.03, 0.002], [0.0, 0.002, 0.1]]
    cov[3, 3] = 1.5
    mix = StudentMixture(np.array([1.0]), np.array([[0.3, 0.1, 0.05, 0.2]]), np.linalg.inv(cov)[None], np.array([6.0]))
    return mix, cov


def block_conditional_logpdf(zp, aspect, mix, cov):
    """Closed-form Student-t conditional of the block model, evaluated with scipy."""
    nu = mix.dofs[0]
    mu = mix.locs[0]
    maha = (aspect - mu[3]) ** 2 / cov[3, 3]
    shape = cov[:3, :3] * (nu + maha) / (nu + 1)
    return multivariate_t(mu[:3], shape, df=nu + 1).logpdf(zp)


class TestRadarModel:
    def test_kernel_matches_reference_conditional(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            model = RadarModel(random_mixture(rng))
            xi = np.column_stack([rng.uniform(3, 20, 6), rng.uniform(-10, 10, 6), rng.uniform(-np.pi, np.pi, 6), rng.uniform(-5, 10, 6), rng.uniform(-0.5, 0.5, 6)])
            ab = np.column_stack([rng.uniform(1.5, 2.3, 6), rng.uniform(3, 6, 6)])
            dets = np.column_stack([rng.uniform(3, 25, 4), rng.uniform(-1, 1, 4), rng.uniform(-8, 8, 4)])
            got = model.log_gprime(xi, ab, dets)[:, 0, :]
            for i in range(6):
                s = VehicleState.from_array(np.concatenate([xi[i], ab[i]]))
                cond = model.conditional(aspect_angle(s))
                for j, z in enumerate(dets):
                    zp = reduce_measurement(Detection(*z), s)
                    ref = cond.logpdf([[zp.zx, zp.zy, zp.zd]])[0]
                    assert got[i, j] == pytest.approx(ref, rel=1e-10, abs=1e-10)

    def test_kernel_matches_closed_form(self):
        mix, cov = block_model()
        model = RadarModel(mix, wrap=False)
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = vs(rng.uniform(4, 20), rng.uniform(-8, 8), rng.uniform(-np.pi, np.pi), rng.uniform(0, 10), rng.uniform(-0.3, 0.3))
            z = Detection(rng.uniform(3, 25), rng.uniform(-1.2, 1.2), rng.uniform(-5, 5))
            zp = reduce_measurement(z, s)
            ref = block_conditional_logpdf([zp.zx, zp.zy, zp.zd], aspect_angle(s), mix, cov)
            got = model.log_gprime(s.as_array()[None, :5], np.array([[1.8, 4.6]]), np.array([[z.d, z.alpha, z.vd]]))[0, 0, 0]
            assert got == pytest.approx(ref, rel=1e-12)

    def test_requires_4d(self):
        mix = StudentMixture(np.array([1.0]), np.zeros((1, 3)), np.eye(3)[None], np.array([5.0]))
        with pytest.raises(ValueError):
            RadarModel(mix)

    def test_wrap_uses_nearer_representative(self):
        loc = np.array([[0.0, 0.0, 0.0, 3.0]])
        mix = StudentMixture(np.array([1.0]), loc, np.diag([10.0, 10.0, 10.0, 4.0])[None], np.array([8.0]))
        model = RadarModel(mix)
        assert model.effective_aspect(-3.0) == pytest.approx(-3.0 + 2 * np.pi)
        assert model.effective_aspect(2.5) == 2.5


class TestSingleObjectLikelihood:
    def test_empty(self):
        model = RadarModel(block_model()[0], lambda_t=5.0)
        assert single_object_likelihood(model, [], vs(10, 0)) == -5.0

    def test_closed_form(self):
        mix, cov = block_model()
        model = RadarModel(mix, lambda_t=4.0, wrap=False)
        s = vs(12.0, 2.0, 0.7, 6.0, 0.1)
        Z = [Detection(13.0, 0.25, 3.0), Detection(11.5, 0.1, 4.5)]
        ref = -4.0
        for z in Z:
            zp = reduce_measurement(z, s)
            ref += np.log(4.0) + block_conditional_logpdf([zp.zx, zp.zy, zp.zd], aspect_angle(s), mix, cov) + np.log(z.d / (1.8 * 4.6))
        assert single_object_likelihood(model, Z, s) == pytest.approx(ref, rel=1e-12)

    def test_mode_beats_tail_and_monotone(self):
        mix, _ = block_model()
        model = RadarModel(mix, wrap=False)
        s = vs(15.0, 0.0, 0.0)
        # place a detection at the mode, then move it outward along OC x
        values = []
        for shift in np.linspace(0, 0.5, 6):
            ox, oy = (0.3 + shift) * 4.6, 0.1 * 1.8
            d, alpha = np.hypot(15 + ox, oy), np.arctan2(oy, 15 + ox)
            values.append(single_object_likelihood(model, [Detection(d, alpha, 0.05)], s) - np.log(d))
        assert np.all(np.diff(values) < 0)


class TestClutter:
    def test_intensity_integrates_to_lambda(self):
        m = SensorMount(0.0, 0.0, 0.0)
        cl = ClutterModel.for_mount(m, lambda_c=30.0)
        d = np.linspace(0, m.max_range, 201)
        al = np.linspace(-m.opening_angle / 2, m.opening_angle / 2, 81)
        v = np.linspace(cl.doppler_min, cl.doppler_max, 16001)
        spatial = trapezoid(trapezoid(d[:, None] / cl.area * np.ones_like(al)[None, :], al, axis=1), d)
        doppler = trapezoid(np.exp(cl.log_doppler(v)), v)
        total = cl.lambda_c * spatial * doppler
        assert total == pytest.approx(30.0, rel=0.01)
        # point evaluation agrees with the factorized density
        z = Detection(10.0, 0.3, 1.0)
        assert clutter_intensity(cl, z) == pytest.approx(30.0 * 10.0 / cl.area * np.exp(cl.log_doppler(1.0)))

    def test_stationary_peak(self):
        cl = ClutterModel(area=100.0)
        assert cl.log_doppler(0.0) > cl.log_doppler(10.0)
        assert np.exp(cl.log_doppler(0.0)) > (1 - cl.gauss_weight) / (cl.doppler_max - cl.doppler_min)

    def test_out_of_fov(self):
        with pytest.raises(OutOfFovError):
            clutter_intensity(ClutterModel.for_mount(MOUNT), Detection(50.0, 0.0, 0.0))

    def test_zero_density(self):
        cl = ClutterModel(area=100.0, gauss_weight=0.0)
        with pytest.raises(ZeroClutterDensityError):
            log_clutter_reduced(cl, np.array([1.8, 4.6]), np.array([60.0]))

    def test_length_doubling(self):
        cl = ClutterModel(area=100.0)
        a = log_clutter_reduced(cl, np.array([1.8, 4.6]), np.array([0.5]))
        b = log_clutter_reduced(cl, np.array([1.8, 9.2]), np.array([0.5]))
        assert (b - a)[0] == pytest.approx(np.log(2.0))

    def test_default_rate(self):
        assert ClutterModel(area=1.0).lambda_c == 30.0


class TestLikelihoodRatio:
    def test_empty(self):
        model = RadarModel(block_model()[0], lambda_t=5.0)
        cl = ClutterModel.for_mount(MOUNT)
        assert likelihood_ratio(model, cl, [], vs(10, 0)) == -5.0
        assert likelihood_ratio(model, cl, [], vs(-3, 7, 2.0)) == -5.0

    def test_equals_polar_ratio(self):
        rng = np.random.default_rng(2)
        model = RadarModel(random_mixture(rng))
        cl = ClutterModel.for_mount(MOUNT)
        s = vs(10.0, 1.0, 2.5, 4.0, 0.1)
        Z = [Detection(9.0, 0.1, -3.0), Detection(10.5, 0.05, -2.0), Detection(11.0, 0.2, 0.0)]
        polar = single_object_likelihood(model, Z, s) - sum(np.log(clutter_intensity(cl, z)) for z in Z)
        assert likelihood_ratio(model, cl, Z, s) == pytest.approx(polar, rel=1e-12)


class TestDetectionProbability:
    def test_values(self):
        m = SensorMount(0.0, 0.0, 0.0, max_range=40.0)
        # box centers placed by shifting the rear axle back by the center offset
        def at(x, y):
            return vs(x - 0.27 * 4.6, y)

        assert detection_probability(at(20.0, 0.0), [m])[0] == pytest.approx(0.8)
        assert detection_probability(at(-20.0, 0.0), [m])[0] == 0.0
        assert detection_probability(at(50.0, 0.0), [m])[0] == 0.0
        # taper band is the outer 10 % of range: midpoint at 38 m
        assert detection_probability(at(38.0, 0.0), [m])[0] == pytest.approx(0.4)


class TestTrainingSet:
    def frame(self, state):
        return TruthFrame(0.0, [(1, state)], EgoState())

    def test_rear_bumper_point(self):
        m = SensorMount(0.0, 0.0, 0.0)
        s = vs(10.0, 0.0, np.pi)  # facing the sensor: rear bumper is the far side
        rear = 10.0 + 0.23 * 4.6
        scan = Scan(0.0, 0, np.array([[rear, 0.0, 0.0], [rear + 1.6, 0.0, 0.0]]))
        pts = build_training_set([scan], [self.frame(s)], [m], gate_margin=0.5)
        assert len(pts) == 1
        np.testing.assert_allclose(pts[0, :2], [-0.23, 0.0], atol=1e-12)
        assert pts[0, 3] == pytest.approx(np.pi)

    def test_simulator_labels(self):
        template = ReflectionTemplate.default(position_sigma=0.0)
        cfg = SimConfig(seed=3, template=template, noise=SensorNoise(0.0, 0.0))
        scans, truths = simulate(figure_eight(8.0), cfg)
        pts, idx = build_training_set(scans, truths, default_mounts(), gate_margin=0.5, return_index=True)
        kept = {(int(s), int(d)) for s, d, _ in idx}
        planted = {(si, j) for si, sc in enumerate(scans) for j, lab in enumerate(sc.labels) if lab >= 0}
        assert planted and planted <= kept
        for s, d, tid in idx:
            assert scans[s].labels[d] in (-1, tid)
        assert pts.shape[1] == 4 and np.all(np.isfinite(pts))

    def test_empty(self):
        assert build_training_set([], [], [MOUNT]).shape == (0, 4)


class TestBalance:
    def test_two_bins(self):
        rng = np.random.default_rng(0)
        pts = np.zeros((24736, 4))
        pts[:20000, 3] = rng.uniform(0.0, 0.08, 20000)
        pts[20000:, 3] = rng.uniform(0.09, 0.17, 4736)
        out = balance_by_aspect(pts, np.deg2rad(5.0))
        bins = ((out[:, 3] + np.pi) // np.deg2rad(5.0)).astype(int)
        _, counts = np.unique(bins, return_counts=True)
        np.testing.assert_array_equal(counts, [4736, 4736])

    def test_uniform_identity(self):
        pts = np.zeros((72, 4))
        pts[:, 3] = -np.pi + np.deg2rad(5.0) * (np.arange(72) + 0.5)
        out = balance_by_aspect(pts, np.deg2rad(5.0))
        np.testing.assert_array_equal(np.sort(out[:, 3]), pts[:, 3])

    def test_seeded(self):
        pts = np.random.default_rng(1).uniform(-np.pi, np.pi, (5000, 4))
        np.testing.assert_array_equal(balance_by_aspect(pts, seed=4), balance_by_aspect(pts, seed=4))

    def test_bad_width(self):
        with pytest.raises(ValueError):
            balance_by_aspect(np.zeros((3, 4)), 0.0)


def test_corpus_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(10, 4))
    write_corpus(tmp_path / "c.jsonl", pts)
    np.testing.assert_array_equal(read_corpus(tmp_path / "c.jsonl"), pts)


def test_bundled_model_covers_template():
    from importlib import resources

    model = vgm_io.loads(resources.files("vgmtrack").joinpath("data", "default_model.json").read_text())
    mix = predictive(model)
    zx, zy, _, _, _ = ReflectionTemplate.default().arrays()
    for px, py in zip(zx, zy):
        dist = np.hypot(mix.locs[:, 0] - px, mix.locs[:, 1] - py)
        assert dist.min() <= 0.05, (px, py, dist.min())
