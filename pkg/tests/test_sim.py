import numpy as np
import pytest

from fsgl import model, sim
from fsgl.errors import ValidationError
from fsgl.penalty import GridSpec, build_fusion_matrix


class TestBuildScenario:
    def test_unknown_id_rejected(self):
        with pytest.raises(ValidationError):
            sim.build_scenario("2A")

    def test_aggregated_complete(self):
        sc = sim.build_scenario("1A", seed=0)
        active = np.flatnonzero(sc.beta_true)
        assert active.size == 25
        assert np.all(sc.beta_true[active] == 3.0)
        # active pixels form the top-left 5x5 block
        img = sc.beta_true.reshape(20, 20)
        assert np.all(img[:5, :5] == 3.0)
        assert img.sum() == 75.0

    @pytest.mark.parametrize(
        "scenario_id,n_nonzero", [("1A", 25), ("4A", 15), ("7B", 5), ("9B", 15)]
    )
    def test_sparsity_counts(self, scenario_id, n_nonzero):
        sc = sim.build_scenario(scenario_id, seed=11)
        assert (sc.beta_true != 0).sum() == n_nonzero
        assert sc.beta_true.sum() == pytest.approx(3.0 * n_nonzero)

    def test_every_layout_has_equal_groups(self):
        for scenario_id in sim.SCENARIO_IDS:
            sc = sim.build_scenario(scenario_id, seed=1)
            assert np.array_equal(sc.groups.sizes, np.full(16, 25))

    def test_distributed_layout_has_no_same_group_edges(self):
        sc = sim.build_scenario("3C", seed=0)
        fusion = build_fusion_matrix(GridSpec(sc.grid_dims))
        pos, neg = fusion.signed_columns
        labels = sc.groups.assignment
        assert np.all(labels[pos] != labels[neg])

    def test_partial_layout_piece_inventory(self):
        sc = sim.build_scenario("2B", seed=0)
        img = (sc.groups.assignment == 1).reshape(20, 20)
        # group 1 splits into one 3x3, three 2x2, and two 1x2 pieces
        from scipy.ndimage import label

        comp, n = label(img)
        sizes = sorted(np.bincount(comp.ravel())[1:].tolist())
        assert n == 6
        assert sizes == [2, 2, 4, 4, 4, 9]

    def test_misspecified_relabels_active_pixels(self):
        b2 = sim.build_scenario("2B", seed=0)
        b8 = sim.build_scenario("8B", seed=0)
        assert np.array_equal(b2.beta_true, b8.beta_true)
        active = np.flatnonzero(b8.beta_true)
        spanned = set(b8.groups.assignment[active].tolist())
        assert len(spanned) == 4
        assert set(b2.groups.assignment[active].tolist()) == {1}

    def test_sparsity_draw_depends_on_seed(self):
        a = sim.build_scenario("4A", seed=1)
        b = sim.build_scenario("4A", seed=2)
        assert not np.array_equal(a.beta_true, b.beta_true)
        assert np.array_equal(a.beta_true, sim.build_scenario("4A", seed=1).beta_true)


class TestGenerateDataset:
    def test_shapes_and_reproducibility(self):
        sc = sim.build_scenario("1A", seed=0)
        a = sim.generate_dataset(sc, 42)
        b = sim.generate_dataset(sc, 42)
        assert a.x_train.shape == (50, 400)
        assert a.x_test.shape == (50, 400)
        assert a.x_bv.shape == (100, 400)
        assert np.array_equal(a.x_train, b.x_train)
        assert np.array_equal(a.y_test, b.y_test)
        c = sim.generate_dataset(sc, 43)
        assert not np.array_equal(a.x_train, c.x_train)

    def test_noise_variance_near_four(self):
        sc = sim.build_scenario("1A", seed=0)
        resid = []
        for seed in range(40):
            ds = sim.generate_dataset(sc, seed)
            resid.append(ds.y_train - ds.x_train @ sc.beta_true)
        var = np.var(np.concatenate(resid))
        assert abs(var - 4.0) / 4.0 < 0.10

    def test_predictor_moments(self):
        sc = sim.build_scenario("1A", seed=0)
        ds = sim.generate_dataset(sc, 7)
        bound = 3.0 / np.sqrt(50.0)
        # three-sigma bound per column; allow the expected handful of
        # exceedances across 400 columns
        mean_ok = np.abs(ds.x_train.mean(axis=0)) < bound
        sd_ok = np.abs(ds.x_train.std(axis=0) - 1.0) < bound
        assert mean_ok.mean() > 0.98
        assert sd_ok.mean() > 0.98

    def test_null_signal_sanity(self):
        sc = sim.build_scenario("1A", seed=0)
        zero = sim.Scenario(
            id=sc.id,
            group_layout=sc.group_layout,
            beta_true=np.zeros_like(sc.beta_true),
            groups=sc.groups,
            sparsity=sc.sparsity,
            misspecified=False,
        )
        ys = np.concatenate(
            [sim.generate_dataset(zero, s).y_train for s in range(20)]
        )
        assert abs(ys.mean()) < 3 * 2.0 / np.sqrt(ys.size)

    def test_shared_bv_matrix_injection(self):
        sc = sim.build_scenario("1A", seed=0)
        shared = np.ones((100, 400))
        ds = sim.generate_dataset(sc, 5, x_bv=shared)
        assert ds.x_bv is shared
        # earlier draws unchanged by the injection
        plain = sim.generate_dataset(sc, 5)
        assert np.array_equal(ds.x_train, plain.x_train)
        assert np.array_equal(ds.y_test, plain.y_test)


class TestMetricPlumbing:
    def test_true_coefficients_noise_floor(self):
        sc = sim.build_scenario("1A", seed=0)
        mse_b = []
        mse_p = []
        for seed in range(20):
            ds = sim.generate_dataset(sc, seed)
            mse_b.append(model.mse_beta(sc.beta_true, sc.beta_true))
            mse_p.append(model.mse_pred(ds.x_test @ sc.beta_true, ds.y_test))
        assert max(mse_b) == 0.0
        avg = np.mean(mse_p)
        assert abs(avg - 4.0) / 4.0 < 0.5


class TestRunExperiment:
    @pytest.fixture(scope="class")
    def tiny_report(self):
        sc = sim.build_scenario("1A", seed=0)
        return sim.run_experiment(
            sc,
            n_replicates=2,
            alpha_gamma_grid=[(0.0, 0.2), (1.0, 1.0)],
            lambda_grid_spec=(-1.0, 2.0, 6),
            seed=31,
            k=3,
        )

    def test_report_shapes(self, tiny_report):
        rep = tiny_report
        assert rep.cv_mse.shape == (2, 2)
        assert rep.mse_beta.shape == (2, 2)
        assert np.isfinite(rep.mse_beta).all()
        assert rep.freq_cve.sum() == 2
        assert rep.freq_mse_beta.sum() == 2
        assert np.isfinite(rep.bv_squared_bias).all()
        assert np.isfinite(rep.bv_variance).all()

    def test_rows_exports(self, tiny_report):
        rows = list(tiny_report.replicate_rows())
        assert len(rows) == 4
        freq_rows = list(tiny_report.frequency_rows())
        assert len(freq_rows) == 2
        bv = list(tiny_report.bias_variance_rows())
        assert len(bv) == 2

    def test_agreement_count_bounds(self, tiny_report):
        agreement = tiny_report.cv_vs_test_agreement()
        assert 0 <= agreement <= 2

    def test_deterministic_and_parallel_identical(self):
        sc = sim.build_scenario("4A", seed=0)
        kwargs = dict(
            n_replicates=2,
            alpha_gamma_grid=[(1.0, 1.0)],
            lambda_grid_spec=(-1.0, 1.0, 4),
            seed=5,
            k=3,
        )
        a = sim.run_experiment(sc, **kwargs)
        b = sim.run_experiment(sc, **kwargs)
        c = sim.run_experiment(sc, n_jobs=2, **kwargs)
        for x, other in ((a, b), (a, c)):
            assert np.array_equal(x.cv_mse, other.cv_mse)
            assert np.array_equal(x.mse_beta, other.mse_beta)
            assert np.array_equal(x.lambda_opt, other.lambda_opt)

    def test_single_replicate_aggregates(self):
        sc = sim.build_scenario("1A", seed=0)
        rep = sim.run_experiment(
            sc,
            n_replicates=1,
            alpha_gamma_grid=[(1.0, 1.0)],
            lambda_grid_spec=(-1.0, 1.0, 3),
            seed=2,
            k=3,
        )
        assert rep.freq_cve.sum() == 1
        assert np.isnan(rep.bv_squared_bias).all()  # needs two replicates

    def test_zero_replicates_rejected(self):
        sc = sim.build_scenario("1A", seed=0)
        with pytest.raises(ValidationError):
            sim.run_experiment(sc, n_replicates=0)
