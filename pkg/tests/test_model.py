import numpy as np
import pytest

from hazecast.autodiff import Tensor, concat
from hazecast.errors import UsageError
from hazecast.geo import Station, build_network, edge_attributes_at
from hazecast.model import Forecaster, ModelConfig, WindowSample, build_variant

from gradcheck import assert_gradients_match
from reference import ref_forward


def toy_network(n=3, seed=0):
    rng = np.random.default_rng(seed)
    stations = [Station(f"s{k}", 25.0 + rng.uniform(-0.02, 0.02), 85.0 + rng.uniform(-0.02, 0.02))
                for k in range(n)]
    return build_network(stations, threshold_km=6.0)


def toy_sample(network, h=3, f=2, node_dim=4, seed=1, with_edges=True):
    rng = np.random.default_rng(seed)
    n = network.n_stations
    spacetime = np.column_stack([
        rng.integers(0, 24, h + f),
        rng.integers(0, 7, h + f),
        rng.integers(1, 13, h + f),
    ]).astype(np.int64)
    edge_feats = None
    if with_edges:
        frames = []
        for _ in range(h):
            wind = rng.normal(0, 3, size=(n, 2))
            frames.append(edge_attributes_at(network, wind).values)
        edge_feats = np.stack(frames, axis=0)
    return WindowSample(
        x=rng.normal(size=(h, n, node_dim)),
        y_hist=rng.normal(size=(h, n)),
        y_future=rng.normal(size=(f, n)),
        spacetime=spacetime,
        coords=network.coordinates(),
        edge_feats=edge_feats,
    )


def config(variant, network, h=3, f=2, node_dim=4, hidden=5, **kw):
    return ModelConfig(variant=variant, hidden=hidden, history_steps=h,
                       forecast_steps=f, node_dim=node_dim, embed_dim=4, **kw)


class TestBuildVariant:
    def test_unknown_variant_rejected(self):
        with pytest.raises(UsageError, match="unknown variant"):
            ModelConfig(variant="lstm", hidden=4, history_steps=2, forecast_steps=1, node_dim=3)

    def test_gru_variant_has_no_graph_parameters(self):
        net = toy_network()
        model = build_variant(config("gru", net), network=None, seed=0)
        assert model.graph_parameter_count() == 0
        assert model.attention_parameter_count() == 0

    def test_attention_is_the_only_difference_between_top_variants(self):
        net = toy_network()
        agnn = build_variant(config("agnn_gru", net), net, seed=0)
        gnn = build_variant(config("gnn_gru", net), net, seed=0)
        agnn_names = set(agnn.params)
        gnn_names = set(gnn.params)
        assert gnn_names < agnn_names
        only_in_agnn = agnn_names - gnn_names
        assert only_in_agnn and all(n.startswith("decoder.attention") for n in only_in_agnn)
        assert agnn.parameter_count() - gnn.parameter_count() == agnn.attention_parameter_count()

    def test_parameter_count_matches_shape_accounting(self):
        net = toy_network()
        cfg = config("agnn_gru", net, node_dim=9, hidden=16, h=3, f=2)
        cfg.embed_dim = 8
        model = build_variant(cfg, net, seed=0)

        e = 8
        spacetime = 4 * e
        p = 9 + spacetime + 1
        g = 16
        expected = 0
        expected += (24 + 7 + 12) * e + e * 2 + e                      # embed tables + location
        expected += 4 * (g * p + g) + (g * 5 + g) + (g * 5 + g)        # conv: root/msg/query/key + edge maps
        enc_in = p + g
        expected += 3 * (16 * (16 + enc_in) + 16)                      # encoder gru
        expected += (16 * 16 + 16) + (1 * 16 + 1)                      # encoder head
        expected += 3 * (16 * (16 + spacetime + 1) + 16)               # decoder gru
        expected += 16 * 16 + (16 * 32 + 16)                           # attention score + out
        expected += (16 * 16 + 16) + (1 * 16 + 1)                      # decoder head
        assert model.parameter_count() == expected

    def test_graph_mode_requires_network(self):
        net = toy_network()
        with pytest.raises(UsageError, match="network"):
            build_variant(config("agnn_gru", net), network=None, seed=0)


class TestForward:
    def test_zero_parameters_give_zero_predictions(self):
        net = toy_network()
        model = build_variant(config("agnn_gru", net), net, seed=0)
        for t in model.params.values():
            t.data[...] = 0.0
        sample = toy_sample(net)
        preds = model.predict(sample)
        assert preds.shape == (2, 3)
        assert np.all(preds == 0.0)

    def test_single_forecast_step_shape_and_composition(self):
        net = toy_network()
        cfg = config("agnn_gru", net, f=1)
        model = build_variant(cfg, net, seed=3)
        sample = toy_sample(net, f=1, seed=4)
        preds = model.predict(sample)
        assert preds.shape == (1, net.n_stations)

        # hand-compose: encoder steps then one decoder step
        n = net.n_stations
        h = Tensor(np.zeros((n, cfg.hidden)))
        history = []
        for t in range(cfg.history_steps):
            xbar = model.embed(*map(int, sample.spacetime[t]), sample.coords)
            p = concat([Tensor(sample.x[t]), xbar, Tensor(sample.y_hist[t].reshape(n, 1))], axis=1)
            h, yhat = model.encoder_step(p, Tensor(sample.edge_feats[t]), h)
            history.append(h)
        xbar = model.embed(*map(int, sample.spacetime[cfg.history_steps]), sample.coords)
        _, out = model.decoder_step(xbar, yhat, h, history)
        assert np.array_equal(preds[0], out.data.ravel())

    @pytest.mark.parametrize("variant", ["agnn_gru", "gnn_gru", "wgc_gru", "gc_gru", "gru"])
    def test_matches_numpy_unrolling_oracle(self, variant):
        net = toy_network(n=3, seed=5)
        model = build_variant(config(variant, net), net if variant != "gru" else None, seed=6)
        sample = toy_sample(net, seed=7)
        preds = model.predict(sample)
        expected = ref_forward(model, sample)
        assert np.allclose(preds, expected, rtol=1e-10, atol=1e-12)

    def test_forecast_period_inputs_never_read(self):
        net = toy_network()
        model = build_variant(config("agnn_gru", net), net, seed=8)
        sample = toy_sample(net, seed=9)
        base = model.predict(sample)
        mutated = WindowSample(
            x=sample.x, y_hist=sample.y_hist,
            y_future=sample.y_future + 100.0,
            spacetime=sample.spacetime, coords=sample.coords,
            edge_feats=sample.edge_feats,
        )
        assert np.array_equal(model.predict(mutated), base)

    def test_autoregressive_dependence_on_last_history_target(self):
        net = toy_network()
        model = build_variant(config("agnn_gru", net), net, seed=10)
        sample = toy_sample(net, seed=11)
        base = model.predict(sample)
        bumped = sample.y_hist.copy()
        bumped[-1, 0] += 0.5
        mutated = WindowSample(x=sample.x, y_hist=bumped, y_future=sample.y_future,
                               spacetime=sample.spacetime, coords=sample.coords,
                               edge_feats=sample.edge_feats)
        assert not np.array_equal(model.predict(mutated)[0], base[0])

    def test_variant_reduction_to_plain_gru(self):
        net = toy_network()
        cfg_gru = config("gru", net)
        reduced = ModelConfig(variant="agnn_gru", hidden=cfg_gru.hidden,
                              history_steps=cfg_gru.history_steps,
                              forecast_steps=cfg_gru.forecast_steps,
                              node_dim=cfg_gru.node_dim, embed_dim=cfg_gru.embed_dim,
                              use_attention=False, graph_mode="none")
        a = build_variant(cfg_gru, None, seed=12)
        b = build_variant(reduced, None, seed=12)
        assert set(a.params) == set(b.params)
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
        sample = toy_sample(net, seed=13, with_edges=False)
        assert np.array_equal(a.predict(sample), b.predict(sample))

    def test_permutation_consistency(self):
        rng = np.random.default_rng(20)
        net = toy_network(n=4, seed=21)
        cfg = config("agnn_gru", net)
        model = build_variant(cfg, net, seed=22)
        sample = toy_sample(net, seed=23)
        base = model.predict(sample)

        perm = np.array([2, 0, 3, 1])          # new index of each old station
        inv = np.argsort(perm)
        stations = [net.stations[i] for i in inv]
        permuted_net = build_network(stations, threshold_km=6.0)
        permuted_model = build_variant(cfg, permuted_net, seed=22)
        for name in model.params:
            permuted_model.params[name].data[...] = model.params[name].data

        # edge order in the permuted network is lexicographic over new labels
        old_edges = {(perm[s], perm[d]): k for k, (s, d) in enumerate(net.edges)}
        edge_map = [old_edges[tuple(e)] for e in permuted_net.edges.tolist()]
        permuted_sample = WindowSample(
            x=sample.x[:, inv, :],
            y_hist=sample.y_hist[:, inv],
            y_future=sample.y_future[:, inv],
            spacetime=sample.spacetime,
            coords=sample.coords[inv],
            edge_feats=sample.edge_feats[:, edge_map, :],
        )
        out = permuted_model.predict(permuted_sample)
        assert np.allclose(out[:, perm], base, rtol=1e-12, atol=1e-13)

    def test_missing_edge_attributes_rejected(self):
        net = toy_network()
        model = build_variant(config("agnn_gru", net), net, seed=0)
        sample = toy_sample(net, with_edges=False)
        with pytest.raises(ValueError, match="edge"):
            model.predict(sample)

    def test_window_shape_mismatch_rejected(self):
        net = toy_network()
        model = build_variant(config("agnn_gru", net, h=4), net, seed=0)
        sample = toy_sample(net, h=3)
        with pytest.raises(ValueError, match="H="):
            model.predict(sample)


class TestGradients:
    def test_end_to_end_gradients_small(self):
        net = toy_network(n=3, seed=30)
        cfg = config("agnn_gru", net, h=2, f=2, node_dim=2, hidden=3)
        cfg.embed_dim = 2
        model = build_variant(cfg, net, seed=31)
        sample = toy_sample(net, h=2, f=2, node_dim=2, seed=32)
        truth = sample.y_future

        def loss():
            preds = model.forward(sample)
            diff = preds - truth
            return (diff * diff).mean()

        assert_gradients_match(loss, model.params, rtol=1e-3, atol=1e-8)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = toy_network()
        model = build_variant(config("agnn_gru", net), net, seed=40)
        path = tmp_path / "model.bin"
        model.save(path)
        loaded = Forecaster.load(path, network=net)
        assert set(loaded.params) == set(model.params)
        for name in model.params:
            assert loaded.params[name].data.tobytes() == model.params[name].data.tobytes()
        sample = toy_sample(net, seed=41)
        assert np.array_equal(loaded.predict(sample), model.predict(sample))

    def test_config_survives(self, tmp_path):
        net = toy_network()
        cfg = config("wgc_gru", net, hidden=7)
        model = build_variant(cfg, net, seed=42)
        model.save(tmp_path / "m.bin")
        loaded = Forecaster.load(tmp_path / "m.bin", network=net)
        assert loaded.config == cfg

    def test_not_a_checkpoint_rejected(self, tmp_path):
        from hazecast.container import save_arrays
        from hazecast.errors import DataError
        path = tmp_path / "x.bin"
        save_arrays(path, {"a": np.ones(3)}, {"kind": "other"})
        with pytest.raises(DataError, match="checkpoint"):
            Forecaster.load(path)
