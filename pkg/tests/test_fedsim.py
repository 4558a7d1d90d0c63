import numpy as np
import pytest

from fedara import dataio, fedsim, nnmodel
from fedara.errors import DivergenceError
from fedara.fedsim import FedConfig, SnapshotStore
from fedara.nnmodel import MlpConfig, ParamVector


def _participants(P, n=20, d=6, seed=0):
    ds = dataio.synth_purchase_like(400, d, 3, seed=seed)
    sp = dataio.split(ds, dataio.SplitSpec(victim_size=n, seed=seed), participants=P)
    return [ds.subset(sp.victim)] + [ds.subset(o) for o in sp.others]


MODEL = MlpConfig(6, 3, (8,), seed=0)


class TestFedAvg:
    def test_single_model_identity(self):
        m = np.random.default_rng(0).standard_normal(50)
        np.testing.assert_array_equal(fedsim.fedavg([m], [17]), m)

    @pytest.mark.parametrize("P", [2, 4])
    def test_identical_updates(self, P):
        m = np.random.default_rng(1).standard_normal(50)
        np.testing.assert_array_equal(fedsim.fedavg([m] * P, [5] * P), m)

    def test_identical_updates_general_count(self):
        m = np.random.default_rng(1).standard_normal(50)
        np.testing.assert_allclose(fedsim.fedavg([m] * 3, [1, 1, 1]), m, rtol=1e-15)

    def test_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(2)
        models = [rng.standard_normal(100) for _ in range(7)]
        sizes = rng.integers(1, 50, 7)
        ref = fedsim.fedavg(models, sizes)
        for _ in range(5):
            perm = rng.permutation(7)
            out = fedsim.fedavg([models[i] for i in perm], sizes[perm])
            np.testing.assert_array_equal(out, ref)

    def test_weighting_by_size(self):
        out = fedsim.fedavg([np.array([0.0]), np.array([4.0])], [3, 1])
        np.testing.assert_allclose(out, [1.0])


class TestFederation:
    def test_single_participant_matches_sequential_sgd(self):
        (victim,) = _participants(1)
        cfg = FedConfig(1, isolate=False, rounds=3, lr=0.1, seed=0)
        store, final = fedsim.run_federation(cfg, [victim], 0, MODEL)
        params = nnmodel.init_params(MODEL)
        for t in range(1, 4):
            np.testing.assert_array_equal(store.get(t).start, params.flat())
            params, _ = nnmodel.local_epoch(params, victim.X, victim.Y, lr=0.1)
        np.testing.assert_array_equal(final, params.flat())

    def test_delta_is_start_minus_end(self):
        parts = _participants(3)
        cfg = FedConfig(3, isolate=False, rounds=4, batch_size=8, lr=0.05, seed=1)
        store, _ = fedsim.run_federation(cfg, parts, 0, MODEL)
        for s in store.snapshots:
            np.testing.assert_array_equal(s.delta, s.start - s.end)
        # observed gradient equals the summed batch gradients of the epoch
        s = store.get(2)
        _, acc = nnmodel.local_epoch(
            ParamVector.from_flat(MODEL, s.start), parts[0].X, parts[0].Y, lr=0.05,
            batch_size=8, rng=np.random.default_rng([1, 0, 2]),
        )
        np.testing.assert_allclose(s.gradient(0.05), acc, rtol=1e-9, atol=1e-12)

    def test_isolated_victim_ignores_others_bitwise(self):
        parts = _participants(10, n=15)
        cfg = FedConfig(10, isolate=True, rounds=5, batch_size=4, lr=0.1, seed=3)
        a, _ = fedsim.run_federation(cfg, parts, 0, MODEL)
        rng = np.random.default_rng(9)
        perturbed = [parts[0]] + [
            dataio.Dataset(1.0 - p.X, rng.integers(0, 3, len(p)), 3) for p in parts[1:]
        ]
        b, _ = fedsim.run_federation(cfg, perturbed, 0, MODEL)
        for sa, sb in zip(a.snapshots, b.snapshots):
            np.testing.assert_array_equal(sa.start, sb.start)
            np.testing.assert_array_equal(sa.delta, sb.delta)

    def test_non_isolated_victim_sees_others(self):
        parts = _participants(3)
        cfg = FedConfig(3, isolate=False, rounds=2, lr=0.1, seed=0)
        a, _ = fedsim.run_federation(cfg, parts, 0, MODEL)
        flipped = [parts[0]] + [dataio.Dataset(1.0 - p.X, p.Y, 3) for p in parts[1:]]
        b, _ = fedsim.run_federation(cfg, flipped, 0, MODEL)
        assert not np.array_equal(a.get(2).start, b.get(2).start)

    def test_deterministic(self):
        parts = _participants(2)
        cfg = FedConfig(2, isolate=False, rounds=3, batch_size=5, seed=4)
        a, fa = fedsim.run_federation(cfg, parts, 0, MODEL)
        b, fb = fedsim.run_federation(cfg, parts, 0, MODEL)
        np.testing.assert_array_equal(fa, fb)

    def test_divergence_reports_round(self):
        (victim,) = _participants(1)
        cfg = FedConfig(1, rounds=5, lr=1e305)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as exc:
                fedsim.run_federation(cfg, [victim], 0, MODEL)
        assert exc.value.where.startswith("round ")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FedConfig(participants=0)
        with pytest.raises(ValueError):
            FedConfig(rounds=101)
        with pytest.raises(ValueError):
            FedConfig(local_epochs=2)

    def test_participant_count_must_match(self):
        with pytest.raises(ValueError):
            fedsim.run_federation(FedConfig(2, rounds=1), _participants(1), 0, MODEL)


@pytest.fixture(scope="module")
def store():
    s = SnapshotStore(MODEL, 0.01)
    for t in range(1, 101):
        z = np.zeros(MODEL.num_params)
        s.append(fedsim.GradientSnapshot(t, z, z))
    return s


class TestWindows:
    @pytest.mark.parametrize(
        "name,rounds",
        [("pre1", [1]), ("pre2", [1, 2]), ("pre5", [1, 2, 3, 4, 5]),
         ("gap10", [10, 20, 30, 40, 50]), ("last5", [96, 97, 98, 99, 100])],
    )
    def test_resolution(self, store, name, rounds):
        assert fedsim.resolve_window(store, name).rounds == rounds

    def test_short_store(self):
        assert fedsim.resolve_window([1, 2, 3], "pre2").rounds == [1, 2]
        with pytest.raises(ValueError):
            fedsim.resolve_window([1, 2, 3], "pre5")
        with pytest.raises(ValueError):
            fedsim.resolve_window([1, 2, 3], "last5")

    def test_unknown_name(self, store):
        with pytest.raises(ValueError):
            fedsim.resolve_window(store, "pre3")

    def test_rounds_needed(self):
        assert fedsim.rounds_needed(["pre1"]) == 1
        assert fedsim.rounds_needed(["pre2", "pre5"]) == 5
        assert fedsim.rounds_needed(["gap10"]) == 50
        assert fedsim.rounds_needed(["last5"]) == 100

    def test_store_rounds_strictly_increasing(self, store):
        z = np.zeros(MODEL.num_params)
        with pytest.raises(ValueError):
            store.append(fedsim.GradientSnapshot(50, z, z))
        with pytest.raises(ValueError):
            store.append(fedsim.GradientSnapshot(101, z, z[:-1]))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        parts = _participants(2)
        cfg = FedConfig(2, isolate=False, rounds=3, seed=0)
        store, _ = fedsim.run_federation(cfg, parts, 0, MODEL)
        store.meta = {"column": 2}
        store.save(tmp_path)
        back = SnapshotStore.load(tmp_path)
        assert back.model == MODEL and back.rounds == [1, 2, 3] and back.meta == {"column": 2}
        for a, b in zip(store.snapshots, back.snapshots):
            np.testing.assert_array_equal(a.start, b.start)
            np.testing.assert_array_equal(a.delta, b.delta)

    def test_checksum_detects_tampering(self, tmp_path):
        (victim,) = _participants(1)
        store, _ = fedsim.run_federation(FedConfig(1, rounds=1), [victim], 0, MODEL)
        store.save(tmp_path)
        f = tmp_path / "round001_delta.ckpt"
        raw = bytearray(f.read_bytes())
        raw[-1] ^= 1
        f.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            SnapshotStore.load(tmp_path)
