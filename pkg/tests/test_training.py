import copy

import numpy as np
import pytest

from blockflow.data import DatasetSpec, make_dataset
from blockflow.models import Architecture
from blockflow.nn import TrainingDivergenceError
from blockflow.training import (
    FrnTrainer,
    MonolithicTrainer,
    Stage1Trainer,
    TrainConfig,
    align_loss,
    bfm_loss,
    draw_stage1_batch,
    frn_loss,
    matched_monolithic_config,
    monolithic_net,
    partition_batch,
    stage1_loss_and_grads,
    train_bfm,
    train_frn,
    train_monolithic_fm,
)
from gradcheck import check_params

ARCH = Architecture(velocity_hidden=16, align_hidden=16, proj_hidden=16, frn_hidden=16, oracle_hidden=16, oracle_dim=8)


@pytest.fixture(scope="module")
def ring():
    return make_dataset(DatasetSpec(kind="ring", n_samples=2048, seed=0))


def small_cfg(**kw):
    base = dict(batch_size=32, iterations=20, segments=4, lr=2e-3, arch=ARCH, frn_iterations=20)
    base.update(kw)
    return TrainConfig(**base)


def test_partition_examples():
    rng = np.random.default_rng(0)
    groups = partition_batch(256, 4, rng)
    assert [len(g) for g in groups] == [64] * 4
    assert [len(g) for g in partition_batch(5, 5, rng)] == [1] * 5
    np.testing.assert_array_equal(partition_batch(7, 1, rng)[0], np.arange(7))
    for _ in range(100):
        groups = partition_batch(24, 6, rng)
        allidx = np.concatenate(groups)
        assert sorted(allidx.tolist()) == list(range(24))
        assert len(set(allidx.tolist())) == 24
    with pytest.raises(ValueError):
        partition_batch(10, 4, rng)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=10, segments=4)
    with pytest.raises(ValueError):
        TrainConfig(lam=-1.0)
    cfg = TrainConfig()
    assert (cfg.segments, cfg.lam, cfg.lr, cfg.batch_size) == (6, 0.5, 1e-4, 864)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_align_loss_examples():
    h = np.array([1.0, 2.0, -0.5])
    assert align_loss(h, h) == pytest.approx(-1.0)
    assert align_loss(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)
    assert align_loss(h, -h) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        align_loss(np.zeros(3), h)
    with pytest.raises(ValueError):
        align_loss(h, h[:2])


def test_mse_losses():
    for fn in (bfm_loss, frn_loss):
        assert fn(np.ones(3), np.ones(3)) == 0.0
        assert fn(np.array([1.0, 1.0]), np.zeros(2)) == 1.0
        e = np.array([0.3, -0.2])
        assert fn(2 * e, 0 * e) == pytest.approx(4 * fn(e, 0 * e), rel=1e-15)
        with pytest.raises(ValueError):
            fn(np.zeros(2), np.zeros(3))


def test_batch_times_inside_segments(ring):
    cfg = small_cfg()
    tr = Stage1Trainer(cfg, ring)
    batch = draw_stage1_batch(ring, tr.streams, tr.bundle.schedule, 32, 8, 0.1)
    for m, g in enumerate(batch.groups, start=1):
        lo, hi = tr.bundle.schedule.bounds(m)
        assert np.all((batch.t[g] >= lo) & (batch.t[g] < hi))
    assert np.all((batch.labels >= 0) & (batch.labels <= 8))


def test_stage1_gradients_end_to_end(ring):
    tr = Stage1Trainer(small_cfg(batch_size=8, lam=0.7), ring)
    batch = draw_stage1_batch(ring, tr.streams, tr.bundle.schedule, 8, 8, 0.3)
    _, grads = stage1_loss_and_grads(tr.bundle, batch, 0.7)
    nets = tr.bundle.networks()

    def total():
        return stage1_loss_and_grads(tr.bundle, batch, 0.7)[0]["loss_total"]

    rng = np.random.default_rng(0)
    for name, g in grads.items():
        assert check_params(total, nets[name].params, g, max_entries=30, rng=rng) < 1e-4, name


def test_frn_gradients(ring):
    b, _ = train_bfm(small_cfg(iterations=5), ring)
    rng = np.random.default_rng(1)
    for residual in (True, False):
        tr = FrnTrainer(copy.deepcopy(b), small_cfg(), ring, residual=residual)
        x1 = ring.x[:8].astype(float)
        eps, labels = rng.normal(size=x1.shape), ring.labels[:8].astype(int)
        m, u = rng.integers(1, 5, size=8), rng.random(8)
        _, grads = tr.loss_and_grads(x1, eps, labels, m, u)
        err = check_params(lambda: tr.loss_and_grads(x1, eps, labels, m, u)[0], tr.bundle.frn.params, grads,
                           max_entries=40, rng=rng)
        assert err < 1e-4


def test_loss_composition_and_balance(ring):
    cfg = small_cfg(lam=0.5, iterations=15)
    tr = Stage1Trainer(cfg, ring)
    reps = tr.run()
    for r in reps:
        assert abs(r.loss_total - (r.loss_bfm + 0.5 * r.loss_align)) <= 1e-12
        assert np.isfinite([r.loss_bfm, r.loss_align, r.loss_total]).all()
    np.testing.assert_array_equal(tr.block_updates, [15] * 4)
    np.testing.assert_array_equal(tr.block_samples, [15 * 8] * 4)
    for name, st in tr.opt.items():
        assert st.step == 15, name


def test_zero_iterations_keep_init(ring):
    cfg = small_cfg(iterations=0)
    b, reps = train_bfm(cfg, ring)
    fresh = Stage1Trainer(cfg, ring).bundle
    assert reps == []
    for name, net in b.networks().items():
        assert net.checksum() == fresh.networks()[name].checksum()


def test_training_is_deterministic(ring):
    a, ra = train_bfm(small_cfg(iterations=10), ring)
    b, rb = train_bfm(small_cfg(iterations=10), ring)
    assert [r.loss_total for r in ra] == [r.loss_total for r in rb]
    assert all(a.networks()[k].checksum() == b.networks()[k].checksum() for k in a.networks())


def test_loss_decreases_on_ring(ring):
    _, reps = train_bfm(small_cfg(batch_size=64, iterations=2000, arch=Architecture()), ring)
    first = np.mean([r.loss_bfm for r in reps[:100]])
    last = np.mean([r.loss_bfm for r in reps[-100:]])
    assert last < first


def test_frn_stage_freezes_stage1(ring):
    b, _ = train_bfm(small_cfg(), ring)
    before = {k: n.checksum() for k, n in b.networks().items()}
    _, reps = train_frn(b, small_cfg(), ring)
    assert len(reps) == 20 and all(np.isfinite(r.loss_frn) for r in reps)
    after = {k: n.checksum() for k, n in b.networks().items() if k != "frn"}
    assert all(before[k] == v for k, v in after.items())


def test_frn_zero_init_loss_is_feature_drift(ring):
    b, _ = train_bfm(small_cfg(), ring)
    tr = FrnTrainer(b, small_cfg(batch_size=4000), ring)
    for k in b.frn.params:
        b.frn.params[k][...] = 0.0
    rng = np.random.default_rng(5)
    idx = rng.integers(0, len(ring.x), 4000)
    x1 = ring.x[idx].astype(float)
    eps, labels = rng.normal(size=x1.shape), ring.labels[idx].astype(int)
    m, u = rng.integers(1, 5, size=4000), rng.random(4000)
    loss, _ = tr.loss_and_grads(x1, eps, labels, m, u)
    f_start, f_t, *_ = tr.targets(x1, eps, labels, m, u)
    assert loss == pytest.approx(np.mean((f_t - f_start) ** 2), rel=1e-12)


def test_frn_requires_alignment(ring):
    b, _ = train_bfm(small_cfg(semfeat=False, iterations=1), ring)
    with pytest.raises(ValueError):
        FrnTrainer(b, small_cfg(), ring)


def test_monolithic_loop(ring):
    cfg = small_cfg(segments=1, semfeat=False, lam=0.0, iterations=200, batch_size=64)
    net, reps = train_monolithic_fm(cfg, ring)
    assert np.mean([r.loss_bfm for r in reps[-50:]]) < np.mean([r.loss_bfm for r in reps[:50]])
    assert net.spec.n_layers == ARCH.velocity_layers


def test_matched_monolithic_params():
    target = 30000
    cfg = matched_monolithic_config(TrainConfig(batch_size=256, segments=4), target, 2, 8)
    n = monolithic_net(cfg, 2, 8).n_params()
    assert cfg.segments == 1 and not cfg.semfeat
    assert abs(n - target) / target < 0.02


def test_divergence_is_reported(ring):
    tr = MonolithicTrainer(small_cfg(segments=1, semfeat=False, lam=0.0, lr=1e300), ring)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergenceError):
        tr.run(50)
