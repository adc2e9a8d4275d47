import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from toys import (ConstantGenerator, FixedDiscriminator, OneParamGenerator,
                  finite_difference_grad)

from pixgan import trainer
from pixgan.constraints import conditioning_batch, sample_constraint_map, stack_maps
from pixgan.data import make_shapes
from pixgan.objectives import (combined_generator_loss, generator_adversarial_loss,
                               reconstruction_loss)
from pixgan.trainer import (CHECKPOINT_VERSION, CheckpointError, MetricsHistory,
                            NumericalAbort, TrainConfig, TrainState, new_state,
                            parameter_checksum, persist_state, restore_state, run_epoch,
                            select_best_epoch, train_epoch, train_epoch_pac)


def smoke_data(count=64, density=0.05, seed=0):
    rng = np.random.default_rng(seed)
    images, _ = make_shapes(count, 16, rng)
    maps = [sample_constraint_map(images[i], density, rng) for i in range(count // 4)]
    x = torch.as_tensor(images.transpose(0, 3, 1, 2), dtype=torch.float32)
    return x, stack_maps(maps, dtype=torch.float32)


def fresh(cfg_kwargs=None, pac=1):
    kwargs = {"batch_size": 16, "epochs": 2, "constraint_density": 0.05, "pac": pac}
    kwargs.update(cfg_kwargs or {})
    return new_state("dcgan16-g", "dcgan16-d", TrainConfig(**kwargs))


def toy_state(G, D, **cfg):
    cfg = TrainConfig(**{"optimizer": "sgd", "lr": 0.1, "d_input_noise": 0.0, **cfg})
    params_d = ([p for p in D.parameters() if p.requires_grad]
                or [torch.nn.Parameter(torch.zeros(1))])
    return TrainState(G, D, torch.optim.SGD(G.parameters(), lr=cfg.lr),
                      torch.optim.SGD(params_d, lr=cfg.lr), cfg,
                      torch.Generator().manual_seed(cfg.seed), getattr(G, "latent", None))


def test_epoch_is_bitwise_reproducible():
    x, cons = smoke_data()
    a = train_epoch(fresh(), x, cons)
    b = train_epoch(fresh(), x, cons)
    assert a == b
    assert a.iterations == 64 // 16


def test_lambda_zero_matches_unregularized_run(monkeypatch):
    x, cons = smoke_data()
    reg = fresh({"lam": 0.0})
    train_epoch(reg, x, cons)
    monkeypatch.setattr(trainer, "reconstruction_loss",
                        lambda values, mask, generated: generated.sum() * 0.0)
    plain = fresh({"lam": 0.0})
    train_epoch(plain, x, cons)
    assert parameter_checksum(reg.generator) == parameter_checksum(plain.generator)
    for p, q in zip(reg.generator.parameters(), plain.generator.parameters()):
        assert torch.equal(p, q)


def test_lambda_changes_trajectory():
    x, cons = smoke_data()
    a, b = fresh({"lam": 0.0}), fresh({"lam": 5.0})
    train_epoch(a, x, cons)
    train_epoch(b, x, cons)
    assert parameter_checksum(a.generator) != parameter_checksum(b.generator)


@pytest.mark.parametrize("lam", [0.0, 1.0, 10.0])
def test_one_generator_step_matches_finite_difference(lam):
    rng = np.random.default_rng(5)
    maps = [sample_constraint_map(rng.uniform(-1, 1, (4, 4, 1)), 0.25, rng) for _ in range(3)]
    values, mask = stack_maps(maps, dtype=torch.float64)
    G, D = OneParamGenerator(0.3), FixedDiscriminator()
    state = toy_state(G, D, lam=lam)

    def loss():
        fake = G(conditioning_batch(values, mask))
        return combined_generator_loss(generator_adversarial_loss(D(fake)),
                                       reconstruction_loss(values, mask, fake), lam).g_total

    (grad,) = finite_difference_grad(loss, [G.theta])
    before = G.theta.item()
    trainer.generator_step(state, values, mask, None)
    assert G.theta.item() - before == pytest.approx(-0.1 * grad.item(), abs=1e-6)


def test_pac_epoch_feeds_2c_channels():
    x, cons = smoke_data()
    state = fresh(pac=2)
    assert state.discriminator.in_channels == 2
    seen = []
    handle = state.discriminator.register_forward_pre_hook(
        lambda mod, args: seen.append(args[0].shape[1]))
    train_epoch_pac(state, x, cons)
    handle.remove()
    assert seen and set(seen) == {2}


def test_pac_epoch_is_reproducible():
    x, cons = smoke_data()
    assert train_epoch_pac(fresh(pac=2), x, cons) == train_epoch_pac(fresh(pac=2), x, cons)


def test_pac_constant_generator_packs_identical_halves():
    x, cons = smoke_data()
    x, cons = x.double(), tuple(t.double() for t in cons)
    D = FixedDiscriminator(pack=2, trainable=True)
    state = toy_state(ConstantGenerator((16, 16, 1)), D, pac=2, batch_size=16)
    state.generator.dummy.data = state.generator.dummy.data.double()
    train_epoch_pac(state, x, cons)
    # per iteration D sees: real pack, fake pack (D step), fake pack (G step)
    fakes = [t for k, t in enumerate(D.inputs) if k % 3 != 0]
    assert len(fakes) == 2 * (64 // 16)
    for pack in fakes:
        assert torch.equal(pack[:, :1], pack[:, 1:])


def test_loops_check_pack_setting():
    x, cons = smoke_data()
    with pytest.raises(ValueError):
        train_epoch(fresh(pac=2), x, cons)
    with pytest.raises(ValueError):
        train_epoch_pac(fresh(pac=1), x, cons)


def test_generator_step_uses_fresh_draws(monkeypatch):
    x, cons = smoke_data()
    state = fresh()
    calls = []
    d_step, g_step = trainer.discriminator_step, trainer.generator_step

    def spy_d(state, x_real, values, mask, z, z_b=None):
        calls.append(("d", values.clone(), z.clone()))
        return d_step(state, x_real, values, mask, z, z_b)

    def spy_g(state, values, mask, z, z_b=None):
        calls.append(("g", values.clone(), z.clone()))
        return g_step(state, values, mask, z, z_b)

    monkeypatch.setattr(trainer, "discriminator_step", spy_d)
    monkeypatch.setattr(trainer, "generator_step", spy_g)
    train_epoch(state, x, cons)
    assert [c[0] for c in calls] == ["d", "g"] * 4
    for (_, y_d, z_d), (_, y_g, z_g) in zip(calls[::2], calls[1::2]):
        assert not torch.equal(z_d, z_g)


def test_hundred_iterations_stay_finite():
    x, cons = smoke_data(count=800)
    stats = train_epoch(fresh({"batch_size": 8, "epochs": 1}), x, cons)
    assert stats.iterations == 100
    assert all(math.isfinite(v) for v in (stats.d_loss, stats.g_adv, stats.g_rec))


def test_non_finite_loss_aborts_with_snapshot(monkeypatch):
    x, cons = smoke_data()
    monkeypatch.setattr(trainer, "reconstruction_loss",
                        lambda values, mask, generated: generated.sum() * float("nan"))
    with pytest.raises(NumericalAbort) as info:
        train_epoch(fresh(), x, cons)
    snap = info.value.snapshot
    assert snap["epoch"] == 0 and snap["iteration"] == 0
    assert math.isnan(snap["g_rec"])


def test_conditional_discriminator_epoch_runs():
    x, cons = smoke_data()
    state = fresh({"conditional_d": True})
    assert state.discriminator.in_channels == 2
    stats = train_epoch(state, x, cons)
    assert math.isfinite(stats.d_loss)


def test_input_noise_anneals_to_zero():
    state = fresh({"epochs": 4, "d_input_noise": 0.1})
    stds = []
    for e in range(5):
        state.epoch = e
        stds.append(trainer._d_noise_std(state, 4))
    assert stds == pytest.approx([0.1, 0.075, 0.05, 0.025, 0.0])


def test_train_config_validation():
    for bad in ({"lam": -1}, {"pac": 3}, {"batch_size": 0}, {"optimizer": "rmsprop"},
                {"pac_generator_step": "other"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# -- model selection ------------------------------------------------------------

def history(fids, mses):
    h = MetricsHistory()
    for e, (f, m) in enumerate(zip(fids, mses), start=1):
        h.add(e, f, m)
    return h


def test_select_single_epoch():
    assert select_best_epoch(history([5.0], [0.3])) == 1


def test_select_dominating_epoch():
    assert select_best_epoch(history([4, 3, 1, 2], [0.4, 0.2, 0.1, 0.3])) == 3


def test_select_worked_example():
    # scaled (FID, MSE): (1, 1), (0, 0.5), (0.25, 0) -> distances sqrt2, 0.5, 0.25
    assert select_best_epoch(history([10, 2, 4], [0.9, 0.5, 0.1])) == 3


def test_select_empty_errors():
    with pytest.raises(ValueError):
        select_best_epoch(MetricsHistory())


def test_select_ties_go_to_earliest():
    assert select_best_epoch(history([1, 2], [2, 1])) == 1


@given(fids=st.lists(st.floats(0, 100), min_size=1, max_size=12),
       data=st.data(), a=st.floats(0.01, 100), b=st.floats(-50, 50))
def test_selection_invariant_to_affine_fid(fids, data, a, b):
    mses = data.draw(st.lists(st.floats(0, 10), min_size=len(fids), max_size=len(fids)))
    base = select_best_epoch(history(fids, mses))
    scaled = [a * f + b for f in fids]
    # exact ties can flip under rounding; compare distances when argmins disagree
    other = select_best_epoch(history(scaled, mses))
    if other != base:
        def dist(h, e):
            recs = h.records
            f = np.array([r["fid"] for r in recs])
            m = np.array([r["mse"] for r in recs])
            fs = (f - f.min()) / (np.ptp(f) or 1)
            ms = (m - m.min()) / (np.ptp(m) or 1)
            return np.hypot(fs, ms)[e - 1]
        h = history(fids, mses)
        assert dist(h, base) == pytest.approx(dist(h, other), abs=1e-9)


def test_history_guards_and_json():
    h = history([3.0, 2.0], [0.5, 0.4])
    with pytest.raises(ValueError):
        h.add(2, 1.0, 1.0)
    with pytest.raises(ValueError):
        h.add(3, float("nan"), 1.0)
    assert MetricsHistory.from_json(h.to_json()) == h


# -- checkpoints -------------------------------------------------------------------

def test_resume_matches_uninterrupted_run(tmp_path):
    x, cons = smoke_data()
    straight = fresh()
    run_epoch(straight, x, cons)
    second = run_epoch(straight, x, cons)

    first = fresh()
    run_epoch(first, x, cons)
    persist_state(first, tmp_path)
    resumed = restore_state(tmp_path)
    assert resumed.epoch == 1
    assert run_epoch(resumed, x, cons) == second
    assert parameter_checksum(resumed.generator) == parameter_checksum(straight.generator)
    assert parameter_checksum(resumed.discriminator) == parameter_checksum(straight.discriminator)


def test_round_trip_preserves_checksums(tmp_path):
    state = fresh({"pac": 2}, pac=2)
    state.history.add(1, 2.0, 0.5)
    state.epoch = 1
    path = persist_state(state, tmp_path)
    back = restore_state(path)
    assert parameter_checksum(back.generator) == parameter_checksum(state.generator)
    assert parameter_checksum(back.discriminator) == parameter_checksum(state.discriminator)
    assert back.history == state.history
    assert back.discriminator.pack == 2


def test_checkpoint_resolves_from_root_pointer_or_directory(tmp_path):
    state = fresh()
    state.epoch = 3
    path = persist_state(state, tmp_path)
    for where in (tmp_path, tmp_path / "latest", path):
        assert restore_state(where).epoch == 3
    with pytest.raises(CheckpointError, match="no checkpoint"):
        restore_state(tmp_path / "missing")


def test_wrong_version_is_reported(tmp_path):
    path = persist_state(fresh(), tmp_path)
    meta = json.loads((path / "meta.json").read_text())
    meta["format_version"] = CHECKPOINT_VERSION + 1
    (path / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(CheckpointError, match="format version"):
        restore_state(path)


def test_corrupt_checkpoint_is_reported(tmp_path):
    path = persist_state(fresh(), tmp_path)
    (path / "generator.pt").write_bytes(b"not a tensor file")
    with pytest.raises(CheckpointError, match="corrupt"):
        restore_state(path)
    with pytest.raises(CheckpointError):
        restore_state(tmp_path / "missing")
