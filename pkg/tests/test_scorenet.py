import dataclasses

import numpy as np
import pytest

from speechdiff import checks, scorenet
from speechdiff.conditioning import TextVocab
from speechdiff.scorenet import (AdamState, OptimizerConfig, ScoreNet, ScoreNetConfig, ScoreNetParams, TrainBatch,
                                 TrainingError, TrainItem, context_features, load_checkpoint, read_loss_csv,
                                 adam_update, save_checkpoint, train, write_loss_csv)
from speechdiff.sde import SdeSchedule, std
from speechdiff.solver import SolverConfig, sample

S = SdeSchedule()
VOCAB = TextVocab("remove noise add reverberation".split())


def small_net(**kw):
    cfg = ScoreNetConfig(state_dim=6, hidden=16, attn_dim=8, text_dim=8, vocab=VOCAB.tokens, **kw)
    return ScoreNet(cfg, S)


def item(rng, frames=3, n=6, prompt="remove noise"):
    x0 = rng.standard_normal((frames, n)) + 1j * rng.standard_normal((frames, n))
    y = x0 + 0.3 * (rng.standard_normal((frames, n)) + 1j * rng.standard_normal((frames, n)))
    return TrainItem(x0, y, rng.standard_normal((frames, 13)), VOCAB.ids(prompt))


def test_layout_and_param_views(rng):
    net = small_net()
    p = net.init_params(rng)
    assert p.size == sum(int(np.prod(s)) for _, s in net.cfg.layout())
    p["dec.b"][0] = 5.0
    assert p.flat[p.slices["dec.b"][0]] == 5.0
    with pytest.raises(ValueError):
        ScoreNetParams(net.cfg.layout(), np.zeros(3))


def test_output_shape(rng):
    net = small_net()
    p = net.init_params(rng)
    it = item(rng)
    out = net.forward(p, it.x0, it.y, 0.5, None)
    assert out.shape == it.x0.shape and np.iscomplexobj(out)


def test_forward_frame_mismatch(rng):
    net = small_net()
    p = net.init_params(rng)
    it = item(rng)
    with pytest.raises(ValueError):
        net._forward(p, it.x0, it.y[:2], 0.5, None, None, None, None)


def _raw(net, p, it, ids, t=0.4):
    return net._forward(p, it.x0, it.y, t, it.acoustic, ids, None, None)[0]


def test_text_permutation_invariance(rng):
    net = small_net()
    p = net.init_params(rng)
    it = item(rng)
    ids = VOCAB.ids("add reverberation remove")
    assert np.allclose(_raw(net, p, it, ids), _raw(net, p, it, ids[::-1]))


def test_zero_output_projection_removes_text(rng):
    net = small_net()
    p = net.init_params(rng)
    it = item(rng)
    a = _raw(net, p, it, VOCAB.ids("remove noise"))
    p["att.wo"][...] = 0
    b = _raw(net, p, it, VOCAB.ids("remove noise"))
    c = _raw(net, p, it, VOCAB.ids("add reverberation"))
    assert not np.allclose(a, b)
    assert np.array_equal(b, c)
    assert np.array_equal(b, _raw(net, p, it, np.zeros(0, int)))


def test_loss_zero_at_exact_noise_prediction(rng, monkeypatch):
    net = small_net()
    p = net.init_params(rng)
    batch = net.make_batch([item(rng), item(rng)], rng)
    pending = list(batch.z)
    real_forward = net._forward

    def perfect(*args):
        raw, cache = real_forward(*args)
        z = pending.pop(0)
        return -np.concatenate([z.real, z.imag], axis=1), cache

    monkeypatch.setattr(net, "_forward", perfect)
    assert net.dsm_loss(p, batch, with_grad=False)[0] == 0.0


def test_loss_matches_definition(rng):
    net = small_net()
    p = net.init_params(rng)
    batch = net.make_batch([item(rng), item(rng)], rng)
    total = 0.0
    for it, t, z in zip(batch.items, batch.t, batch.z):
        from speechdiff.sde import mean_weight
        a = mean_weight(t, S)
        x_t = a * it.x0 + (1 - a) * it.y + std(t, S) * z
        s = net.score_fn(p)(x_t, it.y, t, _cond(it))
        total += np.sum(np.abs(std(t, S) * s + z) ** 2)
    assert net.dsm_loss(p, batch, with_grad=False)[0] == pytest.approx(total / 2, rel=1e-10)


def _cond(it):
    from speechdiff.conditioning import ConditionBundle
    return ConditionBundle(it.y, it.y, it.acoustic, it.text_ids)


def test_loss_nonnegative_random_params(rng):
    net = small_net()
    for _ in range(5):
        p = net.init_params(rng)
        p.flat += rng.standard_normal(p.size)
        assert net.dsm_loss(p, net.make_batch([item(rng)], rng), with_grad=False)[0] >= 0


def test_batch_times_in_range(rng):
    net = small_net()
    batch = net.make_batch([item(rng) for _ in range(200)], rng)
    assert np.all((batch.t >= S.t_min) & (batch.t <= S.t_max))
    with pytest.raises(ValueError):
        net.dsm_loss(net.init_params(rng), TrainBatch([item(rng)], np.array([0.01]), [batch.z[0]]))
    with pytest.raises(ValueError):
        TrainBatch([], np.zeros(0), [])


def test_scale_invariance_of_weighted_loss(rng):
    # gain-only head: with the encoder cut off from the output, scaling states and
    # the noise schedule together leaves the sigma-weighted loss unchanged
    net = small_net(floor_quantile=None)
    p = net.init_params(rng)
    p.flat += 0.3 * rng.standard_normal(p.size)
    p["dec.w"][...] = 0
    p["dec.wc"][...] = 0
    p["dec.bc"][...] = 0
    p["dec.b"][2 * net.cfg.state_dim:] = 0
    it = item(rng)
    batch = net.make_batch([it], rng)
    c = 7.0
    scaled_sched = dataclasses.replace(S, sigma_min=S.sigma_min * c, sigma_max=S.sigma_max * c)
    net2 = ScoreNet(net.cfg, scaled_sched)
    it2 = TrainItem(c * it.x0, c * it.y, it.acoustic, it.text_ids)
    batch2 = TrainBatch([it2], batch.t, batch.z)
    assert net2.dsm_loss(p, batch2, False)[0] == pytest.approx(net.dsm_loss(p, batch, False)[0], rel=1e-10)


def test_gradients_match_finite_differences_small():
    net, p, batch = checks.grad_check_setup(seed=3, state_dim=3, frames=2)
    # tiny widths for a quick check; the acceptance suite runs the larger one in checks.py
    cfg = dataclasses.replace(net.cfg, hidden=8, attn_dim=4, text_dim=4)
    net = ScoreNet(cfg, net.sched)
    rng = np.random.default_rng(3)
    p = net.init_params(rng)
    p.flat += 0.05 * rng.standard_normal(p.size)
    batch.items[0].context = context_features(batch.items[0].y, cfg)
    _, g = net.dsm_loss(p, batch)
    err = checks.gradient_errors(g.flat, checks.finite_difference_grads(net, p, batch))
    assert err.max() <= 1e-4


def test_training_reduces_loss_and_is_deterministic(rng):
    net = small_net()
    data = [item(np.random.default_rng(i)) for i in range(8)]
    opt = OptimizerConfig(steps=500, batch_size=4)
    p1, _, l1 = train(net, net.init_params(np.random.default_rng(0)), data, opt, seed=1)
    p2, _, l2 = train(net, net.init_params(np.random.default_rng(0)), data, opt, seed=1)
    assert np.array_equal(p1.flat, p2.flat)
    first = l1[0][1]
    assert np.mean([l for _, l in l1[-50:]]) < first


def test_resume_reproduces_sequence(tmp_path):
    net = small_net()
    data = [item(np.random.default_rng(i)) for i in range(6)]
    opt = OptimizerConfig(steps=40, batch_size=3)
    p_full, _, l_full = train(net, net.init_params(np.random.default_rng(0)), data, opt, seed=2)
    half = dataclasses.replace(opt, steps=20)
    p_half, st_half, _ = train(net, net.init_params(np.random.default_rng(0)), data, half, seed=2)
    save_checkpoint(tmp_path / "c.bin", net, p_half, st_half)
    net2, p2, st2, _ = load_checkpoint(tmp_path / "c.bin")
    p_res, _, l_res = train(net2, p2, data, opt, seed=2, state=st2)
    assert np.array_equal(p_res.flat, p_full.flat)
    assert l_res == l_full[20:]


def test_single_precision_loss_and_gradients_track_double(rng):
    net = small_net()
    p = net.init_params(rng)
    p.flat += 0.05 * rng.standard_normal(p.size)
    items = [item(np.random.default_rng(i)) for i in range(3)]
    batch = net.make_batch(items, np.random.default_rng(5))
    loss64, g64 = net.dsm_loss(p, batch)
    single = TrainBatch([scorenet._single(it) for it in items], batch.t, [scorenet._single_array(z) for z in batch.z])
    loss32, g32 = net.dsm_loss(p.astype(np.float32), single)
    assert g32.flat.dtype == np.float64
    assert loss32 == pytest.approx(loss64, rel=1e-4)
    assert np.max(np.abs(g32.flat - g64.flat)) <= 1e-3 * np.max(np.abs(g64.flat))


def test_single_precision_training(rng):
    net = small_net()
    data = [item(np.random.default_rng(i)) for i in range(8)]
    opt = OptimizerConfig(steps=300, batch_size=4, precision="float32")
    p1, st, l1 = train(net, net.init_params(np.random.default_rng(0)), data, opt, seed=1)
    p2, _, _ = train(net, net.init_params(np.random.default_rng(0)), data, opt, seed=1)
    assert p1.flat.dtype == np.float64 and st.m.dtype == np.float64
    assert np.array_equal(p1.flat, p2.flat)
    assert np.mean([l for _, l in l1[-50:]]) < l1[0][1]
    with pytest.raises(ValueError):
        OptimizerConfig(precision="float16")


def test_adam_update_matches_textbook(rng):
    layout = [("w", (5,))]
    p = ScoreNetParams(layout, rng.standard_normal(5))
    ref, m, v = p.flat.copy(), np.zeros(5), np.zeros(5)
    state = AdamState.fresh(5)
    opt = OptimizerConfig(learning_rate=0.01)
    for k in range(1, 4):
        g = ScoreNetParams(layout, rng.standard_normal(5))
        adam_update(p, g, state, opt)
        m = 0.9 * m + 0.1 * g.flat
        v = 0.999 * v + 0.001 * g.flat**2
        ref -= 0.01 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert np.allclose(p.flat, ref, rtol=1e-12, atol=1e-15)


def test_cosine_schedule():
    opt = OptimizerConfig(steps=100, schedule="cosine", final_lr_ratio=0.1)
    assert opt.lr_at(0) == pytest.approx(1e-3)
    assert opt.lr_at(100) == pytest.approx(1e-4)
    assert OptimizerConfig().lr_at(50) == 1e-3
    with pytest.raises(ValueError):
        OptimizerConfig(schedule="step")


def test_non_finite_loss_aborts():
    net = small_net()
    bad = TrainItem(np.full((2, 6), np.nan + 0j), np.ones((2, 6), complex), np.zeros((2, 13)), VOCAB.ids("remove"))
    with pytest.raises(TrainingError):
        train(net, net.init_params(np.random.default_rng(0)), [bad], OptimizerConfig(steps=3), seed=0)
    with pytest.raises(ValueError):
        train(net, net.init_params(np.random.default_rng(0)), [], OptimizerConfig(steps=3), seed=0)


def test_checkpoint_round_trip(tmp_path, rng):
    net = small_net()
    p = net.init_params(rng)
    state = AdamState(rng.standard_normal(p.size), rng.random(p.size), 17)
    save_checkpoint(tmp_path / "a.ckpt", net, p, state, meta={"note": "x"})
    net2, p2, st2, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert net2.cfg == net.cfg and net2.sched == net.sched
    assert np.array_equal(p2.flat, p.flat) and np.array_equal(st2.v, state.v) and st2.step == 17
    assert meta["note"] == "x"
    head = (tmp_path / "a.ckpt").read_bytes().split(b"end\n")[0].decode()
    assert head.startswith("SCORENET-PARAMS v1") and "slice enc.w1" in head
    save_checkpoint(tmp_path / "b.ckpt", net, p)
    assert load_checkpoint(tmp_path / "b.ckpt")[2] is None
    (tmp_path / "c.ckpt").write_bytes(b"garbage\n")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.ckpt")


def test_loss_csv(tmp_path):
    rows = [(1, 2.5), (2, 1.25)]
    write_loss_csv(tmp_path / "l.csv", rows)
    assert read_loss_csv(tmp_path / "l.csv") == rows


def test_score_fn_matches_forward(rng):
    net = small_net()
    p = net.init_params(rng)
    it = item(rng)
    score = net.score_fn(p)
    out = score(it.x0, it.y, 0.7, None)
    assert out.shape == it.x0.shape and np.all(np.isfinite(out))


def test_text_conditioning_has_causal_effect():
    """Two prompts, two target transforms: swapping the prompt moves the output far
    more than re-sampling with another seed does."""
    vocab = TextVocab(["keep", "shrink"])
    cfg = ScoreNetConfig(state_dim=4, complex_state=False, acoustic_width=0, hidden=32, attn_dim=16, text_dim=16,
                         vocab=vocab.tokens, floor_quantile=None)
    net = ScoreNet(cfg, S)

    def draw(rng, k):
        out = []
        for _ in range(k):
            y = rng.uniform(1.0, 2.0, size=(2, 4)) * rng.choice([-1, 1], size=(2, 4))
            word = ["keep", "shrink"][rng.integers(2)]
            out.append(TrainItem(y if word == "keep" else 0.2 * y, y, np.zeros((2, 0)), vocab.ids(word)))
        return out

    opt = OptimizerConfig(steps=1500, batch_size=16, schedule="cosine")
    p, _, _ = train(net, net.init_params(np.random.default_rng(0)), draw, opt, seed=0)
    y = np.array([[1.5, -1.2, 1.8, -1.1], [1.3, 1.6, -1.4, 1.2]])
    score = net.score_fn(p)

    def run(word, seed):
        from speechdiff.conditioning import ConditionBundle
        cond = ConditionBundle(y, y, np.zeros((2, 0)), vocab.ids(word))
        return sample(y, score, cond, S, SolverConfig(), np.random.default_rng(seed))

    keep1, keep2, shrink1 = run("keep", 1), run("keep", 2), run("shrink", 1)
    jitter = np.linalg.norm(keep1 - keep2)
    assert np.linalg.norm(keep1 - shrink1) > 10 * jitter
