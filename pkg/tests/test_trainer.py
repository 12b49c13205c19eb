import math

import numpy as np
import pytest

from dglab.data import TrainView, generate_spurious_gaussian, leave_one_domain_out
from dglab.errors import ConfigError, ContractError, NumericError
from dglab.trainer import (
    STRATEGY_ALIGN,
    STRATEGY_CE,
    STRATEGY_MASK,
    TrainConfig,
    choose_strategy,
    lr_schedule,
    train,
    train_step,
)
from dglab.models import build_mlp


def tiny_view(n_per=40, seed=0):
    ds = generate_spurious_gaussian(num_domains=3, classes=3, n_per_domain_class=n_per, seed=seed)
    view, _, _ = leave_one_domain_out(ds, "d0")
    return view


def tiny_cfg(**kwargs):
    defaults = dict(iterations=5, batch_size=16, sg_n=2, seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def test_lr_schedule_paper_defaults():
    assert lr_schedule(0.001, 0, 2000, 0.1, 0.8) == 0.001
    assert lr_schedule(0.001, 1599, 2000, 0.1, 0.8) == 0.001
    assert lr_schedule(0.001, 1600, 2000, 0.1, 0.8) == 0.0001
    assert lr_schedule(0.001, 1999, 2000, 0.1, 0.8) == 0.0001


def test_lr_schedule_fraction_one_never_decays():
    for i in (0, 999):
        assert lr_schedule(0.01, i, 1000, 0.1, 1.0) == 0.01


def test_lr_schedule_rejects_out_of_range_iteration():
    with pytest.raises(ContractError):
        lr_schedule(0.001, 2000, 2000, 0.1, 0.8)
    with pytest.raises(ContractError):
        lr_schedule(0.001, -1, 2000, 0.1, 0.8)


def test_choose_strategy_fixed_modes():
    rng = np.random.default_rng(0)
    assert choose_strategy("align_only", rng) == STRATEGY_ALIGN
    assert choose_strategy("mask_only", rng) == STRATEGY_MASK
    assert choose_strategy("ce_only", rng) == STRATEGY_CE


def test_choose_strategy_alternate_is_fair_coin():
    rng = np.random.default_rng(1)
    draws = [choose_strategy("alternate", rng) for _ in range(10_000)]
    frac_align = draws.count(STRATEGY_ALIGN) / len(draws)
    assert 0.47 <= frac_align <= 0.53
    assert set(draws) == {STRATEGY_ALIGN, STRATEGY_MASK}


def test_choose_strategy_seeded_reproducibility():
    a = [choose_strategy("alternate", np.random.default_rng(5)) for _ in range(1)]
    b = [choose_strategy("alternate", np.random.default_rng(5)) for _ in range(1)]
    assert a == b


def test_choose_strategy_even_odd():
    rng = np.random.default_rng(0)
    assert choose_strategy("alternate_even_odd", rng, iteration=0) == STRATEGY_ALIGN
    assert choose_strategy("alternate_even_odd", rng, iteration=1) == STRATEGY_MASK


def test_config_defaults_match_protocol():
    cfg = TrainConfig()
    assert cfg.alpha == 0.1
    assert cfg.m_percent == 50
    assert cfg.q_max == 70
    assert cfg.sg_n == 25
    assert cfg.sg_sigma == 0.15
    assert cfg.batch_size == 128
    assert cfg.base_lr == 0.001
    assert cfg.lr_decay_factor == 0.1
    assert cfg.lr_decay_at_fraction == 0.8
    assert cfg.min_class_ratio == 0.5
    assert cfg.momentum == 0.9
    assert cfg.strategy_mode == "alternate"


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(alpha=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(strategy_mode="bogus")
    with pytest.raises(ConfigError):
        TrainConfig(iterations=0)


def test_config_json_round_trip(tmp_path):
    cfg = TrainConfig(alpha=0.2, hidden=(16, 8), iterations=77)
    path = tmp_path / "cfg.json"
    cfg.save_json(path)
    back = TrainConfig.load_json(path)
    assert back == cfg


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"alpha": 0.1, "bogus_knob": 3}')
    with pytest.raises(ConfigError):
        TrainConfig.load_json(path)


def _run_single_step(strategy, cfg, seed=0):
    model = build_mlp([10, 8], 3, seed=3)
    rng = np.random.default_rng(seed)
    gen = np.random.default_rng(11)
    X = gen.standard_normal((16, 10))
    y = gen.integers(0, 3, 16)
    momentum = {name: np.zeros_like(p.values) for name, p in model.params.items()}
    rec = train_step(model, (X, y), strategy, cfg, 0.01, rng, momentum)
    return model, rec


def test_align_with_alpha_zero_equals_plain_ce_update():
    cfg = tiny_cfg(alpha=0.0)
    m1, r1 = _run_single_step(STRATEGY_ALIGN, cfg)
    m2, r2 = _run_single_step(STRATEGY_CE, cfg)
    assert r1["loss_ce"] == r2["loss_ce"]
    assert r1["loss_align"] is None
    for name in m1.params:
        assert np.array_equal(m1.params[name].values, m2.params[name].values)


def test_mask_with_m_zero_equals_plain_ce_update():
    cfg = tiny_cfg(m_percent=0.0)
    m1, _ = _run_single_step(STRATEGY_MASK, cfg)
    m2, _ = _run_single_step(STRATEGY_CE, cfg)
    for name in m1.params:
        assert np.array_equal(m1.params[name].values, m2.params[name].values)


def test_zero_lr_step_keeps_params_bitwise():
    model = build_mlp([10, 8], 3, seed=4)
    before = {name: p.values.copy() for name, p in model.params.items()}
    gen = np.random.default_rng(12)
    X = gen.standard_normal((16, 10))
    y = gen.integers(0, 3, 16)
    momentum = {name: np.zeros_like(p.values) for name, p in model.params.items()}
    train_step(model, (X, y), STRATEGY_CE, tiny_cfg(), 0.0, np.random.default_rng(0), momentum)
    for name, p in model.params.items():
        assert np.array_equal(p.values, before[name])
    assert any(np.abs(v).max() > 0 for v in momentum.values())


def test_train_is_deterministic():
    view = tiny_view()
    cfg = tiny_cfg(strategy_mode="alternate", iterations=8)
    m1, h1 = train(view, cfg)
    m2, h2 = train(view, cfg)
    for name in m1.params:
        assert np.array_equal(m1.params[name].values, m2.params[name].values)
    assert [r.loss_ce for r in h1.records] == [r.loss_ce for r in h2.records]


def test_history_length_and_lr_column():
    view = tiny_view()
    cfg = tiny_cfg(iterations=10, lr_decay_at_fraction=0.5)
    _, hist = train(view, cfg)
    assert len(hist) == 10
    for r in hist.records:
        assert r.lr == lr_schedule(cfg.base_lr, r.iteration, 10, cfg.lr_decay_factor, 0.5)


def test_initial_ce_loss_near_log_c():
    view = tiny_view()
    cfg = tiny_cfg(strategy_mode="ce_only", iterations=1)
    _, hist = train(view, cfg)
    assert abs(hist.records[0].loss_ce - math.log(3)) < 0.2 * math.log(3)


def test_alternate_mode_shows_both_strategies():
    view = tiny_view()
    cfg = tiny_cfg(strategy_mode="alternate", iterations=50, sg_n=1)
    _, hist = train(view, cfg)
    kinds = {r.strategy for r in hist.records}
    assert kinds == {STRATEGY_ALIGN, STRATEGY_MASK}
    align_records = [r for r in hist.records if r.strategy == STRATEGY_ALIGN]
    assert all(r.loss_align is not None for r in align_records)
    mask_records = [r for r in hist.records if r.strategy == STRATEGY_MASK]
    assert all(r.loss_align is None for r in mask_records)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises_numeric_error_with_context():
    view = tiny_view()
    cfg = tiny_cfg(strategy_mode="ce_only", iterations=40, base_lr=1e12)
    with pytest.raises(NumericError) as exc:
        train(view, cfg)
    assert "iteration" in str(exc.value)


def test_history_csv_export(tmp_path):
    view = tiny_view()
    _, hist = train(view, tiny_cfg(iterations=3, strategy_mode="ce_only"))
    path = tmp_path / "history.csv"
    hist.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,strategy,loss_ce,loss_align,lr,seconds"
    assert len(lines) == 4


def test_train_rejects_empty_view():
    with pytest.raises(ConfigError):
        train(TrainView(X=np.zeros((0, 4)), y=np.zeros(0, dtype=np.int64)), tiny_cfg())


def test_cnn_training_path():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 1, 16))
    y = rng.integers(0, 2, 60)
    # make the classes separable so the loss moves
    X[y == 1, 0, :4] += 2.0
    view = TrainView(X=X, y=y)
    cfg = TrainConfig(arch="cnn1d", channels=(4,), kernel=3, iterations=4, batch_size=8, sg_n=1, seed=0)
    model, hist = train(view, cfg)
    assert model.input_shape == (1, None)
    assert len(hist) == 4
