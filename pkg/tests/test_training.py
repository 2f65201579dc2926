"""Training-loop tests: loss algebra, determinism, selection, equivalences."""

import math

import numpy as np
import pytest

from gazescore.corpus import Essay, EssaySet, Vocabulary, build_vocab
from gazescore.gaze import BinnedGaze
from gazescore.model import EssayScorer, ModelConfig
from gazescore.numerics import backward, zero_grads
from gazescore.training import (
    GAZE_WEIGHT_GRID,
    EpochStats,
    LossBreakdown,
    TrainConfig,
    TrainExample,
    TrainingDiverged,
    dev_qwk,
    evaluate_breakdown,
    format_epoch_line,
    grid_search_gaze_weights,
    multitask_loss,
    prepare_example,
    train,
)

SETS = {3: EssaySet(3, 0, 3)}
TINY = dict(embedding_dim=4, conv_kernel=3, conv_filters=3, lstm_hidden=3,
            modeling_hidden=3, dropout=0.0, vocab_size=12)


def tiny_model(gaze=(), weights=None, seed=1, **overrides):
    params = dict(TINY)
    params.update(overrides)
    config = ModelConfig(architecture="self_attention", gaze_attributes=tuple(gaze),
                         gaze_loss_weights=weights or {}, **params)
    return EssayScorer(config, np.random.default_rng(seed))


def make_examples(n=10, with_gaze=False, seed=0, base=100):
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        n_sent = int(rng.integers(1, 4))
        sents = [[int(rng.integers(2, 12)) for _ in range(int(rng.integers(2, 6)))]
                 for _ in range(n_sent)]
        raw = i % 4
        gaze_targets = {}
        if with_gaze:
            flat = [t for s in sents for t in s]
            idx = np.arange(len(flat), dtype=np.int64)
            # bin value is a pure function of the token id
            dt = np.array([1.0 if t % 2 == 0 else 0.2 for t in flat])
            gaze_targets["DT"] = (idx, dt)
        examples.append(TrainExample(
            essay_id=i + base, set_id=3, sentence_ids=sents,
            score_target=raw / 3, raw_score=raw, gaze_targets=gaze_targets))
    return examples


def zeroed(model):
    model.load_state_dict({k: np.zeros_like(v) for k, v in model.state_dict().items()})
    return model


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_train_config_defaults_match_published_values():
    config = TrainConfig()
    assert config.batch_size == 100
    assert config.epochs == 100
    assert config.learning_rate == 0.001
    assert config.momentum == 0.9
    assert config.gaze_weight_grid == (0.5, 0.1, 0.05, 0.01, 0.001)
    assert GAZE_WEIGHT_GRID == (0.5, 0.1, 0.05, 0.01, 0.001)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(selection="last-epoch")


# ---------------------------------------------------------------------------
# multitask loss
# ---------------------------------------------------------------------------

def test_loss_score_only_half_prediction():
    # zero parameters make the score exactly 0.5; target 1.0 -> MSE 0.25
    model = zeroed(tiny_model())
    example = make_examples(1)[0]
    example.score_target = 1.0
    outputs = [model.forward(example.sentence_ids)]
    loss, breakdown = multitask_loss(outputs, [example], {})
    assert float(loss.data) == pytest.approx(0.25)
    assert breakdown.score_mse == pytest.approx(0.25)
    assert breakdown.weighted_total == pytest.approx(0.25)
    assert breakdown.gaze_token_count == 0


def test_loss_without_gaze_labels_equals_score_mse():
    model = tiny_model(gaze=("DT",), weights={"DT": 0.5})
    examples = make_examples(3)  # no gaze targets attached
    outputs = [model.forward(ex.sentence_ids) for ex in examples]
    _, breakdown = multitask_loss(outputs, examples, {"DT": 0.5})
    assert breakdown.weighted_total == pytest.approx(breakdown.score_mse)
    assert breakdown.gaze_mse["DT"] == 0.0


def test_loss_perfect_predictions_vanish():
    model = tiny_model(gaze=("DT",))
    example = make_examples(1, with_gaze=True)[0]
    out = model.forward(example.sentence_ids)
    example.score_target = out.score_value
    idx = example.gaze_targets["DT"][0]
    example.gaze_targets["DT"] = (idx, out.gaze_predictions["DT"].data[idx, 0].copy())
    _, breakdown = multitask_loss([out], [example], {"DT": 0.5})
    assert breakdown.score_mse == pytest.approx(0.0, abs=1e-18)
    assert breakdown.gaze_mse["DT"] == pytest.approx(0.0, abs=1e-18)
    assert breakdown.weighted_total == pytest.approx(0.0, abs=1e-18)


def test_loss_weighted_total_identity():
    model = tiny_model(gaze=("DT",))
    examples = make_examples(4, with_gaze=True)
    outputs = [model.forward(ex.sentence_ids) for ex in examples]
    weights = {"DT": 0.05}
    loss, breakdown = multitask_loss(outputs, examples, weights)
    assert breakdown.weighted_total == pytest.approx(
        breakdown.score_mse + 0.05 * breakdown.gaze_mse["DT"])
    assert float(loss.data) == pytest.approx(breakdown.weighted_total)


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        multitask_loss([], [], {})


def test_loss_batch_composition_invariance():
    # union loss equals the count-weighted mean of split losses
    model = tiny_model(gaze=("DT",))
    examples = make_examples(6, with_gaze=True)
    outputs = [model.forward(ex.sentence_ids) for ex in examples]
    _, union = multitask_loss(outputs, examples, {"DT": 0.1})
    _, part_a = multitask_loss(outputs[:2], examples[:2], {"DT": 0.1})
    _, part_b = multitask_loss(outputs[2:], examples[2:], {"DT": 0.1})
    score_mean = (part_a.score_mse * 2 + part_b.score_mse * 4) / 6
    assert union.score_mse == pytest.approx(score_mean, rel=1e-12)
    tokens_a = part_a.gaze_token_counts["DT"]
    tokens_b = part_b.gaze_token_counts["DT"]
    gaze_mean = (part_a.gaze_mse["DT"] * tokens_a + part_b.gaze_mse["DT"] * tokens_b) \
        / (tokens_a + tokens_b)
    assert union.gaze_mse["DT"] == pytest.approx(gaze_mean, rel=1e-12)
    assert union.gaze_token_counts["DT"] == tokens_a + tokens_b


def test_zero_weight_terms_stay_out_of_the_graph():
    model = tiny_model(gaze=("DT",))
    examples = make_examples(2, with_gaze=True)
    outputs = [model.forward(ex.sentence_ids) for ex in examples]
    loss, breakdown = multitask_loss(outputs, examples, {"DT": 0.0})
    assert breakdown.gaze_mse["DT"] > 0.0  # still measured
    params = model.parameters()
    zero_grads(params)
    backward(loss, parameters=params)
    named = model.named_parameters()
    np.testing.assert_array_equal(named["gaze.DT.w"].grad,
                                  np.zeros_like(named["gaze.DT.w"].data))
    assert np.any(named["conv.w"].grad != 0)


# ---------------------------------------------------------------------------
# example preparation
# ---------------------------------------------------------------------------

def test_prepare_example_encodes_and_collects_targets():
    essay = Essay(essay_id=7, set_id=3,
                  sentences=[["alpha", "beta"], ["gamma"]],
                  raw_score=2, normalized_score=2 / 3)
    binned = BinnedGaze(dt_bin=5, ffd_bin=0, ir_bin=1, rc_bin=2, skip_bin=0)
    essay.gaze = {
        "r2": [None, binned, None],
        "r1": [binned, None, None],
    }
    vocab = build_vocab([Essay(1, 3, [["alpha", "beta", "gamma"]], 1, 1 / 3)])
    example = prepare_example(essay, vocab)
    assert example.essay_id == 7
    assert example.sentence_ids == [[vocab.index("alpha"), vocab.index("beta")],
                                    [vocab.index("gamma")]]
    assert example.score_target == pytest.approx(2 / 3)
    idx, values = example.gaze_targets["DT"]
    # readers iterate in sorted order: r1 labels token 0, r2 labels token 1
    np.testing.assert_array_equal(idx, [0, 1])
    np.testing.assert_allclose(values, [1.0, 1.0])
    idx_rc, values_rc = example.gaze_targets["RC"]
    np.testing.assert_allclose(values_rc, [0.4, 0.4])


def test_prepare_example_without_gaze():
    essay = Essay(essay_id=7, set_id=3, sentences=[["alpha"]],
                  raw_score=0, normalized_score=0.0)
    vocab = build_vocab([essay])
    assert prepare_example(essay, vocab).gaze_targets == {}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_identical_seeds_identical_histories():
    def run():
        model = tiny_model(gaze=("DT",), weights={"DT": 0.1})
        result = train(model, make_examples(6, with_gaze=True), make_examples(3, seed=9, base=900),
                       TrainConfig(batch_size=2, epochs=3, seed=5), SETS)
        return result

    a, b = run(), run()
    assert [s.breakdown.score_mse for s in a.history] == \
           [s.breakdown.score_mse for s in b.history]
    assert [s.dev_qwk for s in a.history] == [s.dev_qwk for s in b.history]
    for name in a.final_state:
        np.testing.assert_array_equal(a.final_state[name], b.final_state[name])


def test_zero_epochs_returns_initial_checkpoint():
    model = tiny_model()
    before = model.state_dict()
    result = train(model, make_examples(4), [], TrainConfig(epochs=0, seed=0), SETS)
    assert result.history == []
    assert math.isnan(result.best_dev_qwk)
    for name, arr in before.items():
        np.testing.assert_array_equal(result.best_state[name], arr)
    assert isinstance(result.initial, LossBreakdown)


def test_overfit_smoke_ten_essays():
    # 10-essay synthetic set, 200 epochs at lr 0.001 drives score MSE
    # under 1e-3 (frozen development oracle)
    model = tiny_model(embedding_dim=8, conv_filters=6, lstm_hidden=6,
                       modeling_hidden=6)
    result = train(model, make_examples(10), [],
                   TrainConfig(batch_size=1, epochs=200, seed=7), SETS)
    assert result.history[-1].breakdown.score_mse < 1e-3


def test_gaze_mse_halves_on_deterministic_bins():
    # gaze targets are a pure function of token identity, so 100 epochs
    # must cut the configured attribute's MSE by at least half
    model = tiny_model(gaze=("DT",), weights={"DT": 0.5})
    result = train(model, make_examples(8, with_gaze=True), [],
                   TrainConfig(batch_size=2, epochs=100, seed=7), SETS)
    assert result.initial.gaze_mse["DT"] > 0
    assert result.history[-1].breakdown.gaze_mse["DT"] \
        <= 0.5 * result.initial.gaze_mse["DT"]


def test_divergence_aborts_with_diagnostics():
    model = tiny_model()
    model.embedding.data[2, 0] = np.nan
    with pytest.raises(TrainingDiverged) as excinfo:
        train(model, make_examples(4), [], TrainConfig(batch_size=2, epochs=1, seed=0),
              SETS)
    assert excinfo.value.epoch == 1
    assert excinfo.value.batch_index == 0
    assert "embedding" in excinfo.value.param_norms
    assert "epoch 1" in str(excinfo.value)


def test_train_rejects_overlapping_dev():
    examples = make_examples(4)
    with pytest.raises(ValueError, match="overlap"):
        train(tiny_model(), examples, examples[:1], TrainConfig(epochs=1), SETS)


def test_warning_when_attribute_unlabeled():
    model = tiny_model(gaze=("IR",), weights={"IR": 0.01})
    with pytest.warns(UserWarning, match="IR"):
        train(model, make_examples(2), [], TrainConfig(epochs=0, seed=0), SETS)


def test_checkpoint_selection_best_dev_qwk():
    model = tiny_model()
    result = train(model, make_examples(8), make_examples(4, seed=33, base=900),
                   TrainConfig(batch_size=2, epochs=5, seed=3), SETS)
    qwks = [s.dev_qwk for s in result.history]
    best = max(qwks)
    assert result.best_dev_qwk == best
    # ties break toward the earlier epoch
    assert result.best_epoch == qwks.index(best) + 1


def test_empty_dev_selects_final_checkpoint():
    model = tiny_model()
    result = train(model, make_examples(4), [],
                   TrainConfig(batch_size=2, epochs=3, seed=0), SETS)
    assert all(math.isnan(s.dev_qwk) for s in result.history)
    for name in result.final_state:
        np.testing.assert_array_equal(result.best_state[name], result.final_state[name])
    assert result.best_epoch == 3


def test_zero_gaze_weight_run_matches_no_gaze_loss_run_bitwise():
    def run(weights):
        model = tiny_model(gaze=("DT", "Skip"), weights=weights, seed=2)
        examples = make_examples(6, with_gaze=True)
        with pytest.warns(UserWarning, match="Skip"):  # Skip has no labels here
            return train(model, examples, make_examples(3, seed=9, base=900),
                         TrainConfig(batch_size=3, epochs=3, seed=11), SETS)

    zero_weighted = run({"DT": 0.0, "Skip": 0.0})
    unweighted = run({})
    for name in zero_weighted.final_state:
        np.testing.assert_array_equal(zero_weighted.final_state[name],
                                      unweighted.final_state[name])
    assert [s.dev_qwk for s in zero_weighted.history] == \
           [s.dev_qwk for s in unweighted.history]


def test_zero_gaze_weight_run_matches_headless_model_on_shared_parameters():
    examples = make_examples(6, with_gaze=True)
    dev = make_examples(3, seed=9, base=900)
    config = TrainConfig(batch_size=3, epochs=3, seed=11)
    with_heads = train(tiny_model(gaze=("DT",), weights={"DT": 0.0}, seed=2),
                       examples, dev, config, SETS)
    headless = train(tiny_model(seed=2), examples, dev, config, SETS)
    for name, arr in headless.final_state.items():
        np.testing.assert_array_equal(with_heads.final_state[name], arr)
    # the unused heads never moved from their initial values
    init = tiny_model(gaze=("DT",), weights={"DT": 0.0}, seed=2).state_dict()
    np.testing.assert_array_equal(with_heads.final_state["gaze.DT.w"],
                                  init["gaze.DT.w"])


def test_training_log_lines():
    lines = []
    model = tiny_model(gaze=("DT",), weights={"DT": 0.1})
    train(model, make_examples(4, with_gaze=True), make_examples(2, seed=9, base=900),
          TrainConfig(batch_size=2, epochs=2, seed=0), SETS, log=lines.append)
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 ")
    assert "score_mse=" in lines[0]
    assert "gaze_mse_DT=" in lines[0]
    assert "dev_qwk=" in lines[0]


def test_format_epoch_line_is_key_value():
    stats = EpochStats(
        epoch=3,
        breakdown=LossBreakdown(score_mse=0.5, gaze_mse={"DT": 0.25},
                                weighted_total=0.525, gaze_token_count=10,
                                gaze_token_counts={"DT": 10}),
        dev_qwk=0.75)
    line = format_epoch_line(stats)
    assert line == "epoch=3 score_mse=0.5 gaze_mse_DT=0.25 dev_qwk=0.75"


def test_dev_qwk_denormalizes_predictions():
    model = zeroed(tiny_model())  # predicts 0.5 -> raw 2 on the 0-3 scale
    examples = make_examples(4)
    value = dev_qwk(model, examples, SETS)
    # constant prediction against varied truth is exactly zero
    assert value == 0.0
    assert math.isnan(dev_qwk(model, [], SETS))


def test_evaluate_breakdown_runs_in_eval_mode():
    model = tiny_model(gaze=("DT",), weights={"DT": 0.5}, dropout=0.5)
    examples = make_examples(3, with_gaze=True)
    a = evaluate_breakdown(model, examples, {"DT": 0.5})
    b = evaluate_breakdown(model, examples, {"DT": 0.5})
    assert a.score_mse == b.score_mse  # no dropout noise
    assert a.gaze_token_count == b.gaze_token_count > 0


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

def test_grid_search_single_value_grid():
    best, table = grid_search_gaze_weights(
        lambda attribute, weight: [(0.3, 10)], [0.05], ["DT"])
    assert best == {"DT": 0.05}
    assert table["DT"][0.05] == pytest.approx(0.3)


def test_grid_search_picks_minimum_mse():
    results = {0.5: 0.30, 0.1: 0.20, 0.05: 0.10, 0.01: 0.15, 0.001: 0.25}

    def run_cell(attribute, weight):
        return [(results[weight], 100)]

    best, _ = grid_search_gaze_weights(run_cell, GAZE_WEIGHT_GRID, ["FFD"])
    assert best == {"FFD": 0.05}


def test_grid_search_token_weighted_fold_mean():
    def run_cell(attribute, weight):
        if weight == 0.1:
            return [(0.0, 1), (0.4, 3)]  # mean 0.3
        return [(0.25, 2), (0.25, 2)]    # mean 0.25

    best, table = grid_search_gaze_weights(run_cell, [0.1, 0.01], ["DT"])
    assert table["DT"][0.1] == pytest.approx(0.3)
    assert table["DT"][0.01] == pytest.approx(0.25)
    assert best == {"DT": 0.01}


def test_grid_search_tie_breaks_to_smaller_weight():
    best, _ = grid_search_gaze_weights(
        lambda attribute, weight: [(0.2, 5)], [0.5, 0.001, 0.05], ["Skip"])
    assert best == {"Skip": 0.001}


def test_grid_search_rejects_empty_grid():
    with pytest.raises(ValueError):
        grid_search_gaze_weights(lambda a, w: [(0.1, 1)], [], ["DT"])


def test_grid_search_rejects_unlabeled_attribute():
    with pytest.raises(ValueError, match="no labeled tokens"):
        grid_search_gaze_weights(lambda a, w: [(0.0, 0)], [0.1], ["DT"])
