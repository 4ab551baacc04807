import numpy as np
import pytest

from fdcheck import fd_gradient, max_rel_error
from sleeplens import autodiff as ad
from sleeplens import data as dio
from sleeplens import models as m
from sleeplens.autodiff import Tensor
from sleeplens.checkpoint import (
    checkpoint_dumps,
    checkpoint_from_doc,
    checkpoint_to_doc,
    load_checkpoint,
    save_checkpoint,
)
from sleeplens.errors import ContractError, DimensionError, SchemaError, UnsupportedArchError


@pytest.fixture(scope="module")
def stats():
    _, fitted = dio.preprocess(dio.synth_generate(200, 7, seed=1))
    return fitted


def _zero_lstm(input_size=3, hidden_size=4):
    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    width = hidden_size + input_size
    return m.LstmParams(
        W_i=zeros((hidden_size, width)),
        W_f=zeros((hidden_size, width)),
        W_o=zeros((hidden_size, width)),
        W_C=zeros((hidden_size, width)),
        b_i=zeros(hidden_size),
        b_f=zeros(hidden_size),
        b_o=zeros(hidden_size),
        b_C=zeros(hidden_size),
        hidden_size=hidden_size,
        input_size=input_size,
    )


def model_grad_check(checkpoint, seq, target, tol=1e-4, h=1e-5):
    """Compare every parameter gradient against central finite differences."""
    logits, _ = m.classifier_logits(checkpoint, Tensor(seq))
    loss = ad.cross_entropy(logits, target)
    ad.backward(loss)

    def loss_value():
        lg, _ = m.classifier_logits(checkpoint, Tensor(seq))
        return ad.cross_entropy(lg, target).item()

    worst = 0.0
    for name, p in checkpoint.named_parameters():
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        original = p.data.copy()

        def f(arrays):
            p.data = arrays[0]
            return loss_value()

        numeric = fd_gradient(f, [original], 0, h=h)
        p.data = original
        err = max_rel_error(analytic, numeric)
        assert err < tol, f"{checkpoint.arch}:{name} rel err {err:.2e}"
        worst = max(worst, err)
    ad.zero_grads(checkpoint.parameters())
    return worst


# ---------------------------------------------------------------------------
# LSTM


def test_lstm_cell_zero_parameters():
    p = _zero_lstm()
    h, c = m.lstm_cell_step(p, Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    assert np.array_equal(h.data, np.zeros(4))
    assert np.array_equal(c.data, np.zeros(4))


def test_lstm_cell_memory_carried_by_saturated_gates():
    p = _zero_lstm()
    p.b_f.data[:] = 30.0  # forget gate fully open
    p.b_i.data[:] = -30.0  # input gate fully closed
    c_prev = np.array([0.3, -1.2, 2.0, 0.5])
    h, c = m.lstm_cell_step(p, Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(c_prev))
    # evaluate the equations directly: c_t = sigma(30)*c_prev + sigma(-30)*tanh(0)
    expected_c = 1.0 / (1.0 + np.exp(-30.0)) * c_prev
    assert np.abs(c.data - expected_c).max() < 1e-15
    assert np.abs(c.data - c_prev).max() < 1e-9
    assert np.abs(h.data - 0.5 * np.tanh(c_prev)).max() < 1e-9


def test_lstm_cell_state_growth_bounded():
    rng = np.random.default_rng(0)
    stats_rng = np.random.default_rng(1)
    p = m.init_lstm_params(stats_rng, 3, 4)
    c = Tensor(rng.normal(size=4))
    for _ in range(5):
        h, c_next = m.lstm_cell_step(p, Tensor(rng.normal(size=3)), Tensor(rng.normal(size=4)), c)
        assert np.all(np.abs(c_next.data) <= np.abs(c.data) + 1.0 + 1e-12)
        c = c_next


def test_lstm_cell_shape_mismatch():
    p = _zero_lstm()
    with pytest.raises(DimensionError):
        m.lstm_cell_step(p, Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)))


def test_lstm_cell_gradients_single_step():
    rng = np.random.default_rng(2)
    p = m.init_lstm_params(rng, 3, 4)
    x = rng.normal(size=3)
    proj = rng.normal(size=4)

    def forward():
        h, _ = m.lstm_cell_step(p, Tensor(x), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        return ad.tensor_sum(h * Tensor(proj))

    loss = forward()
    ad.backward(loss)
    for name, t in p.named():
        analytic = t.grad.copy()
        original = t.data.copy()

        def f(arrays):
            t.data = arrays[0]
            return forward().item()

        numeric = fd_gradient(f, [original], 0)
        t.data = original
        assert max_rel_error(analytic, numeric) < 1e-4, name


def test_lstm_forward_t1_equals_cell_step():
    rng = np.random.default_rng(3)
    p = m.init_lstm_params(rng, 3, 4)
    x = rng.normal(size=(1, 3))
    states = m.lstm_forward(p, Tensor(x))
    h, _ = m.lstm_cell_step(p, Tensor(x[0]), Tensor(np.zeros(4)), Tensor(np.zeros(4)))
    assert np.array_equal(states.data[0], h.data)


def test_lstm_forward_empty_sequence_rejected():
    p = _zero_lstm()
    with pytest.raises(ContractError):
        m.lstm_forward(p, Tensor(np.zeros((0, 3))))


def test_lstm_forward_converges_on_constant_input():
    rng = np.random.default_rng(4)
    p = m.init_lstm_params(rng, 3, 8)
    seq = np.tile(rng.normal(size=3), (200, 1))
    states = m.lstm_forward(p, Tensor(seq)).data
    deltas = np.linalg.norm(np.diff(states, axis=0), axis=1)
    after_burn_in = deltas[50:]
    assert np.all(np.diff(after_burn_in) <= 1e-12)


def test_lstm_forward_prefix_causality():
    rng = np.random.default_rng(5)
    p = m.init_lstm_params(rng, 3, 4)
    seq = rng.normal(size=(6, 3))
    base = m.lstm_forward(p, Tensor(seq)).data
    seq2 = seq.copy()
    seq2[4:] += 10.0
    out = m.lstm_forward(p, Tensor(seq2)).data
    assert np.array_equal(out[:4], base[:4])


def test_lstm_forward_batched_matches_single():
    rng = np.random.default_rng(6)
    p = m.init_lstm_params(rng, 3, 4)
    seqs = rng.normal(size=(5, 6, 3))
    batched = m.lstm_forward(p, Tensor(seqs)).data
    for i in range(5):
        single = m.lstm_forward(p, Tensor(seqs[i])).data
        assert np.allclose(batched[i], single, atol=1e-12)


# ---------------------------------------------------------------------------
# TCN


def test_tcn_single_block_identity_kernel_residual():
    block = m.TcnBlockParams(
        kernel=Tensor(np.eye(1)[None], requires_grad=True),
        bias=Tensor(np.zeros(1), requires_grad=True),
        dilation=1,
    )
    params = m.TcnParams(blocks=[block])
    x = np.array([[-1.0], [1.0]])
    out = m.tcn_forward(params, Tensor(x)).data
    assert np.array_equal(out, np.maximum(0, x) + x)  # [[-1], [2]]


def test_tcn_dilations_must_be_powers_of_two():
    block = m.TcnBlockParams(
        kernel=Tensor(np.eye(1)[None]), bias=Tensor(np.zeros(1)), dilation=3
    )
    with pytest.raises(ContractError):
        m.TcnParams(blocks=[block])


def test_tcn_receptive_field_and_probe():
    rng = np.random.default_rng(7)
    params = m.init_tcn_params(rng, 2, 4, n_blocks=3, kernel_width=3)
    assert params.receptive_field == 15

    t_len = 40
    x = rng.normal(size=(t_len, 2))
    base = m.tcn_forward(params, Tensor(x)).data
    t = 30
    # beyond the receptive field: no effect
    x_far = x.copy()
    x_far[: t - 14] += rng.normal(size=x_far[: t - 14].shape)
    far = m.tcn_forward(params, Tensor(x_far)).data
    assert np.array_equal(far[t], base[t])
    # inside the receptive field: effect (generic weights)
    x_near = x.copy()
    x_near[t - 14] += 1.0
    near = m.tcn_forward(params, Tensor(x_near)).data
    assert not np.array_equal(near[t], base[t])


def test_tcn_channel_mismatch():
    rng = np.random.default_rng(8)
    params = m.init_tcn_params(rng, 2, 4, n_blocks=2, kernel_width=3)
    with pytest.raises(DimensionError):
        m.tcn_forward(params, Tensor(np.zeros((5, 3))))


# ---------------------------------------------------------------------------
# attention


def test_attention_single_step():
    rng = np.random.default_rng(9)
    p = m.init_attention_params(rng, 4)
    h = rng.normal(size=(1, 4))
    context, scores = m.attention_forward(p, Tensor(h))
    assert np.array_equal(scores.data, [1.0])
    assert np.array_equal(context.data, h[0])


def test_attention_identical_states_uniform():
    rng = np.random.default_rng(10)
    p = m.init_attention_params(rng, 4)
    h = np.tile(rng.normal(size=4), (6, 1))
    _, scores = m.attention_forward(p, Tensor(h))
    assert np.allclose(scores.data, np.full(6, 1 / 6), atol=1e-12)
    assert abs(scores.data.sum() - 1.0) < 1e-12


def test_attention_dominant_score_wins():
    # alignment weights chosen so one state scores +10, the others 0
    p = m.AttentionParams(weights=Tensor(np.array([10.0, 0.0])), bias=Tensor(0.0))
    h = np.array([[0.0, 1.0], [0.0, 2.0], [1.0, 3.0], [0.0, 4.0]])
    context, scores = m.attention_forward(p, Tensor(h))
    assert scores.data[2] > 0.99
    assert np.abs(context.data - h[2]).max() < 0.15
    assert abs(scores.data.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# TFT variable selection


def test_tft_select_uniform_scores():
    F = 5
    p = m.TftLiteParams(
        select_score_w=Tensor(np.zeros(F)),
        select_score_b=Tensor(np.zeros(F)),
        select_w=Tensor(np.ones(F)),
        select_b=Tensor(np.zeros(F)),
        encoder=_zero_lstm(F, 4),
        attention=m.AttentionParams(weights=Tensor(np.zeros(4)), bias=Tensor(0.0)),
    )
    _, weights = m.tft_variable_select(p, Tensor(np.arange(F, dtype=float)))
    assert np.allclose(weights.data, np.full(F, 1 / F), atol=1e-12)


def test_tft_select_dominant_feature():
    F = 4
    score_b = np.zeros(F)
    score_b[2] = 20.0
    p = m.TftLiteParams(
        select_score_w=Tensor(np.zeros(F)),
        select_score_b=Tensor(score_b),
        select_w=Tensor(np.ones(F)),
        select_b=Tensor(np.zeros(F)),
        encoder=_zero_lstm(F, 4),
        attention=m.AttentionParams(weights=Tensor(np.zeros(4)), bias=Tensor(0.0)),
    )
    _, weights = m.tft_variable_select(p, Tensor(np.ones(F)))
    assert weights.data[2] > 0.999
    assert abs(weights.data.sum() - 1.0) < 1e-12


def test_tft_select_zero_projection_annihilates():
    F = 3
    p = m.TftLiteParams(
        select_score_w=Tensor(np.random.default_rng(11).normal(size=F)),
        select_score_b=Tensor(np.zeros(F)),
        select_w=Tensor(np.zeros(F)),
        select_b=Tensor(np.zeros(F)),
        encoder=_zero_lstm(F, 4),
        attention=m.AttentionParams(weights=Tensor(np.zeros(4)), bias=Tensor(0.0)),
    )
    selected, _ = m.tft_variable_select(p, Tensor(np.array([5.0, -2.0, 7.0])))
    assert np.array_equal(selected.data, np.zeros(F))


def test_tft_select_feature_count_mismatch():
    p = m.init_tft_params(np.random.default_rng(12), 5, 4)
    with pytest.raises(DimensionError):
        m.tft_variable_select(p, Tensor(np.zeros(6)))


# ---------------------------------------------------------------------------
# classifier assembly


def _tiny_checkpoint(arch, stats, seed=0):
    hyper = {"hidden_size": 8, "tcn_channels": 8, "tcn_blocks": 2, "tcn_kernel": 3}
    return m.init_checkpoint(arch, stats, seed=seed, hyper=hyper)


def test_classifier_zero_head_uniform_probs(stats):
    ckpt = _tiny_checkpoint("lstm", stats)
    ckpt.head.weights.data[:] = 0.0
    ckpt.head.bias.data[:] = 0.0
    seq = np.random.default_rng(13).normal(size=(5, ckpt.input_width))
    probs, _ = m.classifier_predict(ckpt, Tensor(seq))
    assert np.allclose(probs.data, np.full(3, 1 / 3), atol=1e-12)


def test_classifier_head_bias_shift_invariance(stats):
    rng = np.random.default_rng(14)
    ckpt = _tiny_checkpoint("tcn", stats)
    seq = rng.normal(size=(6, ckpt.input_width))
    probs, _ = m.classifier_predict(ckpt, Tensor(seq))
    ckpt.head.bias.data += 5.0
    shifted, _ = m.classifier_predict(ckpt, Tensor(seq))
    assert np.argmax(probs.data) == np.argmax(shifted.data)
    assert np.allclose(probs.data, shifted.data, atol=1e-9)


def test_classifier_schema_mismatch_names_expected_width(stats):
    ckpt = _tiny_checkpoint("lstm", stats)
    with pytest.raises(SchemaError, match=str(ckpt.input_width)):
        m.classifier_predict(ckpt, Tensor(np.zeros((4, 3))))


@pytest.mark.parametrize("arch", m.ARCHS)
def test_classifier_internals_and_probs(arch, stats):
    rng = np.random.default_rng(15)
    ckpt = _tiny_checkpoint(arch, stats)
    seq = rng.normal(size=(7, ckpt.input_width))
    probs, internals = m.classifier_predict(ckpt, Tensor(seq))
    assert abs(probs.data.sum() - 1.0) < 1e-9
    assert "hidden_states" in internals
    if arch in ("lstm", "tft"):
        scores = internals["attention_scores"].data
        assert abs(scores.sum() - 1.0) < 1e-12
    if arch == "tft":
        w = internals["selection_weights"].data
        assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(w >= 0)


@pytest.mark.parametrize("arch", m.ARCHS)
def test_classifier_per_step_causality(arch, stats):
    rng = np.random.default_rng(16)
    ckpt = _tiny_checkpoint(arch, stats)
    seq = rng.normal(size=(7, ckpt.input_width))
    _, internals = m.classifier_predict(ckpt, Tensor(seq))
    base = internals["hidden_states"].data
    seq2 = seq.copy()
    seq2[5:] += 3.0
    _, internals2 = m.classifier_predict(ckpt, Tensor(seq2))
    assert np.array_equal(internals2["hidden_states"].data[:5], base[:5])


@pytest.mark.parametrize("arch", m.ARCHS)
def test_classifier_batched_matches_single(arch, stats):
    rng = np.random.default_rng(17)
    ckpt = _tiny_checkpoint(arch, stats)
    seqs = rng.normal(size=(4, 7, ckpt.input_width))
    batched = m.predict_proba(ckpt, seqs)
    for i in range(4):
        single, _ = m.classifier_predict(ckpt, Tensor(seqs[i]))
        assert np.allclose(batched[i], single.data, atol=1e-12)


@pytest.mark.parametrize("arch", m.ARCHS)
def test_end_to_end_parameter_gradients(arch, stats):
    rng = np.random.default_rng(18)
    ckpt = _tiny_checkpoint(arch, stats, seed=5)
    seq = rng.normal(size=(4, ckpt.input_width))
    model_grad_check(ckpt, seq, target=1, tol=1e-4)


# ---------------------------------------------------------------------------
# checkpoint round trip


@pytest.mark.parametrize("arch", m.ARCHS)
def test_checkpoint_round_trip_bit_exact(arch, stats, tmp_path):
    rng = np.random.default_rng(19)
    ckpt = _tiny_checkpoint(arch, stats, seed=9)
    path = tmp_path / f"{arch}.json"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)

    seq = rng.normal(size=(7, ckpt.input_width))
    before, _ = m.classifier_predict(ckpt, Tensor(seq))
    after, _ = m.classifier_predict(loaded, Tensor(seq))
    assert before.data.tobytes() == after.data.tobytes()

    # save -> load -> save is byte-identical
    assert checkpoint_dumps(loaded) == path.read_text()


def test_checkpoint_doc_rejects_foreign_format():
    with pytest.raises(SchemaError):
        checkpoint_from_doc({"format": "something-else"})


def test_unknown_arch_rejected(stats):
    with pytest.raises(UnsupportedArchError):
        m.init_checkpoint("transformer", stats)


def test_checkpoint_doc_is_plain_json(stats):
    import json

    doc = checkpoint_to_doc(_tiny_checkpoint("tft", stats))
    text = json.dumps(doc)
    assert json.loads(text)["arch"] == "tft"
