"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The synthetic benchmark protocol is fixed here: 422 subjects at seed
21, split 400/22, one training run per architecture with the library
defaults (per-architecture learning rates).
"""

import itertools
import json
import threading
import time

import numpy as np
import pytest

from fdcheck import fd_gradient, max_rel_error
from sleeplens import autodiff as ad
from sleeplens import data as dio
from sleeplens import explain as ex
from sleeplens import models as m
from sleeplens import training as tr
from sleeplens.autodiff import Tensor
from sleeplens.checkpoint import load_checkpoint, save_checkpoint
from sleeplens.cli import main as cli_main
from sleeplens.docio import canonical_dumps

ACCEPTANCE_SEED = 21
SUBJECTS = 422
TRAIN_N, TEST_N = 400, 22
TIMESTEPS = 7
BENCHMARK_BUDGET_SECONDS = 600


def _report(name, ok):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance criterion failed: {name}"


@pytest.fixture(scope="session")
def benchmark():
    """Train all three architectures once on the fixed synthetic benchmark."""
    t0 = time.monotonic()
    sequences = dio.synth_generate(SUBJECTS, TIMESTEPS, seed=ACCEPTANCE_SEED)
    split = tr.prepare_split(sequences, TRAIN_N, TEST_N, seed=ACCEPTANCE_SEED)
    checkpoints, metrics = {}, {}
    for arch in m.ARCHS:
        cfg = tr.TrainConfig(arch=arch, seed=ACCEPTANCE_SEED, epochs=300)
        checkpoints[arch], _ = tr.train(split, cfg)
        metrics[arch] = tr.evaluate(checkpoints[arch], split.test)
    elapsed = time.monotonic() - t0
    return {"split": split, "checkpoints": checkpoints, "metrics": metrics, "seconds": elapsed}


# ---------------------------------------------------------------------------
# criterion 1: gradient fidelity at T=8, F=14, hidden=8


def _head_logits(head, features):
    return ad.matmul(head.weights, features) + head.bias


def _arch_forward(arch, params, seq_tensor):
    if arch == "lstm":
        cell, attention, head = params
        hidden = m.lstm_forward(cell, seq_tensor)
        context, _ = m.attention_forward(attention, hidden)
        return _head_logits(head, context)
    if arch == "tcn":
        tcn, head = params
        features = m.tcn_forward(tcn, seq_tensor)
        return _head_logits(head, ad.getitem(features, (features.shape[0] - 1, slice(None))))
    tft, head = params
    context, _, _, _ = m.tft_forward(tft, seq_tensor)
    return _head_logits(head, context)


def _arch_named_params(arch, params):
    if arch == "lstm":
        cell, attention, head = params
        return cell.named("cell.") + attention.named("attention.") + head.named()
    if arch == "tcn":
        tcn, head = params
        return tcn.named("tcn.") + head.named()
    tft, head = params
    return tft.named("tft.") + head.named()


def _build_arch(arch, rng, n_features, hidden):
    head = m.Head(
        weights=Tensor(rng.uniform(-0.3, 0.3, size=(3, hidden)), requires_grad=True),
        bias=Tensor(np.zeros(3), requires_grad=True),
    )
    if arch == "lstm":
        return (m.init_lstm_params(rng, n_features, hidden),
                m.init_attention_params(rng, hidden), head)
    if arch == "tcn":
        return (m.init_tcn_params(rng, n_features, hidden, n_blocks=3, kernel_width=3), head)
    return (m.init_tft_params(rng, n_features, hidden), head)


def test_criterion_gradient_fidelity():
    T, F, H = 8, 14, 8
    t0 = time.monotonic()
    worst = {}
    for arch in m.ARCHS:
        rng = np.random.default_rng(100)
        params = _build_arch(arch, rng, F, H)
        seq = rng.normal(size=(T, F))
        target = 1

        loss = ad.cross_entropy(_arch_forward(arch, params, Tensor(seq)), target)
        ad.backward(loss)

        worst_err = 0.0
        for name, p in _arch_named_params(arch, params):
            analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
            original = p.data.copy()

            def f(arrays):
                p.data = arrays[0]
                value = ad.cross_entropy(_arch_forward(arch, params, Tensor(seq)), target).item()
                return value

            numeric = fd_gradient(f, [original], 0, h=1e-5)
            p.data = original
            err = max_rel_error(analytic, numeric)
            assert err < 1e-4, f"{arch}:{name} rel err {err:.3e}"
            worst_err = max(worst_err, err)
        worst[arch] = worst_err
        ad.zero_grads([t for _, t in _arch_named_params(arch, params)])
    elapsed = time.monotonic() - t0
    print(f"\n  worst relative errors: { {k: f'{v:.2e}' for k, v in worst.items()} }, {elapsed:.1f}s")
    _report("gradient-fidelity", all(v < 1e-4 for v in worst.values()) and elapsed < 60)


# ---------------------------------------------------------------------------
# criterion 2: Shapley axiom suite


def test_criterion_shapley_axioms():
    t0 = time.monotonic()
    seqs = dio.synth_generate(60, 3, seed=2)
    processed, stats = dio.preprocess(seqs)
    instance, background = processed[0], processed[1:21]
    cols = dio.feature_column_slices(stats)

    # efficiency on a nonlinear model, exact mode
    subset = ["stress_level", "quality_of_sleep", "heart_rate", "sleep_duration",
              "daily_steps", "systolic_bp"]
    idx = [cols[n].start for n in subset]
    rng = np.random.default_rng(0)
    w1 = rng.normal(size=len(idx))

    def nonlinear(batch):
        score = np.tanh(batch[:, :, idx].sum(axis=1) @ w1)
        return np.stack([-score, score], axis=1)

    exact = ex.shap_exact(nonlinear, instance, background, 1, stats=stats, feature_subset=subset)
    efficiency_ok = exact.efficiency_residual < 1e-6

    # symmetry: interchangeable features get equal attribution
    sym_instance = instance.copy()
    sym_background = [b.copy() for b in background]
    for seq in [sym_instance] + sym_background:
        for fv in seq.timesteps:
            fv.quality_of_sleep = fv.stress_level
    _, sym_stats = dio.preprocess(sym_background)
    sym_stats.continuous["quality_of_sleep"] = dict(sym_stats.continuous["stress_level"])
    a_col, b_col = cols["stress_level"].start, cols["quality_of_sleep"].start

    def symmetric(batch):
        score = np.tanh((batch[:, :, a_col] + batch[:, :, b_col]).sum(axis=1))
        return np.stack([-score, score], axis=1)

    sym_report = ex.shap_exact(symmetric, sym_instance, sym_background, 1, stats=sym_stats,
                               feature_subset=["stress_level", "quality_of_sleep", "age"])
    phi = sym_report.per_feature()
    symmetry_ok = abs(phi[0] - phi[1]) < 1e-9
    null_ok = abs(phi[2]) < 1e-9  # the model ignores age entirely

    # kernel vs exact at P=6, n=2000, median over 20 seeds
    def random_model(seed):
        r = np.random.default_rng(seed)
        v1, v2 = r.normal(size=len(idx)), r.normal(size=len(idx))

        def fn(batch):
            z = batch[:, :, idx].sum(axis=1)
            score = np.tanh(z @ v1) + 0.3 * np.sin(z) @ v2
            return np.stack([-score, score], axis=1)

        return fn

    deviations = []
    for seed in range(20):
        fn = random_model(seed)
        kw = dict(stats=stats, feature_subset=subset)
        phi_exact = ex.shap_exact(fn, instance, background, 1, **kw).per_feature()
        phi_kernel = ex.shap_kernel(fn, instance, background, 1,
                                    n_samples=2000, seed=seed, **kw).per_feature()
        deviations.append(np.abs(phi_kernel - phi_exact).max() / np.abs(phi_exact).max())
    kernel_ok = float(np.median(deviations)) < 0.05

    elapsed = time.monotonic() - t0
    print(f"\n  efficiency residual {exact.efficiency_residual:.2e}, "
          f"symmetry gap {abs(phi[0] - phi[1]):.2e}, null {abs(phi[2]):.2e}, "
          f"kernel median dev {np.median(deviations):.2e}, {elapsed:.1f}s")
    _report("shapley-axioms",
            efficiency_ok and symmetry_ok and null_ok and kernel_ok and elapsed < 120)


# ---------------------------------------------------------------------------
# criterion 3: synthetic benchmark


def test_criterion_benchmark_accuracy(benchmark):
    lines = []
    ok = benchmark["seconds"] < BENCHMARK_BUDGET_SECONDS
    for arch in m.ARCHS:
        metrics = benchmark["metrics"][arch]
        lines.append(f"{arch}: acc {metrics.accuracy:.4f}, loss {metrics.mean_loss:.4f}")
        ok = ok and metrics.accuracy >= 0.90 and metrics.mean_loss <= 0.50
    print("\n  " + "; ".join(lines) + f"; total {benchmark['seconds']:.0f}s")
    _report("synthetic-benchmark", ok)


# ---------------------------------------------------------------------------
# criterion 4: decision-rule consistency on the trained model


def _rule_positive(seq):
    quality = np.mean([fv.quality_of_sleep for fv in seq.timesteps])
    stress = np.mean([fv.stress_level for fv in seq.timesteps])
    heart = seq.timesteps[-1].heart_rate
    return dio.rule_label(quality, stress, heart)


def test_criterion_rule_consistency(benchmark):
    ckpt = benchmark["checkpoints"]["lstm"]
    split = benchmark["split"]
    positives = [s for s in split.test if _rule_positive(s)]
    assert positives, "benchmark seed produced no rule-positive test instances"
    hits = 0
    for seq in positives:
        enc = dio.encode_array(seq, ckpt.normalization_stats)
        pred = int(m.predict_proba(ckpt, enc[None])[0].argmax())
        hits += pred != 0
    rate = hits / len(positives)
    print(f"\n  {hits}/{len(positives)} rule-positive test instances predicted as disorder")
    _report("rule-consistency", rate >= 0.90)


# ---------------------------------------------------------------------------
# criterion 5: attribution ranking


def test_criterion_shap_ranking(benchmark):
    ckpt = benchmark["checkpoints"]["lstm"]
    split = benchmark["split"]
    positives = [s for s in split.test if s.label != dio.NO_DISORDER]
    background = split.train[:25]
    totals = None
    for seq in positives:
        target = dio.label_index(seq.label)
        report = ex.shap_exact(ckpt, seq, background, target)
        assert report.efficiency_residual < 1e-6
        magnitudes = np.abs(report.per_feature())
        totals = magnitudes if totals is None else totals + magnitudes
        names = report.feature_names
    mean_importance = totals / len(positives)
    top3 = {names[i] for i in np.argsort(-mean_importance)[:3]}
    print(f"\n  top-3 features by mean |attribution|: {sorted(top3)}")
    _report("shap-ranking", {"stress_level", "quality_of_sleep"} <= top3)


# ---------------------------------------------------------------------------
# criterion 6: counterfactual exemplar


def _stress_grid_minimum(ckpt, instance, target_class):
    original = instance.timesteps[-1].stress_level
    lo, hi = dio.SCHEMA_BY_NAME["stress_level"].domain
    for value in sorted((float(v) for v in range(int(lo), int(hi) + 1)),
                        key=lambda v: (abs(v - original), v)):
        if value == original:
            continue
        candidate = instance.copy()
        for fv in candidate.timesteps:
            fv.stress_level = value
        enc = dio.encode_array(candidate, ckpt.normalization_stats)
        if int(m.predict_proba(ckpt, enc[None])[0].argmax()) == target_class:
            return abs(value - original)
    return None


def test_criterion_counterfactual_exemplar(benchmark):
    ckpt = benchmark["checkpoints"]["lstm"]
    split = benchmark["split"]
    stats = ckpt.normalization_stats

    def predicted_class(seq):
        enc = dio.encode_array(seq, stats)
        return int(m.predict_proba(ckpt, enc[None])[0].argmax())

    candidates = [
        s for s in split.test + split.train
        if s.label != dio.NO_DISORDER
        and s.timesteps[-1].stress_level == 8.0
        and predicted_class(s) != 0
    ]
    assert candidates, "no disorder instance with stress=8 at the acceptance seed"

    weight = 1.0 / stats.continuous["stress_level"]["mad"]
    converged = valid = minimal = 0
    exemplar_checked = False
    for seq in candidates[:8]:
        cf = ex.counterfactual_search(
            ckpt, seq, 0, ex.CounterfactualConfig(mutable_features=["stress_level"])
        )
        if not cf.converged:
            continue
        converged += 1
        valid += predicted_class(cf.modified) == 0
        oracle_delta = _stress_grid_minimum(ckpt, seq, 0)
        minimal += oracle_delta is not None and abs(cf.distance - weight * oracle_delta) < 1e-9
        if not exemplar_checked:
            new_value = dict((f, n) for f, _, n in cf.changed_features)["stress_level"]
            print(f"\n  exemplar: stress 8 -> {new_value} flips to "
                  f"{cf.new_prediction['label']} (distance {cf.distance:.3f})")
            exemplar_checked = True
    print(f"  converged {converged}, all valid {valid == converged}, "
          f"all grid-minimal {minimal == converged}")
    _report("counterfactual-exemplar",
            converged >= 1 and valid == converged and minimal == converged)


# ---------------------------------------------------------------------------
# criterion 7: CLI determinism


def test_criterion_cli_determinism(tmp_path):
    data = tmp_path / "cohort.csv"
    assert cli_main(["synth", "--subjects", "60", "--timesteps", "4", "--seed", "13",
                     "--out", str(data)]) == 0

    def run_all(tag):
        ckpt = tmp_path / f"model-{tag}.json"
        hist = tmp_path / f"history-{tag}.tsv"
        shap_out = tmp_path / f"shap-{tag}.json"
        cf_out = tmp_path / f"cf-{tag}.json"
        assert cli_main(["train", "--arch", "lstm", "--data", str(data), "--train-n", "50",
                         "--test-n", "10", "--seed", "13", "--epochs", "10", "--hidden", "6",
                         "--out", str(ckpt), "--history", str(hist)]) == 0
        subject = dio.parse_csv(data)[0].subject_id
        assert cli_main(["shap", "--checkpoint", str(ckpt), "--data", str(data),
                         "--background", "12", "--subject", subject, "--method", "kernel",
                         "--samples", "128", "--seed", "13", "--out", str(shap_out)]) == 0
        pred = tmp_path / f"pred-{tag}.json"
        assert cli_main(["predict", "--checkpoint", str(ckpt), "--data", str(data),
                         "--subject", subject, "--out", str(pred)]) == 0
        target = (json.loads(pred.read_text())["predicted_class"] + 1) % 3
        assert cli_main(["counterfactual", "--checkpoint", str(ckpt), "--data", str(data),
                         "--subject", subject, "--target-class", str(target),
                         "--mutable", "stress_level,quality_of_sleep",
                         "--max-iters", "200", "--out", str(cf_out)]) == 0
        return (ckpt.read_bytes(), hist.read_bytes(), shap_out.read_bytes(),
                pred.read_bytes(), cf_out.read_bytes())

    first, second = run_all("a"), run_all("b")
    identical = all(x == y for x, y in zip(first, second))
    print("\n  train/shap/predict/counterfactual outputs byte-identical across runs:", identical)
    _report("cli-determinism", identical)


# ---------------------------------------------------------------------------
# criterion 8: checkpoint round trip


def test_criterion_checkpoint_round_trip(benchmark, tmp_path):
    ckpt = benchmark["checkpoints"]["lstm"]
    path = tmp_path / "roundtrip.json"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    rng = np.random.default_rng(ACCEPTANCE_SEED)
    width = ckpt.input_width
    identical = 0
    for _ in range(100):
        seq = rng.normal(size=(TIMESTEPS, width))
        a, _ = m.classifier_predict(ckpt, Tensor(seq))
        b, _ = m.classifier_predict(loaded, Tensor(seq))
        identical += a.data.tobytes() == b.data.tobytes()
    print(f"\n  {identical}/100 random inputs bit-identical after save->load")
    _report("checkpoint-round-trip", identical == 100)


# ---------------------------------------------------------------------------
# secondary criterion: service contract suite (runs headless, python side)


def test_secondary_service_contract(benchmark):
    import httpx

    from sleeplens.service import (
        ApiSession,
        counterfactual_document,
        make_server,
        predict_document,
        shap_document,
    )

    ckpt = benchmark["checkpoints"]["lstm"]
    split = benchmark["split"]
    session = ApiSession(ckpt, split.train[:25], request_timeout=30.0)
    server = make_server(session, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        fixtures = split.test[:20]
        assert len(fixtures) == 20
        matched = 0
        for seq in fixtures:
            doc = dio.sequence_to_doc(seq)
            r = httpx.post(base + "/predict", json={"instance": doc})
            expected = canonical_dumps(predict_document(session, doc))
            matched += r.status_code == 200 and r.content.decode() == expected
        shap_ok = cf_ok = True
        for seq in fixtures[:3]:
            body = {"instance": dio.sequence_to_doc(seq), "method": "kernel",
                    "n_samples": 128, "seed": 5, "target_class": 0}
            r = httpx.post(base + "/explain/shap", json=body)
            shap_ok = shap_ok and r.content.decode() == canonical_dumps(
                shap_document(session, body))
        disorder = next(s for s in split.test if s.label != dio.NO_DISORDER)
        body = {"instance": dio.sequence_to_doc(disorder), "target_class": 0,
                "mutable_features": ["stress_level", "quality_of_sleep"],
                "config": {"max_iters": 400}}
        r = httpx.post(base + "/explain/counterfactual", json=body)
        cf_ok = r.content.decode() == canonical_dumps(counterfactual_document(session, body))
        print(f"\n  predict fixtures byte-identical: {matched}/20; "
              f"shap match: {shap_ok}; counterfactual match: {cf_ok}")
        _report("service-contract", matched == 20 and shap_ok and cf_ok)
    finally:
        server.shutdown()
        server.server_close()
