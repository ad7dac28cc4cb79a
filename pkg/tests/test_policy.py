import json

import numpy as np
import pytest

from cranbnb import bnb, conic, netgen, policy
from cranbnb.errors import PolicyFileError

from conftest import make_instance


def _node_with(instance, branch_index, objective, parent_val=0.5, fixings=None):
    status = [conic.FREE] * instance.L
    for i, v in (fixings or {}).items():
        status[i] = v
    node = bnb.SearchNode(assignment=conic.Assignment(status=tuple(status)),
                          depth=len(fixings or {}), node_id=1,
                          branch_index=branch_index, branch_value=1,
                          parent_relaxed_branch_value=parent_val)
    node.relaxation = conic.RelaxationResult(
        status=conic.OPTIMAL, a=np.full(instance.L, 0.5), w=None,
        objective=objective, iterations=1, primal_residual=0.0, dual_residual=0.0)
    return node


def test_feature_one_matches_reference_constants():
    inst = make_instance(L=10, K=2, seed=3)  # Pc = 6..15
    node = _node_with(inst, branch_index=0, objective=50.0)
    f = policy.extract_features(inst, node, root_objective=50.0)
    assert f.shape == (4,)
    assert f[0] == pytest.approx(10 * 6 / 105)
    assert f[2] == pytest.approx(1.0)
    assert f[3] == 0.5


def test_feature_two_is_one_for_identical_gains():
    inst = make_instance(L=4, K=3, seed=5)
    flat = netgen.NetworkInstance(
        L=inst.L, K=inst.K, antennas=inst.antennas,
        channels=np.ones_like(inst.channels), noise_vars=inst.noise_vars,
        max_tx_power=inst.max_tx_power, fronthaul_power=inst.fronthaul_power,
        amp_efficiency=inst.amp_efficiency, sinr_targets=inst.sinr_targets,
        seed=inst.seed, config=inst.config, rrh_pos=inst.rrh_pos, mu_pos=inst.mu_pos)
    for i in range(4):
        node = _node_with(flat, branch_index=i, objective=60.0)
        f = policy.extract_features(flat, node, root_objective=50.0)
        assert f[1] == pytest.approx(1.0)
        assert f[2] == pytest.approx(1.2)


def test_feature_scale_invariances():
    inst = make_instance(L=5, K=3, seed=9)
    node = _node_with(inst, branch_index=2, objective=80.0)
    base = policy.extract_features(inst, node, root_objective=64.0)
    for c in (0.1, 3.0, 1e4):
        scaled_pc = netgen.NetworkInstance(
            L=inst.L, K=inst.K, antennas=inst.antennas, channels=inst.channels,
            noise_vars=inst.noise_vars, max_tx_power=inst.max_tx_power,
            fronthaul_power=inst.fronthaul_power * c,
            amp_efficiency=inst.amp_efficiency, sinr_targets=inst.sinr_targets,
            seed=inst.seed, config=inst.config, rrh_pos=inst.rrh_pos, mu_pos=inst.mu_pos)
        f = policy.extract_features(scaled_pc, node, root_objective=64.0)
        assert f[0] == pytest.approx(base[0], rel=1e-12)
    for c in (0.5, 2.0, 1 + 2j, -3.0):
        scaled_h = netgen.NetworkInstance(
            L=inst.L, K=inst.K, antennas=inst.antennas, channels=inst.channels * c,
            noise_vars=inst.noise_vars, max_tx_power=inst.max_tx_power,
            fronthaul_power=inst.fronthaul_power,
            amp_efficiency=inst.amp_efficiency, sinr_targets=inst.sinr_targets,
            seed=inst.seed, config=inst.config, rrh_pos=inst.rrh_pos, mu_pos=inst.mu_pos)
        f = policy.extract_features(scaled_h, node, root_objective=64.0)
        assert f[1] == pytest.approx(base[1], rel=1e-12)


def test_extract_features_rejects_bad_inputs():
    inst = make_instance(L=3, K=2, seed=13)
    root = bnb.SearchNode(assignment=conic.Assignment.root(3), depth=0, node_id=0)
    with pytest.raises(ValueError):
        policy.extract_features(inst, root, root_objective=10.0)
    node = _node_with(inst, branch_index=1, objective=12.0)
    with pytest.raises(ValueError):
        policy.extract_features(inst, node, root_objective=0.0)
    node.relaxation = None
    with pytest.raises(ValueError):
        policy.extract_features(inst, node, root_objective=10.0)


def test_oracle_action_labels():
    F = conic.FREE
    trace = bnb.SearchTrace(instance_seed=0, L=3, optimal_a=(1, 0, 1))
    is_opt = bnb.optimal_node_set(trace)
    root = bnb.SearchNode(assignment=conic.Assignment.root(3), depth=0, node_id=0)
    assert policy.oracle_action(root, is_opt) == policy.KEEP
    on = bnb.SearchNode(assignment=conic.Assignment(status=(1, F, F)), depth=1, node_id=1)
    off = bnb.SearchNode(assignment=conic.Assignment(status=(0, F, F)), depth=1, node_id=2)
    actions = {policy.oracle_action(on, is_opt), policy.oracle_action(off, is_opt)}
    assert actions == {policy.KEEP, policy.PRUNE}
    assert policy.oracle_action(on, is_opt) == policy.KEEP


def _cluster_samples(n=40, sep=4.0, seed=0):
    rng = np.random.default_rng(seed)
    xs, labels = [], []
    for j in range(n):
        keep = j % 2 == 0
        center = np.zeros(4) if keep else np.full(4, sep)
        xs.append(center + 0.3 * rng.standard_normal(4))
        labels.append(policy.KEEP if keep else policy.PRUNE)
    return [policy.Sample(features=x, label=lab) for x, lab in zip(xs, labels)]


def test_separable_clusters_fit_perfectly():
    samples = _cluster_samples()
    model = policy.train_classifier(samples, policy.HyperParams(C=10, gamma=1.0))
    assert all(policy.predict(model, s.features) == s.label for s in samples)


def test_single_class_becomes_constant_predictor():
    samples = [policy.Sample(features=np.arange(4.0) + i, label=policy.PRUNE) for i in range(5)]
    model = policy.train_classifier(samples)
    assert model.kind == "constant"
    for i in range(10):
        assert policy.predict(model, np.random.default_rng(i).standard_normal(4)) == policy.PRUNE


def test_rbf_solves_xor_pattern():
    pts = [(-1, -1), (1, 1), (-1, 1), (1, -1)]
    labels = [policy.KEEP, policy.KEEP, policy.PRUNE, policy.PRUNE]
    samples = [policy.Sample(features=np.array([x, y, 0.0, 0.0]), label=lab)
               for (x, y), lab in zip(pts, labels)]
    model = policy.train_classifier(samples, policy.HyperParams(C=100.0, gamma=2.0))
    assert [policy.predict(model, s.features) for s in samples] == labels


def test_duplicate_samples_do_not_crash():
    base = _cluster_samples(n=10)
    model = policy.train_classifier(base + base + base)
    assert model.kind == "svm"


def test_decision_matches_sklearn_reference():
    from sklearn.svm import SVC
    samples = _cluster_samples(n=30, sep=2.0, seed=3)
    hyper = policy.HyperParams(C=5.0, gamma=0.7)
    model = policy.train_classifier(samples, hyper)
    X = np.vstack([s.features for s in samples])
    y = np.array([1 if s.label == policy.PRUNE else 0 for s in samples])
    Xs = (X - model.feature_mean) / model.feature_std
    n = len(y)
    ref = SVC(C=hyper.C, gamma=hyper.gamma, kernel="rbf", tol=1e-4,
              class_weight={0: n / (2 * np.sum(y == 0)), 1: n / (2 * np.sum(y == 1))})
    ref.fit(Xs, y)
    rng = np.random.default_rng(8)
    for _ in range(50):
        x = rng.standard_normal(4) * 2
        xs = (x - model.feature_mean) / model.feature_std
        assert model.decision_value(x) == pytest.approx(
            float(ref.decision_function(xs[None, :])[0]), rel=1e-9, abs=1e-12)


def test_tie_breaks_toward_keep():
    model = policy.PolicyModel(
        kind="svm", hyper=policy.HyperParams(gamma=1.0), feature_dim=4,
        feature_mean=np.zeros(4), feature_std=np.ones(4),
        support_vectors=np.zeros((1, 4)), dual_coef=np.array([2.5]),
        intercept=-2.5, threshold_shift=0.0)
    x = np.zeros(4)
    assert model.decision_value(x) == 0.0
    assert policy.predict(model, x) == policy.KEEP


def test_threshold_tuning_caps_optimal_prune_rate():
    rng = np.random.default_rng(5)
    samples = _cluster_samples(n=60, sep=1.0, seed=6)  # heavily overlapping
    model = policy.train_classifier(samples, policy.HyperParams(C=1.0, gamma=0.5))
    tuned = policy.tune_threshold(model, samples, max_optimal_prune_rate=0.05)
    keeps = [s for s in samples if s.label == policy.KEEP]
    mispruned = sum(policy.predict(tuned, s.features) == policy.PRUNE for s in keeps)
    assert mispruned / len(keeps) <= 0.05
    assert tuned.threshold_shift >= 0.0


def test_save_load_round_trip_is_bit_exact(tmp_path):
    samples = _cluster_samples(n=50, sep=1.5, seed=11)
    model = policy.train_classifier(samples, policy.HyperParams(C=3.0, gamma=1.3))
    model = policy.tune_threshold(model, samples)
    path = tmp_path / "policy.json"
    policy.save_policy(model, path)
    back = policy.load_policy(path)
    rng = np.random.default_rng(13)
    for _ in range(1000):
        x = rng.standard_normal(4) * 3
        assert back.decision_value(x) == model.decision_value(x)
        assert policy.predict(back, x) == policy.predict(model, x)


def test_load_rejects_truncated_and_future_versions(tmp_path):
    samples = _cluster_samples(n=20)
    model = policy.train_classifier(samples)
    path = tmp_path / "p.json"
    policy.save_policy(model, path)
    full = path.read_text()
    path.write_text(full[: len(full) // 2])
    with pytest.raises(PolicyFileError):
        policy.load_policy(path)
    doc = json.loads(full)
    doc["schema"] = "v2"
    path.write_text(json.dumps(doc))
    with pytest.raises(PolicyFileError):
        policy.load_policy(path)
    path.write_text(json.dumps({"schema": "v1"}))
    with pytest.raises(PolicyFileError):
        policy.load_policy(path)


def test_model_transfers_across_network_sizes():
    small = make_instance(L=4, K=3, seed=21)
    large = make_instance(L=10, K=4, seed=22)
    node_small = _node_with(small, branch_index=1, objective=30.0)
    node_large = _node_with(large, branch_index=7, objective=90.0)
    f_small = policy.extract_features(small, node_small, 25.0)
    f_large = policy.extract_features(large, node_large, 80.0)
    assert f_small.shape == f_large.shape == (4,)
    samples = [policy.Sample(features=f_small + 0.01 * i,
                             label=policy.KEEP if i % 2 else policy.PRUNE)
               for i in range(12)]
    model = policy.train_classifier(samples)
    assert policy.predict(model, f_large) in (policy.KEEP, policy.PRUNE)


def test_extended_features_replay_from_trace():
    inst = make_instance(L=4, K=3, seed=606)
    _, _, trace = bnb.solve_exact(inst)
    feats = policy.extended_features_from_trace(inst, trace)
    judged = [r for r in trace.records if r.node_id != 0 and r.objective is not None
              and r.branch_index is not None]
    assert set(feats) == {r.node_id for r in judged}
    for r in judged:
        f = feats[r.node_id]
        assert f.shape == (8,)
        assert f[4] == r.depth
        assert f[5] == r.plunge_depth
