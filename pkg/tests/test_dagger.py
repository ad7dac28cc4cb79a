import math

import numpy as np
import pytest

from cranbnb import bnb, conic, dagger, netgen, policy
from cranbnb.errors import ConfigError

from conftest import enumeration_optimum, make_instance


def _labeled_set(L, K, seeds, tsinr_db=0.0):
    """Generate root-feasible instances with their exact solutions."""
    instances, traces, refs = [], [], []
    seed = seeds[0]
    want = len(seeds)
    while len(instances) < want:
        inst = make_instance(L=L, K=K, seed=seed, tsinr_db=tsinr_db, region=1000.0)
        seed += 1
        incumbent, stats, trace = bnb.solve_exact(inst)
        if incumbent is None:
            continue
        instances.append(inst)
        traces.append(trace)
        refs.append(dagger.ExactReference.from_exact(incumbent, stats, trace))
    return instances, traces, refs


@pytest.fixture(scope="module")
def pipeline():
    train = _labeled_set(4, 3, list(range(1000, 1012)))
    val = _labeled_set(4, 3, list(range(2000, 2006)))
    return train, val


def _config(pipeline, **kw):
    (ti, tt, _), (vi, vt, vr) = pipeline
    defaults = dict(train_instances=ti, train_traces=tt, val_instances=vi,
                    val_references=vr, val_traces=vt,
                    hyper_grid=(policy.HyperParams(C=10.0, gamma=1.0),),
                    candidate_count=4)
    defaults.update(kw)
    return dagger.TrainRunConfig(**defaults)


def test_oracle_walk_collects_nothing_when_policy_is_perfect(pipeline):
    (ti, tt, _), _ = pipeline
    samples, visited, disagreements = dagger._imitation_walk(
        ti[0], tt[0].optimal_a, policy.oracle_policy(tt[0].optimal_a),
        tol=None, limits=None, collect_all=False)
    assert samples == []
    assert disagreements == 0
    assert visited == 2 * ti[0].L + 1


def test_bootstrap_walk_collects_all_judgeable_off_children(pipeline):
    (ti, tt, _), _ = pipeline
    samples, visited, _ = dagger._imitation_walk(
        ti[0], tt[0].optimal_a, policy.oracle_policy(tt[0].optimal_a),
        tol=None, limits=None, collect_all=True)
    # the oracle walk visits 2L+1 nodes; one child per level is an off-child,
    # and the depth-L off-leaf is fathomed rather than judged
    assert visited == 2 * ti[0].L + 1
    assert len(samples) == ti[0].L - 1
    labels = {s.label for s in samples}
    assert labels == {policy.KEEP, policy.PRUNE}


def test_dagger_train_returns_policy_and_report(pipeline):
    model, report = dagger.dagger_train(_config(pipeline))
    assert isinstance(model, policy.PolicyModel)
    sizes = [e["dataset_size"] for e in report.iterations if not e["skipped"]]
    assert sizes == sorted(sizes)
    assert report.total_samples == sizes[-1]
    assert report.candidates
    assert 0 <= report.chosen_index < len(report.candidates)
    assert report.candidates[report.chosen_index]["n_notfound"] == min(
        c["n_notfound"] for c in report.candidates)


def test_dagger_is_deterministic(pipeline):
    m1, r1 = dagger.dagger_train(_config(pipeline))
    m2, r2 = dagger.dagger_train(_config(pipeline))
    assert r1.chosen_index == r2.chosen_index
    assert m1.kind == m2.kind
    assert m1.threshold_shift == m2.threshold_shift
    if m1.kind == "svm":
        assert np.array_equal(m1.support_vectors, m2.support_vectors)
        assert np.array_equal(m1.dual_coef, m2.dual_coef)
        assert m1.intercept == m2.intercept


def test_trained_policy_is_reasonable_on_validation(pipeline):
    _, (vi, vt, vr) = pipeline
    model, report = dagger.dagger_train(_config(pipeline))
    metrics = dagger.evaluate_policy(model, vi, vr)
    assert metrics.n_notfound == 0
    assert metrics.mean_gap < 0.10
    assert metrics.mean_solves_policy <= metrics.mean_solves_exact


def test_oracle_policy_evaluates_to_zero_gap(pipeline):
    _, (vi, vt, vr) = pipeline
    for inst, ref in zip(vi, vr):
        m = dagger.evaluate_policy(policy.oracle_policy(ref.optimal_a), [inst], [ref])
        assert m.n_notfound == 0
        assert abs(m.mean_gap) < 1e-7
        assert m.mean_speedup == pytest.approx(ref.socp_solves / (2 * inst.L + 1))


def test_constant_keep_policy_gives_unit_speedup(pipeline):
    _, (vi, vt, vr) = pipeline
    m = dagger.evaluate_policy(policy.constant_policy(policy.KEEP), vi[:3], vr[:3])
    assert m.n_notfound == 0
    assert m.mean_speedup == pytest.approx(1.0)
    assert abs(m.mean_gap) < 1e-7


def test_evaluate_policy_reports_notfound_failures(pipeline):
    _, (vi, vt, vr) = pipeline
    m = dagger.evaluate_policy(policy.constant_policy(policy.PRUNE), vi[:2], vr[:2])
    assert m.n_notfound == 2
    assert m.mean_gap == math.inf
    assert all(r.gap == math.inf and r.objective == math.inf for r in m.rows)


def test_evaluate_policy_rejects_mismatched_lists(pipeline):
    _, (vi, vt, vr) = pipeline
    with pytest.raises(ValueError):
        dagger.evaluate_policy(policy.constant_policy(policy.KEEP), vi[:2], vr[:1])
    with pytest.raises(ValueError):
        dagger.evaluate_policy(policy.constant_policy(policy.KEEP), vi[:2], list(reversed(vr[:2])))


def _metrics(n_notfound=0, gap=0.01, speedup=5.0):
    return dagger.EvalMetrics(rows=[], n_notfound=n_notfound, mean_gap=gap,
                              mean_speedup=speedup, mean_eps1=0, mean_eps2=0,
                              mean_solves_exact=10, mean_solves_policy=2,
                              power_by_tsinr={})


def test_validation_select_lexicographic_rules():
    assert dagger.validation_select([_metrics()]) == 0
    # same gap: higher speedup wins
    assert dagger.validation_select([_metrics(speedup=5.0), _metrics(speedup=8.0)]) == 1
    # any failure loses regardless of speedup
    assert dagger.validation_select([_metrics(n_notfound=1, gap=0.0, speedup=100.0),
                                     _metrics(speedup=2.0)]) == 1
    # lower gap beats higher speedup
    assert dagger.validation_select([_metrics(gap=0.001, speedup=2.0),
                                     _metrics(gap=0.01, speedup=9.0)]) == 0
    # deterministic tie-break: first candidate
    assert dagger.validation_select([_metrics(), _metrics()]) == 0


def test_config_validation(pipeline):
    (ti, tt, _), (vi, vt, vr) = pipeline
    with pytest.raises(ConfigError):
        dagger.TrainRunConfig(train_instances=[], train_traces=[], val_instances=vi,
                              val_references=vr).validate()
    with pytest.raises(ConfigError):
        dagger.TrainRunConfig(train_instances=ti, train_traces=tt,
                              val_instances=ti, val_references=vr).validate()


def test_samples_from_trace_is_deterministic(pipeline):
    (ti, tt, _), _ = pipeline
    s1 = dagger.samples_from_trace(ti[0], tt[0])
    s2 = dagger.samples_from_trace(ti[0], tt[0])
    assert len(s1) == len(s2) > 0
    for a, b in zip(s1, s2):
        assert a.label == b.label and np.array_equal(a.features, b.features)
    keeps = sum(s.label == policy.KEEP for s in s1)
    assert 0 < keeps <= ti[0].L  # one optimal node per depth, minus fathomed leaves


def test_reference_json_round_trip(pipeline):
    _, (vi, vt, vr) = pipeline
    doc = vr[0].to_json()
    back = dagger.ExactReference.from_json(doc)
    assert back == vr[0]
