"""Node features, oracle pruning labels, and the RBF-SVM pruning policy.

The classifier input is the four problem-size independent descriptors of
a node judged for pruning: normalized fronthaul power and channel gain of
the branching RRH, the node's relaxation objective normalized by the root
relaxation objective, and the branching variable's value in the parent's
relaxed solution.  The dimension never depends on (L, K), so one model
transfers across network sizes.

Training delegates the dual optimization to libsvm (via scikit-learn);
the decision function, class weighting, feature standardization and the
safety threshold are owned here, so prediction is a pure function of the
serialized model and save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.svm import SVC

from .errors import PolicyFileError
from .netgen import NetworkInstance

PRUNE = "prune"
KEEP = "keep"

POLICY_SCHEMA = "v1"


def extract_features(instance: NetworkInstance, node, root_objective: float) -> np.ndarray:
    """Four-entry descriptor of a node judged for pruning."""
    if node.branch_index is None:
        raise ValueError("root node has no branching variable to featurize")
    if node.relaxation is None or node.relaxation.a is None:
        raise ValueError("node has no solved relaxation")
    if root_objective is None or root_objective <= 0:
        raise ValueError("root objective must be positive")
    i = node.branch_index
    pc = instance.fronthaul_power
    gains = np.array([instance.channel_gain(l) for l in range(instance.L)])
    return np.array([
        instance.L * float(pc[i]) / float(pc.sum()),
        instance.L * gains[i] / gains.sum(),
        node.relaxation.objective / root_objective,
        float(node.parent_relaxed_branch_value),
    ])


def extended_features_from_trace(instance: NetworkInstance, trace):
    """Offline 8-dim features per visited non-root node, replaying tree state.

    Appends depth, plunge depth, incumbent count so far, and the best
    objective so far (root-normalized; 0 before the first incumbent) to the
    canonical four entries.  Analysis aid; the live policy input stays 4-dim.
    """
    out = {}
    root = trace.root_objective
    n_inc, best = 0, None
    for r in trace.records:
        if r.node_id != 0 and r.objective is not None and r.branch_index is not None:
            base = np.array([
                instance.L * float(instance.fronthaul_power[r.branch_index])
                / float(instance.fronthaul_power.sum()),
                instance.L * instance.channel_gain(r.branch_index)
                / sum(instance.channel_gain(l) for l in range(instance.L)),
                r.objective / root,
                float(r.parent_relaxed_branch_value),
            ])
            tree = np.array([r.depth, r.plunge_depth, n_inc,
                             (best / root) if best is not None else 0.0])
            out[r.node_id] = np.concatenate([base, tree])
        if r.outcome == "fathomed" and r.objective is not None:
            if best is None or r.objective < best:
                best = r.objective
                n_inc += 1
    return out


def oracle_action(node, optimal_set) -> str:
    """Keep exactly the nodes whose feasible set contains the optimum."""
    return KEEP if optimal_set(node) else PRUNE


def oracle_policy(optimal_a):
    """The oracle as a search policy: keep iff the node agrees with a*."""
    a_star = np.asarray(optimal_a)

    def policy(features, node):
        return KEEP if node.assignment.agrees_with(a_star) else PRUNE

    return policy


def constant_policy(action: str):
    def policy(features, node):
        return action

    return policy


@dataclass(frozen=True)
class HyperParams:
    C: float = 10.0
    gamma: float = 1.0


DEFAULT_HYPER_GRID = tuple(
    HyperParams(C=c, gamma=g) for c in (0.1, 1.0, 10.0, 100.0) for g in (0.1, 1.0, 10.0)
)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: str
    instance_seed: int = -1
    node_id: int = -1


@dataclass
class PolicyModel:
    """Serializable RBF-SVM pruning policy (or a degenerate constant)."""

    kind: str  # "svm" or "constant"
    hyper: HyperParams
    feature_dim: int
    constant_label: Optional[str] = None
    class_weights: dict = field(default_factory=dict)
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None
    support_vectors: Optional[np.ndarray] = None
    dual_coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    threshold_shift: float = 0.0
    metadata: dict = field(default_factory=dict)

    def decision_value(self, features) -> float:
        """Raw decision toward PRUNE (positive = prune side), before the shift."""
        if self.kind == "constant":
            return np.inf if self.constant_label == PRUNE else -np.inf
        x = (np.asarray(features, dtype=float) - self.feature_mean) / self.feature_std
        d2 = np.sum((self.support_vectors - x) ** 2, axis=1)
        return float(self.dual_coef @ np.exp(-self.hyper.gamma * d2) + self.intercept)

    def as_search_policy(self):
        """Search adapter with the on-branch guard.

        On-children are always kept: the search dives on-branches first and
        the all-ones leaf is feasible whenever the root is, so guarding the
        on-branch guarantees a solution is found no matter how aggressive
        the classifier is.  The classifier therefore only ever rules on
        off-children, for which the four features are unambiguous.
        """

        def policy(features, node):
            if node.branch_value == 1:
                return KEEP
            return predict(self, features)

        return policy


def predict(model: PolicyModel, features) -> str:
    """Prune iff the shifted decision value is strictly positive (ties keep)."""
    if model.kind == "constant":
        return model.constant_label
    return PRUNE if model.decision_value(features) - model.threshold_shift > 0 else KEEP


def train_classifier(samples: list[Sample], hyper: HyperParams | None = None,
                     seed: int = 0) -> PolicyModel:
    """Fit the soft-margin RBF SVM on (feature, oracle-action) pairs.

    Class weights are total/(2*count) per class; single-class data yields a
    constant predictor.  Deterministic in (sample order, hyper, seed).
    """
    if not samples:
        raise ValueError("cannot train on an empty sample set")
    hyper = hyper or HyperParams()
    X = np.vstack([np.asarray(s.features, dtype=float) for s in samples])
    labels = [s.label for s in samples]
    meta = {"n_samples": len(samples), "seed": seed,
            "n_prune": labels.count(PRUNE), "n_keep": labels.count(KEEP)}

    if len(set(labels)) == 1:
        return PolicyModel(kind="constant", hyper=hyper, feature_dim=X.shape[1],
                           constant_label=labels[0], metadata=meta)

    y = np.array([1 if lab == PRUNE else 0 for lab in labels])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Xs = (X - mean) / std

    n = len(y)
    weights = {0: n / (2.0 * np.sum(y == 0)), 1: n / (2.0 * np.sum(y == 1))}
    svc = SVC(C=hyper.C, gamma=hyper.gamma, kernel="rbf", class_weight=weights,
              tol=1e-4, shrinking=True)
    svc.fit(Xs, y)

    return PolicyModel(
        kind="svm", hyper=hyper, feature_dim=X.shape[1],
        class_weights={KEEP: weights[0], PRUNE: weights[1]},
        feature_mean=mean, feature_std=std,
        support_vectors=svc.support_vectors_.copy(),
        dual_coef=svc.dual_coef_[0].copy(),
        intercept=float(svc.intercept_[0]),
        metadata=meta,
    )


def tune_threshold(model: PolicyModel, samples: list[Sample],
                   max_optimal_prune_rate: float = 0.05) -> PolicyModel:
    """Raise the prune threshold until at most the given fraction of
    keep-labeled samples would be pruned.  Never lowers it below zero, so
    tuning only makes pruning safer than the raw SVM."""
    if model.kind == "constant":
        return model
    keep_d = [model.decision_value(s.features) for s in samples if s.label == KEEP]
    if not keep_d:
        return replace(model, threshold_shift=0.0)
    shift = float(np.quantile(keep_d, 1.0 - max_optimal_prune_rate, method="higher"))
    return replace(model, threshold_shift=max(0.0, shift))


# ---------------------------------------------------------------------------
# policy file format, schema "v1"

def save_policy(model: PolicyModel, path) -> None:
    doc = {
        "schema": POLICY_SCHEMA,
        "kind": model.kind,
        "C": model.hyper.C,
        "gamma": model.hyper.gamma,
        "feature_dim": model.feature_dim,
        "constant_label": model.constant_label,
        "class_weights": model.class_weights,
        "feature_mean": _arr(model.feature_mean),
        "feature_std": _arr(model.feature_std),
        "support_vectors": _arr(model.support_vectors),
        "dual_coef": _arr(model.dual_coef),
        "intercept": model.intercept,
        "threshold_shift": model.threshold_shift,
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc))


def load_policy(path) -> PolicyModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, OSError) as exc:
        raise PolicyFileError(f"unreadable policy file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != POLICY_SCHEMA:
        raise PolicyFileError(
            f"unsupported policy schema {doc.get('schema')!r}" if isinstance(doc, dict)
            else "policy file is not a JSON object")
    try:
        return PolicyModel(
            kind=doc["kind"],
            hyper=HyperParams(C=doc["C"], gamma=doc["gamma"]),
            feature_dim=doc["feature_dim"],
            constant_label=doc["constant_label"],
            class_weights=doc["class_weights"],
            feature_mean=_unarr(doc["feature_mean"]),
            feature_std=_unarr(doc["feature_std"]),
            support_vectors=_unarr(doc["support_vectors"]),
            dual_coef=_unarr(doc["dual_coef"]),
            intercept=doc["intercept"],
            threshold_shift=doc["threshold_shift"],
            metadata=doc.get("metadata", {}),
        )
    except KeyError as exc:
        raise PolicyFileError(f"policy file {path} is missing field {exc}") from exc


def _arr(a):
    if a is None:
        return None
    return np.asarray(a).tolist()


def _unarr(v):
    if v is None:
        return None
    return np.asarray(v, dtype=float)
