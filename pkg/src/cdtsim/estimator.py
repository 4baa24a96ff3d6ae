"""scikit-learn style front end over construction, adaptation and prediction."""
from __future__ import annotations

from sklearn.base import BaseEstimator

from . import infer
from ._validation import check_contexts, check_is_fitted, check_observations
from .adapt import adapt_tree
from .construct import build_tree_with_selection
from .exceptions import ConfigError
from .model import HyperParams
from .oracle import make_oracle


class CodifiedDecisionTree(BaseEstimator):
    """Learns a group's decision logic as a tree of gates and statements.

    Parameters
    ----------
    oracle : Oracle or None
        Model backend; None uses the offline mock provider.
    hyperparams : HyperParams, dict or None
    seeds : tuple of int
        One seed per candidate tree.
    group : str or None
        Needed only when fitting on plain context strings.
    background_cap : int
        Maximum characters of background handed to the predictor.

    Attributes
    ----------
    tree_ : Cdt
    history_ : list of Observation
        Every observation the tree has seen.
    adapt_report_ : AdaptReport or None
    """

    def __init__(self, oracle=None, hyperparams=None, seeds=(0, 1, 2), group=None,
                 background_cap=infer.DEFAULT_BACKGROUND_CAP):
        self.oracle = oracle
        self.hyperparams = hyperparams
        self.seeds = seeds
        self.group = group
        self.background_cap = background_cap

    def _hp(self) -> HyperParams:
        hp = self.hyperparams
        if hp is None:
            return HyperParams()
        if isinstance(hp, HyperParams):
            return hp
        if isinstance(hp, dict):
            return HyperParams.from_dict(hp)
        raise ConfigError(f"hyperparams must be HyperParams or dict, got {type(hp).__name__}")

    def _oracle(self):
        if self.oracle is None:
            self.oracle_ = getattr(self, "oracle_", None) or make_oracle()
            return self.oracle_
        return self.oracle

    def fit(self, X, y=None, phase: str = "train"):
        hp = self._hp()
        seeds = list(self.seeds)
        if len(seeds) < hp.candidates_c:
            raise ConfigError(f"{hp.candidates_c} candidates need as many seeds, got {len(seeds)}")
        obs = check_observations(X, y, group=self.group)
        self.tree_ = build_tree_with_selection(obs, obs[0].group, hp, self._oracle(), seeds, phase)
        self.history_ = obs
        self.adapt_report_ = None
        return self

    def partial_fit(self, X, y=None, phase: str = "adapt"):
        """Adapt the fitted tree to new observations (fits from scratch when unfitted)."""
        if getattr(self, "tree_", None) is None:
            return self.fit(X, y)
        start = max(o.order_key for o in self.history_) + 1 if self.history_ else 0
        obs = check_observations(X, y, group=self.group or self.tree_.group, start=start)
        self.tree_, self.adapt_report_ = adapt_tree(self.tree_, obs, self._oracle(), self._hp(),
                                                    history=self.history_, phase=phase)
        self.history_ = self.history_ + obs
        return self

    def predict(self, X) -> list[str]:
        check_is_fitted(self)
        oracle = self._oracle()
        return [infer.predict(self.tree_, c, q, oracle, background_cap=self.background_cap)
                for c, q in check_contexts(X)]

    def decision_path(self, X) -> list[infer.TraversalTrace]:
        """Traversal traces: which gates fired and which statements were collected."""
        check_is_fitted(self)
        oracle = self._oracle()
        return [infer.traverse(self.tree_, c, oracle) for c, _ in check_contexts(X)]
