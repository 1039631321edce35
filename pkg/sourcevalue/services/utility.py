"""Cooperative-game view of a learning task: players and their coalition scores."""

from functools import cached_property
from typing import Callable, List, Protocol, runtime_checkable

import numpy as np

from sourcevalue.exceptions import ValuationError
from sourcevalue.models.dataset import Dataset
from sourcevalue.models.learner import Evaluator, LearnerSpec
from sourcevalue.services.learners import learner_service


@runtime_checkable
class Utility(Protocol):
    """V over coalitions of players 0..n_players-1."""

    n_players: int

    def __call__(self, players: np.ndarray) -> float: ...

    @property
    def null_score(self) -> float: ...

    @property
    def full_score(self) -> float: ...


class ModelUtility:
    """V(S): train ``spec`` on the rows of coalition S, score on ``ev``.

    With ``by_group`` the players are groups and a coalition trains on the
    union of its groups' rows.
    """

    def __init__(self, train: Dataset, spec: LearnerSpec, ev: Evaluator, by_group: bool = False):
        self.train = train
        self.spec = spec
        self.ev = ev
        self.by_group = by_group
        if by_group:
            if train.groups is None:
                raise ValuationError("group valuation requires a dataset with groups")
            order = np.argsort(train.groups, kind="stable")
            bounds = np.searchsorted(train.groups[order], np.arange(train.num_groups + 1))
            self.members: List[np.ndarray] = [order[bounds[g]:bounds[g + 1]] for g in range(train.num_groups)]
            self.n_players = train.num_groups
        else:
            self.members = []
            self.n_players = train.n

    def rows(self, players: np.ndarray) -> np.ndarray:
        players = np.asarray(players, dtype=np.int64)
        if not self.by_group:
            return np.sort(players)
        if players.shape[0] == 0:
            return players
        return np.sort(np.concatenate([self.members[p] for p in players]))

    def __call__(self, players: np.ndarray) -> float:
        model = learner_service.fit(self.spec, self.train, self.rows(players))
        return learner_service.evaluate(model, self.ev)[0]

    @property
    def null_score(self) -> float:
        return self.ev.null_score

    @cached_property
    def full_score(self) -> float:
        return self(np.arange(self.n_players))


class CallableUtility:
    """Wraps a plain function of the coalition, e.g. a closed-form test game."""

    def __init__(self, fn: Callable[[np.ndarray], float], n_players: int):
        self.fn = fn
        self.n_players = n_players

    def __call__(self, players: np.ndarray) -> float:
        return float(self.fn(np.asarray(players, dtype=np.int64)))

    @property
    def null_score(self) -> float:
        return self(np.empty(0, dtype=np.int64))

    @cached_property
    def full_score(self) -> float:
        return self(np.arange(self.n_players))
