"""Group-relative advantages, the clipped surrogate with KL penalty, dynamic
resampling of groups without learning signal, and a finite-difference
optimizer for the toy policy."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .config import GrpoConfig
from .policy.toy import ToyBatch, ToyPolicy, ToyPolicyParams

if TYPE_CHECKING:
    from .rewards import RewardBreakdown
    from .rollout import Trajectory

log = logging.getLogger(__name__)


class DegenerateGroup(ValueError):
    """All rewards in the group are equal, so advantages are undefined."""


@dataclass
class Group:
    sample_id: str
    trajectories: list[Trajectory]
    rewards: list[float]
    breakdowns: list[RewardBreakdown] = field(default_factory=list)
    advantages: list[float] | None = None
    logp_new: list[float] | None = None
    logp_old: list[float] | None = None
    logp_ref: list[float] | None = None
    resample_attempts: int = 0

    def __post_init__(self):
        G = len(self.rewards)
        if G < 2:
            raise ValueError("a group needs at least two rollouts")
        if len(self.trajectories) != G:
            raise ValueError("trajectories and rewards differ in length")
        for name in ("breakdowns", "advantages", "logp_new", "logp_old", "logp_ref"):
            v = getattr(self, name)
            if v is not None and name != "breakdowns" and len(v) != G:
                raise ValueError(f"{name} must have length {G}")
        if self.breakdowns and len(self.breakdowns) != G:
            raise ValueError(f"breakdowns must have length {G}")

    @property
    def size(self) -> int:
        return len(self.rewards)

    def has_signal(self) -> bool:
        return has_signal(self.rewards)

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "rewards": list(self.rewards),
            "advantages": self.advantages,
            "logp_new": self.logp_new,
            "logp_old": self.logp_old,
            "logp_ref": self.logp_ref,
            "resample_attempts": self.resample_attempts,
        }


def has_signal(rewards: Sequence[float]) -> bool:
    return max(rewards) != min(rewards)


def group_advantages(rewards: Sequence[float], std: str = "population") -> list[float]:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError("need at least two rewards")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if not has_signal(rewards):
        raise DegenerateGroup(f"zero reward variance (all {r[0]!r})")
    mu = r.mean()
    sigma = r.std(ddof=0 if std == "population" else 1)
    return ((r - mu) / sigma).tolist()


def _as_arrays(*xs):
    arrs = [np.asarray(x, dtype=float) for x in xs]
    n = len(arrs[0])
    if any(a.shape != (n,) for a in arrs):
        raise ValueError("inputs must be equal-length 1-D sequences")
    if n == 0:
        raise ValueError("inputs must be non-empty")
    if not all(np.all(np.isfinite(a)) for a in arrs):
        raise ValueError("inputs must be finite")
    return arrs


def clipped_objective(logp_new, logp_old, advantages, eps: float) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    new, old, adv = _as_arrays(logp_new, logp_old, advantages)
    ratio = np.exp(new - old)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    return float(np.mean(np.minimum(ratio * adv, clipped * adv)))


def kl_terms(logp_policy, logp_ref, estimator: str = "k3", clip: float | None = None) -> np.ndarray:
    """Per-trajectory KL estimates; ``clip`` caps each term at that magnitude."""
    pol, ref = _as_arrays(logp_policy, logp_ref)
    d = ref - pol
    if estimator == "k3":
        # expm1(d) - d keeps precision near d = 0 and is >= 0 everywhere
        k = np.expm1(d) - d
    elif estimator == "k1":
        k = -d
    else:
        raise ValueError(f"unknown KL estimator {estimator!r}")
    if clip is not None:
        if not clip > 0:
            raise ValueError("clip must be positive")
        k = np.clip(k, -clip, clip)
    return k


def kl_penalty(logp_policy, logp_ref, beta: float, estimator: str = "k3", clip: float | None = None) -> float:
    """beta * mean per-trajectory KL estimate; the caller subtracts it from the objective."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return float(beta * np.mean(kl_terms(logp_policy, logp_ref, estimator, clip)))


def dynamic_resample(
    groups: Sequence[Group],
    budget: int,
    resample: Callable[[Group, int], Group] | None = None,
    abandoned: list[tuple[str, str]] | None = None,
) -> list[Group]:
    """Replace groups with no reward variance by fresh rollouts.

    ``resample(group, attempt)`` must return a new group for the same sample.
    At most ``budget`` resamples are made in total; groups still degenerate
    afterwards are dropped and reported through the log and ``abandoned``.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    kept = []
    for g in groups:
        attempts = 0
        cur = g
        while not cur.has_signal() and budget > 0 and resample is not None:
            budget -= 1
            attempts += 1
            cur = resample(g, attempts)
        if cur.has_signal():
            cur.resample_attempts = attempts
            kept.append(cur)
            continue
        reason = f"zero reward variance after {attempts} resample(s) (rewards {cur.rewards[0]!r})"
        log.info("abandoning group %s: %s", g.sample_id, reason)
        if abandoned is not None:
            abandoned.append((g.sample_id, reason))
    return kept


# ---- toy optimizer ------------------------------------------------------


@dataclass
class ToyStepInputs:
    """Everything the toy objective needs, flattened across groups."""

    batch: ToyBatch
    advantages: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray | None
    group_index: np.ndarray
    n_groups: int


def prepare_toy_step(params: ToyPolicyParams, groups: Sequence[Group], batch_groups: int | None = None) -> ToyStepInputs:
    """``batch_groups`` is the batch size before dropping degenerate groups.

    Dropped groups carry zero advantage, so they still count in the mean over
    groups; otherwise a batch left with a single informative group would take
    a full-size step on it alone.
    """
    if batch_groups is not None and batch_groups < len(groups):
        raise ValueError("batch_groups is smaller than the number of groups")
    policy = ToyPolicy(params)
    trajs = [t for g in groups for t in g.trajectories]
    batch = ToyBatch.from_trajectories(policy, trajs)
    current = batch.logp(params.theta)
    adv, old, ref, gidx = [], [], [], []
    has_ref = all(g.logp_ref is not None for g in groups)
    off = 0
    for gi, g in enumerate(groups):
        if g.advantages is None:
            raise ValueError(f"group {g.sample_id} has no advantages")
        adv += g.advantages
        old += g.logp_old if g.logp_old is not None else current[off : off + g.size].tolist()
        if has_ref:
            ref += g.logp_ref
        gidx += [gi] * g.size
        off += g.size
    return ToyStepInputs(
        batch,
        np.array(adv),
        np.array(old),
        np.array(ref) if has_ref else None,
        np.array(gidx),
        batch_groups or len(groups),
    )


def toy_objective(theta: np.ndarray, inp: ToyStepInputs, cfg: GrpoConfig) -> float:
    """Mean over groups of the clipped surrogate, minus the KL penalty to the reference."""
    new = inp.batch.logp(theta)
    ratio = np.exp(new - inp.logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    per_traj = np.minimum(ratio * inp.advantages, clipped * inp.advantages)
    sums = np.bincount(inp.group_index, weights=per_traj)
    sizes = np.bincount(inp.group_index)
    j = float(np.sum(sums / sizes) / inp.n_groups)
    if inp.logp_ref is not None and cfg.kl_beta > 0:
        j -= kl_penalty(new, inp.logp_ref, cfg.kl_beta, cfg.kl_estimator, cfg.kl_clip)
    return j


def fd_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, fd_eps: float, skip: Sequence[int] = ()
) -> np.ndarray:
    """Central differences; coordinates in ``skip`` get a zero gradient."""
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        if i in skip:
            continue
        e = np.zeros_like(theta)
        e[i] = fd_eps
        grad[i] = (f(theta + e) - f(theta - e)) / (2 * fd_eps)
    return grad


def toy_policy_step(
    params: ToyPolicyParams,
    groups: Sequence[Group],
    cfg: GrpoConfig,
    step_size: float,
    fd_eps: float,
    batch_groups: int | None = None,
    frozen: Sequence[str] = (),
) -> ToyPolicyParams:
    """One gradient-ascent step on the GRPO objective using central finite differences.

    Features named in ``frozen`` keep their weights.
    """
    if not groups:
        return params
    if not fd_eps > 0:
        raise ValueError("fd_eps must be positive")
    inp = prepare_toy_step(params, groups, batch_groups)
    unknown = set(frozen) - set(params.feature_names)
    if unknown:
        raise ValueError(f"cannot freeze unknown features {sorted(unknown)}")
    skip = [i for i, n in enumerate(params.feature_names) if n in frozen]
    grad = fd_gradient(lambda th: toy_objective(th, inp, cfg), params.theta, fd_eps, skip)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient {grad}")
    return params.with_theta(params.theta + step_size * grad)


def with_advantages(g: Group, std: str = "population") -> Group:
    return replace(g, advantages=group_advantages(g.rewards, std))


def mean_or_nan(xs: Sequence[float]) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan
