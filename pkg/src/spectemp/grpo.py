"""Group-relative policy optimisation math over recorded rollouts.

Nothing here updates parameters. Given per-rollout sequence log-likelihoods
under the current, behaviour (old) and reference policies of both models, the
functions return advantages, the clipped surrogate objective and the KL term,
so any trainer can consume them.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import GroupError, GroupTooSmall

_LOGP_FIELDS = ("logp_new_target", "logp_old_target", "logp_new_draft",
                "logp_old_draft", "logp_ref_target", "logp_ref_draft")


class RatioOverflowWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Rollout:
    group_id: str
    reward: float
    logp_new_target: float
    logp_old_target: float
    logp_new_draft: float
    logp_old_draft: float
    logp_ref_target: float
    logp_ref_draft: float

    def __post_init__(self):
        for name in ("reward",) + _LOGP_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def logp_new(self) -> float:
        return self.logp_new_target + self.logp_new_draft

    @property
    def logp_old(self) -> float:
        return self.logp_old_target + self.logp_old_draft

    @property
    def logp_ref(self) -> float:
        return self.logp_ref_target + self.logp_ref_draft


@dataclass(frozen=True)
class GrpoConfig:
    beta: float = 0.04
    clip_eps: float = 0.2
    std_floor: float = 1e-6
    max_ratio: float = 1e6

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.clip_eps <= 0 or self.std_floor <= 0 or self.max_ratio <= 1:
            raise ValueError("clip_eps and std_floor must be > 0, max_ratio > 1")


def group_advantages(rewards: Sequence[float], std_floor: float = 1e-6) -> list[float]:
    """``(r - mean) / max(population std, std_floor)``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"a group needs at least 2 rollouts, got {r.size}")
    if np.all(r == r[0]):
        return [0.0] * r.size
    centred = r - r.mean()
    return list(centred / max(float(r.std()), std_floor))


def joint_ratio(r: Rollout, max_ratio: float = 1e6) -> float:
    """Product of the target and draft likelihood ratios, new over old."""
    log_ratio = r.logp_new - r.logp_old
    limit = math.log(max_ratio)
    if log_ratio > limit:
        warnings.warn(f"likelihood ratio exp({log_ratio:.3g}) clamped to {max_ratio:g}",
                      RatioOverflowWarning, stacklevel=2)
        return max_ratio
    return math.exp(log_ratio)


def kl_estimate(log_ref_minus_new: float) -> float:
    """Non-negative estimator ``exp(l) - l - 1`` with ``l = logp_ref - logp_new``."""
    return math.expm1(log_ref_minus_new) - log_ref_minus_new


def partition(rollouts: Iterable[Rollout]) -> "OrderedDict[str, list[Rollout]]":
    groups: OrderedDict[str, list[Rollout]] = OrderedDict()
    for r in rollouts:
        groups.setdefault(r.group_id, []).append(r)
    if not groups:
        raise GroupError("no rollouts given")
    small = [g for g, rs in groups.items() if len(rs) < 2]
    if small:
        raise GroupError(f"groups with fewer than 2 rollouts: {small}")
    return groups


@dataclass(frozen=True)
class ObjectiveReport:
    objective: float
    surrogate: float
    kl: float
    advantages: dict

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(rollouts: Sequence[Rollout], cfg: GrpoConfig = GrpoConfig()) -> ObjectiveReport:
    """Surrogate, KL and objective in one pass.

    ``objective = mean_g [ (1/G) sum_i min(rho_i A_i, clip(rho_i) A_i) ] - beta * KL``
    where KL is the group-averaged per-rollout estimator.
    """
    groups = partition(rollouts)
    surrogate = kl = 0.0
    adv_out = {}
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    for gid, rs in groups.items():
        adv = group_advantages([r.reward for r in rs], cfg.std_floor)
        adv_out[gid] = adv
        terms = []
        for r, a in zip(rs, adv):
            rho = joint_ratio(r, cfg.max_ratio)
            terms.append(min(rho * a, min(max(rho, lo), hi) * a))
        surrogate += sum(terms) / len(rs)
        kl += sum(kl_estimate(r.logp_ref - r.logp_new) for r in rs) / len(rs)
    surrogate /= len(groups)
    kl /= len(groups)
    return ObjectiveReport(surrogate - cfg.beta * kl, surrogate, kl, adv_out)


def grpo_objective(rollouts: Sequence[Rollout], cfg: GrpoConfig = GrpoConfig()) -> float:
    return evaluate(rollouts, cfg).objective


class FiniteDiffResult(NamedTuple):
    analytic_sign: int
    numeric_slope: float
    analytic_slope: float


def _perturb(rollouts: Sequence[Rollout], index: int, delta: float) -> list[Rollout]:
    out = list(rollouts)
    r = out[index]
    out[index] = replace(r, logp_new_target=r.logp_new_target + delta)
    return out


def analytic_slope(rollouts: Sequence[Rollout], cfg: GrpoConfig, index: int) -> float:
    """d objective / d logp_new of rollout ``index`` on the arm that ``min`` selects.

    On the clipped arm the surrogate is flat; the KL term always contributes
    ``beta * (exp(l) - 1) / (G * n_groups)``.
    """
    groups = partition(rollouts)
    target = rollouts[index]
    gid = target.group_id
    members = groups[gid]
    pos = next(i for i, r in enumerate(members) if r is target)
    a = group_advantages([r.reward for r in members], cfg.std_floor)[pos]
    rho = joint_ratio(target, cfg.max_ratio)
    clipped = min(max(rho, 1.0 - cfg.clip_eps), 1.0 + cfg.clip_eps)
    scale = 1.0 / (len(members) * len(groups))
    # min() keeps the unclipped arm whenever it is not larger
    d_surr = rho * a if rho * a <= clipped * a else 0.0
    l = target.logp_ref - target.logp_new
    return scale * (d_surr + cfg.beta * math.expm1(l))


def finite_diff_check(rollouts: Sequence[Rollout], cfg: GrpoConfig, index: int,
                      delta: float = 1e-5) -> FiniteDiffResult:
    """Centred difference of the objective w.r.t. one rollout's ``logp_new``."""
    up = grpo_objective(_perturb(rollouts, index, delta), cfg)
    down = grpo_objective(_perturb(rollouts, index, -delta), cfg)
    numeric = (up - down) / (2 * delta)
    analytic = analytic_slope(rollouts, cfg, index)
    return FiniteDiffResult(int(np.sign(analytic)), numeric, analytic)


# -- line-record IO -------------------------------------------------------------

def rollout_from_dict(d: dict) -> Rollout:
    names = {f.name for f in fields(Rollout)}
    missing = names - set(d)
    if missing:
        raise ValueError(f"rollout record missing {sorted(missing)}")
    return Rollout(str(d["group_id"]), *(float(d[n]) for n in ("reward",) + _LOGP_FIELDS))


def read_rollouts(path) -> list[Rollout]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(rollout_from_dict(json.loads(line)))
            except (ValueError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
    return out


def write_rollouts(path, rollouts: Sequence[Rollout], extra: Sequence[dict] | None = None) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for i, r in enumerate(rollouts):
            d = asdict(r)
            if extra is not None:
                d.update(extra[i])
            fh.write(json.dumps(d, sort_keys=True) + "\n")
