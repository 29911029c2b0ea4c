"""Learning-rate and curriculum policies.

* LeRaC: per-layer initial rates that fall with depth, each ramped to the
  shared base rate over the first ``k`` epochs (exponential or linear).
* Curriculum by smoothing: Gaussian sigma decayed by ``d`` every ``u`` epochs.
* Reduce-on-plateau with early stopping.

Epoch ``l`` means "number of completed epochs", so epoch 0 trains with the
initial rates and every epoch ``l >= k`` trains with the base rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ValidationError

RULES = ("exponential", "linear")


def _log(x: float, base: float) -> float:
    return math.log10(x) if base == 10 else math.log(x) / math.log(base)


@dataclass
class LeRaCConfig:
    eta_base: float = 0.1
    eta_first: float | None = None  # defaults to eta_base
    eta_last: float = 1e-6
    k: int = 5
    c: float = 10.0
    rule: str = "exponential"

    def __post_init__(self):
        if self.eta_first is None:
            self.eta_first = self.eta_base
        self.validate()

    def validate(self):
        if not self.eta_base > 0:
            raise ValidationError(f"eta_base must be positive, got {self.eta_base}")
        if not self.eta_last > 0:
            raise ValidationError(f"eta_last must be positive, got {self.eta_last}")
        if self.eta_last > self.eta_first:
            raise ValidationError(
                f"eta_last ({self.eta_last}) must not exceed eta_first ({self.eta_first})"
            )
        if self.eta_first > self.eta_base:
            raise ValidationError(
                f"eta_first ({self.eta_first}) must not exceed eta_base ({self.eta_base})"
            )
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k}")
        if not self.c > 1:
            raise ValidationError(f"c must exceed 1, got {self.c}")
        if self.rule not in RULES:
            raise ValidationError(f"rule must be one of {RULES}, got {self.rule!r}")

    @classmethod
    def conventional(cls, eta_base: float, k: int = 1) -> "LeRaCConfig":
        """A degenerate curriculum: every layer starts at ``eta_base``."""
        return cls(eta_base=eta_base, eta_first=eta_base, eta_last=eta_base, k=k)


@dataclass
class RateSchedule:
    initial_rates: list[float]
    target_rate: float
    k: int
    c: float = 10.0
    rule: str = "exponential"

    @property
    def n(self) -> int:
        return len(self.initial_rates)


def assign_initial_rates(n: int, cfg: LeRaCConfig) -> RateSchedule:
    """Spread initial rates log-linearly (base ``c``) from eta_first to eta_last."""
    if int(n) != n or n < 1:
        raise ValidationError(f"layer count must be a positive integer, got {n}")
    cfg.validate()
    if n == 1:
        rates = [cfg.eta_first]
    elif cfg.eta_first == cfg.eta_last:
        rates = [cfg.eta_first] * n
    else:
        lo = _log(cfg.eta_first, cfg.c)
        hi = _log(cfg.eta_last, cfg.c)
        rates = [cfg.eta_first]
        for j in range(2, n):
            rates.append(cfg.c ** (lo + (j - 1) / (n - 1) * (hi - lo)))
        rates.append(cfg.eta_last)
        # pow() rounding must not break the non-increasing order
        for j in range(1, n):
            rates[j] = min(max(rates[j], cfg.eta_last), rates[j - 1])
    return RateSchedule(rates, cfg.eta_base, int(cfg.k), cfg.c, cfg.rule)


def rate_at(sched: RateSchedule, j: int, l: int) -> float:
    """Rate of layer ``j`` (1-based) after ``l`` completed epochs."""
    if int(j) != j or not 1 <= j <= sched.n:
        raise ValidationError(f"layer index {j} outside 1..{sched.n}")
    if l < 0:
        raise ValidationError(f"epoch must be >= 0, got {l}")
    start = sched.initial_rates[j - 1]
    if l == 0:
        return start
    if l >= sched.k:
        return sched.target_rate
    target = sched.target_rate
    # The running max and the clamp only absorb rounding: they keep the rate
    # non-decreasing in l and bounded by [start, target] exactly.
    rate = max(_ramp(sched, start, i / sched.k) for i in range(1, l + 1))
    return min(max(rate, start), target)


def _ramp(sched: RateSchedule, start: float, frac: float) -> float:
    # Weighted means with fixed weights are monotone in ``start`` under
    # rounding, so nearly equal layers never swap order.
    if sched.rule == "linear":
        return (1 - frac) * start + frac * sched.target_rate
    c = sched.c
    return c ** ((1 - frac) * _log(start, c) + frac * _log(sched.target_rate, c))


def layer_rates(sched: RateSchedule, l: int) -> list[float]:
    return [rate_at(sched, j, l) for j in range(1, sched.n + 1)]


@dataclass
class CBSConfig:
    sigma0: float = 1.0
    d: float = 0.9
    u: int = 2
    kernel_size: int = 3

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValidationError(f"sigma0 must be positive, got {self.sigma0}")
        if not 0 < self.d <= 1:
            raise ValidationError(f"decay rate d must lie in (0, 1], got {self.d}")
        if int(self.u) != self.u or self.u < 1:
            raise ValidationError(f"decay step u must be a positive integer, got {self.u}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")


def cbs_sigma_at(cfg: CBSConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")
    return cfg.sigma0 * cfg.d ** (epoch // cfg.u)


@dataclass
class PlateauPolicy:
    factor: float = 0.1
    patience: int = 5
    min_delta: float = 1e-4
    early_stop_patience: int = 12

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValidationError(f"factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1 or self.early_stop_patience < 1:
            raise ValidationError("patience values must be >= 1")
        if self.min_delta < 0:
            raise ValidationError("min_delta must be >= 0")


@dataclass
class PlateauTracker:
    """Per-run reduce-on-plateau / early-stopping state.

    An epoch counts as an improvement when the monitored loss drops below the
    best seen so far by more than ``min_delta``. After ``patience`` epochs
    without one the scale is multiplied by ``factor`` and the counter resets;
    after ``early_stop_patience`` such epochs training should stop.
    """

    policy: PlateauPolicy = field(default_factory=PlateauPolicy)
    best: float = math.inf
    bad_epochs: int = 0
    since_best: int = 0
    scale: float = 1.0

    def step(self, loss: float) -> tuple[bool, bool]:
        """Feed one epoch's loss; returns ``(reduced, stop)``."""
        reduced = False
        if loss < self.best - self.policy.min_delta:
            self.best = loss
            self.bad_epochs = 0
            self.since_best = 0
        else:
            self.bad_epochs += 1
            self.since_best += 1
            if self.bad_epochs >= self.policy.patience:
                self.scale *= self.policy.factor
                self.bad_epochs = 0
                reduced = True
        return reduced, self.since_best >= self.policy.early_stop_patience


def plateau_step(policy: PlateauPolicy, loss_history, current_rate: float):
    """Replay ``loss_history`` and decide the rate for the next epoch.

    Returns ``(new_rate, stop)``; the rate is reduced only when the last
    entry of the history triggers a reduction.
    """
    history = list(loss_history)
    if not history:
        raise ValidationError("loss_history must not be empty")
    tracker = PlateauTracker(policy)
    reduced = stop = False
    for loss in history:
        reduced, stop = tracker.step(loss)
    new_rate = current_rate * policy.factor if reduced else current_rate
    return new_rate, stop
