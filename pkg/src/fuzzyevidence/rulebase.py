"""Fuzzy rules with Gaussian memberships and softmin conjunction.

Rule ``i`` reads "if x_1 is close to v_i1 and ... and x_p is close to v_ip
then class k_i". Closeness in dimension ``j`` is
``exp(-(x_j - v_ij)**2 / sigma_ij**2)`` and the conjunction is the
soft-match ``((sum mu_j**q) / p) ** (1/q)`` with a large negative ``q``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .sofm import PrototypeSet, assign

log = logging.getLogger(__name__)

OUTLIER = -1
MEMBERSHIP_FLOOR = 1e-15
_LOG_FLOOR = math.log(MEMBERSHIP_FLOOR)
FORMAT_TAG = "FUZZYRB"
FORMAT_VERSION = 1

# pixels per block when evaluating whole images
_CHUNK = 8192


class RulebaseFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RulebaseConfig:
    kw: float = 50.0
    q: float = -10.0
    epsilon: float = 0.01
    learning_rate: float = 20.0
    max_tune_epochs: int = 200
    min_improvement: float = 1e-4
    spread_floor: float = 1e-3
    spread_rule: str = "printed"

    def __post_init__(self):
        if self.kw <= 0:
            raise ValueError("kw must be positive")
        if self.q > -1:
            raise ValueError("q must be <= -1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_tune_epochs < 0 or self.min_improvement < 0:
            raise ValueError("max_tune_epochs and min_improvement must be non-negative")
        if self.spread_floor <= 0:
            raise ValueError("spread_floor must be positive")
        if self.spread_rule not in ("printed", "rms"):
            raise ValueError("spread_rule must be 'printed' or 'rms'")


@dataclass(frozen=True)
class FuzzyRule:
    center: np.ndarray
    spread: np.ndarray
    consequent: int


@dataclass(frozen=True, eq=False)
class Rulebase:
    centers: np.ndarray
    spreads: np.ndarray
    classes: np.ndarray
    class_count: int
    config: RulebaseConfig = field(default_factory=RulebaseConfig)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64, ndmin=2)
        spreads = np.array(self.spreads, dtype=np.float64, ndmin=2)
        classes = np.asarray(self.classes, dtype=np.intp).reshape(-1)
        if len(classes) == 0:
            centers = centers.reshape(0, centers.shape[-1])
            spreads = spreads.reshape(centers.shape)
        if centers.shape != spreads.shape or len(classes) != len(centers):
            raise ValueError("rule arrays disagree in shape")
        if (spreads <= 0).any() or not np.isfinite(spreads).all():
            raise ValueError("all spreads must be positive and finite")
        if ((classes < 0) | (classes >= self.class_count)).any():
            raise ValueError("rule consequent out of class range")
        for name, arr in (("centers", centers), ("spreads", spreads), ("classes", classes)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.classes)

    def __eq__(self, other):
        if not isinstance(other, Rulebase):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.config == other.config
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.spreads, other.spreads)
            and np.array_equal(self.classes, other.classes)
        )

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def rules(self) -> list[FuzzyRule]:
        return [FuzzyRule(c, s, int(k)) for c, s, k in zip(self.centers, self.spreads, self.classes)]

    def with_params(self, centers, spreads) -> "Rulebase":
        return Rulebase(centers, spreads, self.classes, self.class_count, self.config)


def gaussian_membership(x, v, sigma):
    """``exp(-(x - v)**2 / sigma**2)``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - v) ** 2) / sigma**2)


def soft_match(values, q: float) -> float:
    """Generalized mean ``((sum x_i**q) / n) ** (1/q)`` of positive values.

    Evaluated in log space; the result is clipped into ``[min, max]`` to
    absorb rounding.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("soft_match of no values")
    if q == 0:
        raise ValueError("q must be non-zero")
    if (values <= 0).any():
        raise ValueError("soft_match needs strictly positive values")
    logs = np.log(values)
    out = math.exp((logsumexp(q * logs) - math.log(values.size)) / q)
    return float(min(max(out, values.min()), values.max()))


def _log_memberships(X: np.ndarray, centers: np.ndarray, spreads: np.ndarray) -> np.ndarray:
    """``(n, r, p)`` log-memberships, floored at ``log(MEMBERSHIP_FLOOR)``."""
    z = (X[:, None, :] - centers[None, :, :]) / spreads[None, :, :]
    return np.maximum(-(z * z), _LOG_FLOOR)


def _log_strengths(log_mu: np.ndarray, q: float) -> np.ndarray:
    p = log_mu.shape[-1]
    return (logsumexp(q * log_mu, axis=-1) - math.log(p)) / q


def firing_strength(rule: FuzzyRule, x, config: RulebaseConfig | None = None) -> float:
    """Softmin of the rule's per-dimension memberships at ``x`` (no epsilon cut)."""
    config = config or RulebaseConfig()
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != rule.center.shape:
        raise ValueError(f"sample has dimension {x.size}, rule has {rule.center.size}")
    mu = np.maximum(gaussian_membership(x, rule.center, rule.spread), MEMBERSHIP_FLOOR)
    return soft_match(mu, config.q)


def firing_strengths(rulebase: Rulebase, X) -> np.ndarray:
    """``(n, r)`` raw firing strengths of every rule on every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != rulebase.dim:
        raise ValueError(f"samples have dimension {X.shape[1]}, rulebase has {rulebase.dim}")
    out = np.empty((len(X), len(rulebase)))
    for start in range(0, len(X), _CHUNK):
        block = X[start : start + _CHUNK]
        log_mu = _log_memberships(block, rulebase.centers, rulebase.spreads)
        s = np.exp(_log_strengths(log_mu, rulebase.config.q))
        # a softmin never leaves [min mu, max mu]
        s = np.clip(s, np.exp(log_mu.min(axis=-1)), np.exp(log_mu.max(axis=-1)))
        out[start : start + _CHUNK] = s
    return out


def class_strengths(rulebase: Rulebase, strengths: np.ndarray) -> np.ndarray:
    """Best raw strength per class, ``(n, c)``; zero for classes without rules."""
    out = np.zeros((strengths.shape[0], rulebase.class_count))
    for k in range(rulebase.class_count):
        cols = rulebase.classes == k
        if cols.any():
            out[:, k] = strengths[:, cols].max(axis=1)
    return out


def label_vectors(rulebase: Rulebase, X) -> np.ndarray:
    """Possibilistic label vectors ``(n, c)``; components below epsilon are zero."""
    alpha = class_strengths(rulebase, firing_strengths(rulebase, X))
    alpha[alpha < rulebase.config.epsilon] = 0.0
    return alpha


def label_vector(rulebase: Rulebase, x) -> np.ndarray:
    return label_vectors(rulebase, np.asarray(x, dtype=np.float64)[None, :])[0]


def argmax_lowest(values, tol: float = 1e-12) -> int:
    """Index of the maximum; values within ``tol`` of it count as ties, lowest index wins."""
    values = np.asarray(values, dtype=np.float64)
    return int(np.flatnonzero(values >= values.max() - tol)[0])


def decide_rows(values: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Row-wise :func:`argmax_lowest` for a ``(..., c)`` array."""
    top = values.max(axis=-1, keepdims=True)
    return np.argmax(values >= top - tol, axis=-1)


def classify_noncontextual(alpha) -> int:
    """Class with the largest label-vector component, or :data:`OUTLIER` for an all-zero vector."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not (alpha > 0).any():
        return OUTLIER
    return argmax_lowest(alpha)


def classify_rows(alpha: np.ndarray) -> np.ndarray:
    out = decide_rows(alpha)
    out[~(alpha > 0).any(axis=-1)] = OUTLIER
    return out


def predict(rulebase: Rulebase, X) -> np.ndarray:
    return classify_rows(label_vectors(rulebase, X))


def build_rules(prototypes: PrototypeSet, X, config: RulebaseConfig | None = None, class_count: int | None = None) -> Rulebase:
    """One rule per labeled prototype.

    Centers are the prototypes. The spread in dimension ``j`` is
    ``kw * sqrt(sum (x_j - v_j)**2) / |X_i|`` over the samples ``X_i``
    nearest to the prototype (``spread_rule="printed"``), or the
    root-mean-square form ``kw * sqrt(sum (x_j - v_j)**2 / |X_i|)`` with
    ``spread_rule="rms"``. Spreads are floored at ``config.spread_floor``.
    """
    config = config or RulebaseConfig()
    X = np.asarray(X, dtype=np.float64)
    V = prototypes.vectors
    if (prototypes.labels < 0).any():
        raise ValueError("all prototypes must be labeled")
    if class_count is None:
        class_count = int(prototypes.labels.max()) + 1
    winners = assign(V, X)
    spreads = np.empty_like(V)
    for i in range(len(V)):
        Xi = X[winners == i]
        if len(Xi) == 0:
            raise ValueError(f"prototype {i} has no nearest training sample")
        ss = ((Xi - V[i]) ** 2).sum(axis=0)
        if config.spread_rule == "printed":
            spreads[i] = config.kw * np.sqrt(ss) / len(Xi)
        else:
            spreads[i] = config.kw * np.sqrt(ss / len(Xi))
    spreads = np.maximum(spreads, config.spread_floor)
    return Rulebase(V.copy(), spreads, prototypes.labels.copy(), class_count, config)


# ---------------------------------------------------------------------------
# tuning


@dataclass
class TuningTrace:
    errors: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    rejected_steps: int = 0


def _best_rules(strengths: np.ndarray, classes: np.ndarray, y: np.ndarray):
    """Index and strength of the best own-class and best other-class rule per sample."""
    own = classes[None, :] == y[:, None]
    s_own = np.where(own, strengths, -np.inf)
    s_oth = np.where(own, -np.inf, strengths)
    i_own = np.argmax(s_own, axis=1)
    i_oth = np.argmax(s_oth, axis=1)
    rows = np.arange(len(y))
    return i_own, s_own[rows, i_own], i_oth, s_oth[rows, i_oth]


def tuning_error(rulebase: Rulebase, X, y) -> float:
    """Sum over samples of ``(1 - a_c + a_notc)**2``.

    ``a_c`` is the best firing strength among rules of the sample's class and
    ``a_notc`` the best among the other rules; strengths below epsilon count
    as zero.
    """
    return _error_and_gradient(rulebase, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.intp), grad=False)[0]


def tuning_gradient(rulebase: Rulebase, X, y):
    """``(E, dE/dcenters, dE/dspreads)``.

    Only samples that fire (at or above epsilon) at least one rule of their
    own class and one of another class contribute to the gradient; each
    such sample touches exactly its two best rules.
    """
    return _error_and_gradient(rulebase, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.intp), grad=True)


def _error_and_gradient(rulebase: Rulebase, X: np.ndarray, y: np.ndarray, grad: bool):
    cfg = rulebase.config
    eps = cfg.epsilon
    q = cfg.q
    n, p = X.shape
    E = 0.0
    gV = np.zeros_like(rulebase.centers) if grad else None
    gS = np.zeros_like(rulebase.spreads) if grad else None
    classes = rulebase.classes
    for start in range(0, n, _CHUNK):
        Xb = X[start : start + _CHUNK]
        yb = y[start : start + _CHUNK]
        log_mu = _log_memberships(Xb, rulebase.centers, rulebase.spreads)
        log_s = _log_strengths(log_mu, q)
        s = np.exp(log_s)
        i_c, a_c, i_n, a_n = _best_rules(s, classes, yb)
        a_c = np.where(np.isfinite(a_c), a_c, 0.0)
        a_n = np.where(np.isfinite(a_n), a_n, 0.0)
        fire_c = a_c >= eps
        fire_n = a_n >= eps
        r = 1.0 - np.where(fire_c, a_c, 0.0) + np.where(fire_n, a_n, 0.0)
        E += float((r * r).sum())
        if not grad:
            continue
        used = np.flatnonzero(fire_c & fire_n)
        if used.size == 0:
            continue
        g = 2.0 * r[used]
        for idx, sign in ((i_c, -1.0), (i_n, 1.0)):
            rule = idx[used]
            lm = log_mu[used, rule, :]  # (m, p)
            ls = log_s[used, rule]
            # d(alpha)/d(mu_j) * mu_j = alpha * softmax_j(q * log mu)
            w = np.exp(q * (lm - ls[:, None])) / p
            w[lm <= _LOG_FLOOR] = 0.0
            a = np.exp(ls)[:, None] * w
            diff = Xb[used] - rulebase.centers[rule]
            sig = rulebase.spreads[rule]
            coef = (sign * g)[:, None] * a
            np.add.at(gV, rule, coef * 2.0 * diff / sig**2)
            np.add.at(gS, rule, coef * 2.0 * diff**2 / sig**3)
    return E, gV, gS


def tune_rules(rulebase: Rulebase, X, y, config: RulebaseConfig | None = None, trace: TuningTrace | None = None) -> Rulebase:
    """Gradient descent on :func:`tuning_error` over centers and spreads.

    Each epoch takes one step of ``learning_rate`` times the mean gradient.
    A step that raises the error is retried with the rate halved, at most
    ten times; if all retries fail, tuning stops. Tuning also stops when the
    relative decrease of the error falls below ``min_improvement``. Spreads
    are projected back onto ``[spread_floor, inf)`` after every step.
    """
    config = config or rulebase.config
    rb = replace(rulebase, config=config) if config != rulebase.config else rulebase
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if len(X) == 0 or len(rb) == 0:
        return rb
    lr = config.learning_rate
    E, gV, gS = tuning_gradient(rb, X, y)
    if trace is not None:
        trace.errors.append(E)
    for epoch in range(config.max_tune_epochs):
        if E == 0.0 or (not gV.any() and not gS.any()):
            break
        accepted = None
        for _ in range(11):
            centers = rb.centers - lr * gV / len(X)
            spreads = np.maximum(rb.spreads - lr * gS / len(X), config.spread_floor)
            cand = rb.with_params(centers, spreads)
            E_new = tuning_error(cand, X, y)
            if E_new <= E:
                accepted = cand
                break
            lr *= 0.5
            if trace is not None:
                trace.rejected_steps += 1
        if accepted is None:
            log.debug("tuning stopped at epoch %d: no descent step found", epoch)
            break
        decrease = E - E_new
        rb = accepted
        E_prev = E
        E, gV, gS = tuning_gradient(rb, X, y)
        if trace is not None:
            trace.errors.append(E)
            trace.learning_rates.append(lr)
        if decrease < config.min_improvement * E_prev:
            break
    return rb


# ---------------------------------------------------------------------------
# persistence

_CONFIG_KEYS = [f.name for f in fields(RulebaseConfig)]


def _fmt(v: float) -> str:
    return repr(float(v))


def save_rulebase(rulebase: Rulebase, path) -> None:
    """Write the text format: tag line, ``key=value`` header line, one line per rule.

    Rule lines hold the class, ``p`` centers and ``p`` spreads. Floats are
    written with ``repr`` (shortest round-tripping form).
    """
    cfg = rulebase.config
    head = {
        "p": rulebase.dim,
        "c": rulebase.class_count,
        "rules": len(rulebase),
        "q": _fmt(cfg.q),
        "epsilon": _fmt(cfg.epsilon),
    }
    for key in _CONFIG_KEYS:
        if key not in head:
            val = getattr(cfg, key)
            head[key] = _fmt(val) if isinstance(val, float) else val
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}", " ".join(f"{k}={v}" for k, v in head.items())]
    for c, s, k in zip(rulebase.centers, rulebase.spreads, rulebase.classes):
        lines.append(" ".join([str(int(k))] + [_fmt(v) for v in c] + [_fmt(v) for v in s]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_rulebase(path) -> Rulebase:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise RulebaseFormatError(f"{path}: truncated rulebase file")
    tag = lines[0].split()
    if len(tag) != 2 or tag[0] != FORMAT_TAG:
        raise RulebaseFormatError(f"{path}: not a rulebase file")
    if tag[1] != str(FORMAT_VERSION):
        raise RulebaseFormatError(f"{path}: unsupported version {tag[1]} (expected {FORMAT_VERSION})")
    try:
        head = dict(item.split("=", 1) for item in lines[1].split())
        p, c, n = int(head["p"]), int(head["c"]), int(head["rules"])
    except (ValueError, KeyError) as exc:
        raise RulebaseFormatError(f"{path}: malformed header") from exc
    defaults = RulebaseConfig()
    try:
        kwargs = {k: type(getattr(defaults, k))(head[k]) for k in _CONFIG_KEYS if k in head}
        config = RulebaseConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise RulebaseFormatError(f"{path}: invalid config: {exc}") from exc
    body = lines[2:]
    if len(body) != n:
        raise RulebaseFormatError(f"{path}: header declares {n} rules, found {len(body)}")
    centers = np.empty((n, p))
    spreads = np.empty((n, p))
    classes = np.empty(n, dtype=np.intp)
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 1 + 2 * p:
            raise RulebaseFormatError(f"{path}: rule {i} has {len(parts)} fields, expected {1 + 2 * p}")
        try:
            classes[i] = int(parts[0])
            centers[i] = [float(v) for v in parts[1 : 1 + p]]
            spreads[i] = [float(v) for v in parts[1 + p :]]
        except ValueError as exc:
            raise RulebaseFormatError(f"{path}: rule {i}: {exc}") from exc
    try:
        return Rulebase(centers, spreads, classes, c, config)
    except ValueError as exc:
        raise RulebaseFormatError(f"{path}: {exc}") from exc
