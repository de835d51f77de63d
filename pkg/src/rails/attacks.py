"""White-box evasion attacks in the L-infinity ball: FGSM and PGD.

Inputs live in [0, 1]^d; every iterate is projected back into the
epsilon-ball around the clean point and into the box.  attack_batch gives
each example its own random stream keyed by row position, so no draw ever
couples one example's perturbation to another's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .featmap import FeatureNetwork
from .numerics import derive_stream

ATTACK_KINDS = ("fgsm", "pgd")


@dataclass
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 0.3
    steps: int = 20
    step_size: float | None = None

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(
                f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.epsilon < 0.0:
            raise ConfigError("epsilon must be non-negative")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ConfigError("step_size must be positive")

    def resolved_step_size(self) -> float:
        """Default step size is 2.5 * epsilon / steps."""
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


def fgsm(net: FeatureNetwork, x: np.ndarray, y, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size epsilon, clipped to the box."""
    if epsilon < 0.0:
        raise ConfigError("epsilon must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    grad = net.loss_gradient(x, y)
    return np.clip(x + epsilon * np.sign(grad), 0.0, 1.0)


def pgd(net: FeatureNetwork, x: np.ndarray, y, epsilon: float, steps: int,
        step_size: float | None = None,
        rng: np.random.Generator | None = None) -> np.ndarray:
    """Iterated signed-gradient ascent projected into the epsilon-ball.

    rng drives the uniform random start; rng=None starts at the clean
    point, which makes pgd(steps=1, step_size=epsilon) identical to fgsm.
    """
    cfg = AttackConfig(kind="pgd", epsilon=epsilon, steps=steps,
                       step_size=step_size)
    cfg.validate()
    alpha = cfg.resolved_step_size()
    x0 = np.asarray(x, dtype=np.float64)
    if rng is not None:
        adv = np.clip(x0 + rng.uniform(-epsilon, epsilon, size=x0.shape),
                      0.0, 1.0)
    else:
        adv = x0.copy()
    for _ in range(steps):
        grad = net.loss_gradient(adv, y)
        adv = adv + alpha * np.sign(grad)
        adv = np.clip(adv, x0 - epsilon, x0 + epsilon)
        adv = np.clip(adv, 0.0, 1.0)
    return adv


def attack_batch(net: FeatureNetwork, vectors: np.ndarray, labels: np.ndarray,
                 config: AttackConfig, seed: int) -> np.ndarray:
    """Attack each row against its true label.

    PGD random starts come from per-example streams keyed by row position;
    the gradient iterations themselves run batched.
    """
    config.validate()
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.ndim != 2 or labels.shape != (vectors.shape[0],):
        raise ConfigError("attack_batch needs (n, d) vectors and n labels")
    if config.kind == "fgsm":
        return fgsm(net, vectors, labels, config.epsilon)

    x0 = vectors
    eps = config.epsilon
    adv = np.empty_like(x0)
    for i in range(x0.shape[0]):
        stream = derive_stream(seed, i, "attack-start")
        adv[i] = x0[i] + stream.uniform(-eps, eps, size=x0.shape[1])
    adv = np.clip(adv, 0.0, 1.0)
    alpha = config.resolved_step_size()
    for _ in range(config.steps):
        grad = net.loss_gradient(adv, labels)
        adv = adv + alpha * np.sign(grad)
        adv = np.clip(adv, x0 - eps, x0 + eps)
        adv = np.clip(adv, 0.0, 1.0)
    return adv
