"""Pull-based SDF training: query projection, loss terms, alternating
generator/discriminator optimization, and the sign-census diagnostic.

Each step projects query points onto the current zero set along the learned
gradient, pulls the projections toward their nearest cloud points (squared
L2), keeps the gradient aligned with the residual direction (cosine), and
nudges predicted SDF values toward a zero scalar field through a
least-squares adversarial pair. Generator updates first, discriminator
second, one Adam step each.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NumericalError
from .geometry import PointCloud, SpatialIndex
from .network import (
    GRAD_EPS,
    Discriminator,
    DualValue,
    ParamGradients,
    PositionalEncoding,
    SdfNetwork,
    _disc_forward,
    _disc_vjp,
    _double_backprop,
    _forward,
    _input_gradient,
    discriminator_forward,
    forward_batch,
    init_discriminator,
    init_geometric,
)
from .sampling import build_query_set

SCC_DIST_EPS = 1e-10

# sub-seed tags so every random source draws from its own derived stream
_SEED_QUERIES = 1
_SEED_BATCHES = 2
_SEED_NET = 3
_SEED_DISC = 4


def derive_seed(seed: int, tag: int) -> int:
    """Stable 32-bit sub-seed for one named random source of a run."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


@dataclass
class TrainConfig:
    iterations: int = 15000
    batch_size: int = 5000
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_self: float = 1.0
    lambda_scc: float = 0.005
    lambda_g: float = 0.005
    seed: int = 0
    determinism: bool = True
    census_interval: int = 10
    queries_per_point: int = 25
    sigma_k: int = 50
    init_radius: float = 0.5
    hidden_layers: int = 8
    width: int = 256
    skip_layer: int | None = 4
    activation_beta: float = 100.0
    use_positional_encoding: bool = False
    pe_frequencies: int = 6
    disc_width: int = 64
    disc_layers: int = 4
    disc_batch_input: bool = False
    precision: str = "single"

    def validate(self) -> None:
        if self.iterations < 0 or self.batch_size < 1:
            raise InputError("iterations must be >= 0 and batch_size >= 1")
        for name in ("learning_rate", "adam_beta1", "adam_beta2", "adam_eps"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        for name in ("lambda_self", "lambda_scc", "lambda_g"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.precision not in ("single", "double"):
            raise InputError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.census_interval < 1:
            raise InputError("census_interval must be >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def encoding(self) -> PositionalEncoding | None:
        if not self.use_positional_encoding:
            return None
        return PositionalEncoding(num_frequencies=self.pe_frequencies)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @staticmethod
    def for_params(params) -> "AdamState":
        return AdamState([np.zeros_like(p) for p in params],
                         [np.zeros_like(p) for p in params])


def adam_update(params, grads, state: AdamState, lr: float,
                beta1: float, beta2: float, eps: float) -> None:
    """One in-place Adam step with bias correction."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


@dataclass
class LossReport:
    step: int
    loss_self: float
    loss_scc: float
    loss_g_adv: float
    loss_d: float
    total_g: float
    pos_count: int | None = None
    neg_count: int | None = None


def project_query(q, dual: DualValue) -> np.ndarray:
    """q' = q - s * grad/max(||grad||, 1e-8), per point."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    qb = np.atleast_2d(q)
    s = np.atleast_1d(np.asarray(dual.value, dtype=np.float64))
    g = np.atleast_2d(np.asarray(dual.input_gradient, dtype=np.float64))
    out = project_queries(qb, s, g)
    return out[0] if single else out


def project_queries(queries: np.ndarray, values: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(gradients, axis=1)
    m = np.maximum(norms, GRAD_EPS)
    return queries - (values / m)[:, None] * gradients


def loss_self(projected: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared Euclidean distance between projections and targets."""
    if len(projected) == 0:
        raise InputError("loss_self needs a non-empty batch")
    d = projected - targets
    return float(np.mean(np.sum(d * d, axis=1)))


def loss_scc(gradients: np.ndarray, projected: np.ndarray, targets: np.ndarray) -> float:
    """Mean cosine distance between the gradient and the residual direction.

    Terms where the projection already coincides with its target (residual
    norm < 1e-10) contribute 0; the result lies in [0, 2].
    """
    if len(projected) == 0:
        raise InputError("loss_scc needs a non-empty batch")
    r = projected - targets
    rho = np.linalg.norm(r, axis=1)
    valid = rho >= SCC_DIST_EPS
    safe_rho = np.where(valid, rho, 1.0)
    rhat = r / safe_rho[:, None]
    gm = np.maximum(np.linalg.norm(gradients, axis=1), GRAD_EPS)
    cos = np.sum(gradients * rhat, axis=1) / gm
    return float(np.mean(np.where(valid, 1.0 - cos, 0.0)))


def adversarial_losses(d_conf_fake, d_conf_real) -> tuple[float, float]:
    """Least-squares adversarial pair from discriminator confidences.

    g_adv = mean 1/2 (D(s) - 1)^2 over fake confidences;
    l_d   = mean 1/2 D(s)^2 + mean 1/2 (D(s') - 1)^2.
    """
    fake = np.asarray(d_conf_fake, dtype=np.float64).ravel()
    real = np.asarray(d_conf_real, dtype=np.float64).ravel()
    if fake.size == 0 or real.size == 0:
        raise InputError("adversarial_losses needs non-empty confidence lists")
    g_adv = float(np.mean(0.5 * (fake - 1.0) ** 2))
    l_d = float(np.mean(0.5 * fake ** 2) + np.mean(0.5 * (real - 1.0) ** 2))
    return g_adv, l_d


def _generator_losses(queries, targets, values, grads, disc: Discriminator,
                      lambda_self: float, lambda_scc: float, lambda_g: float):
    """Loss components of L_G plus its exact partials (s_bar, g_bar).

    Derivation sketch, per query: with m = max(||g||, eps), n = g/m,
    r = (q - t) - s*n, rho = ||r||, the self term is rho^2 and the cosine
    term is 1 - n.rhat; everything reaches (s, g) only through r and n, so
    the chain splits into r_bar -> (s_bar, n_bar) -> g_bar, with the
    adversarial term adding D'(s)-weighted mass to s_bar directly.
    """
    k = len(values)
    gnorm = np.linalg.norm(grads, axis=1)
    m = np.maximum(gnorm, GRAD_EPS)
    nhat = grads / m[:, None]
    r = (queries - targets) - values[:, None] * nhat
    rho = np.linalg.norm(r, axis=1)

    l_self_val = float(np.mean(rho ** 2))

    valid = rho >= SCC_DIST_EPS
    safe_rho = np.where(valid, rho, 1.0)
    rhat = r / safe_rho[:, None]
    cos = np.sum(nhat * rhat, axis=1)
    l_scc_val = float(np.mean(np.where(valid, 1.0 - cos, 0.0)))

    dcache = _disc_forward(disc, values)
    y = dcache.y
    g_adv_val = float(np.mean(0.5 * (y - 1.0) ** 2))

    w_self = lambda_self / k
    w_scc = np.where(valid, lambda_scc / k, 0.0)

    r_bar = (2.0 * w_self) * r
    r_bar += (w_scc / safe_rho)[:, None] * (-(nhat - cos[:, None] * rhat))
    n_bar = -w_scc[:, None] * rhat
    s_bar = -np.sum(r_bar * nhat, axis=1)
    n_bar += -values[:, None] * r_bar
    unguarded = gnorm > GRAD_EPS
    g_bar = np.where(
        unguarded[:, None],
        (n_bar - np.sum(n_bar * nhat, axis=1)[:, None] * nhat) / m[:, None],
        n_bar / GRAD_EPS,
    )

    y_bar = (lambda_g / y.size) * (y - 1.0)
    _, s_bar_adv = _disc_vjp(disc, dcache, y_bar)
    s_bar = s_bar + s_bar_adv

    components = {"loss_self": l_self_val, "loss_scc": l_scc_val, "loss_g_adv": g_adv_val}
    return components, s_bar, g_bar, dcache


def generator_loss_vjp(queries, targets, disc: Discriminator,
                       lambda_self: float, lambda_scc: float, lambda_g: float):
    """VJP closure over the full generator loss, for param_gradients."""
    queries = np.asarray(queries, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)

    def vjp(values, grads):
        comp, s_bar, g_bar, _ = _generator_losses(
            queries, targets, np.asarray(values, dtype=np.float64),
            np.asarray(grads, dtype=np.float64), disc,
            lambda_self, lambda_scc, lambda_g)
        total = (lambda_self * comp["loss_self"] + lambda_scc * comp["loss_scc"]
                 + lambda_g * comp["loss_g_adv"])
        return total, s_bar, g_bar

    return vjp


def sign_census(net: SdfNetwork, probes: np.ndarray) -> tuple[int, int]:
    """Counts of positive and negative SDF values; zeros count as positive."""
    v = forward_batch(net, probes)
    neg = int(np.count_nonzero(v < 0))
    return len(v) - neg, neg


def train_step(net: SdfNetwork, disc: Discriminator, batch_queries, batch_targets,
               cfg: TrainConfig, g_state: AdamState, d_state: AdamState,
               step: int = 0) -> LossReport:
    """One generator update on L_G, then one discriminator update on L_D."""
    q = np.asarray(batch_queries, dtype=net.dtype)
    t = np.asarray(batch_targets, dtype=net.dtype)

    cache = _forward(net, q)
    grads_in, gcache = _input_gradient(net, cache)
    values = cache.values

    comp, s_bar, g_bar, dcache = _generator_losses(
        q, t, values.astype(np.float64), grads_in.astype(np.float64), disc,
        cfg.lambda_self, cfg.lambda_scc, cfg.lambda_g)
    total_g = (cfg.lambda_self * comp["loss_self"] + cfg.lambda_scc * comp["loss_scc"]
               + cfg.lambda_g * comp["loss_g_adv"])
    if not np.isfinite(total_g):
        raise NumericalError(f"non-finite generator loss at step {step}", stage="train")

    g_grads = _double_backprop(net, cache, gcache,
                               s_bar.astype(net.dtype), g_bar.astype(net.dtype))
    adam_update(net.parameters(), g_grads.parameters(), g_state,
                cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    # discriminator sees the pre-update SDF values, detached from the generator
    real = np.zeros(len(values), dtype=disc.dtype)
    rcache = _disc_forward(disc, real)
    _, l_d = adversarial_losses(dcache.y, rcache.y)
    if not np.isfinite(l_d):
        raise NumericalError(f"non-finite discriminator loss at step {step}", stage="train")
    fake_grads, _ = _disc_vjp(disc, dcache, dcache.y / dcache.y.size)
    real_grads, _ = _disc_vjp(disc, rcache, (rcache.y - 1.0) / rcache.y.size)
    d_grads = [a + b for a, b in zip(fake_grads.parameters(), real_grads.parameters())]
    adam_update(disc.parameters(), d_grads, d_state,
                cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    return LossReport(step, comp["loss_self"], comp["loss_scc"], comp["loss_g_adv"],
                      l_d, total_g)


def fit(cloud: PointCloud, cfg: TrainConfig, checkpoint_callback=None,
        progress_callback=None) -> tuple[SdfNetwork, list[LossReport]]:
    """Full pipeline over a normalized cloud: sigmas -> queries -> targets ->
    alternating training loop. Returns the trained network and per-step
    reports (sign census rows every ``census_interval`` steps)."""
    cfg.validate()
    cloud.require_nonempty("fit")
    if np.abs(cloud.points).max() > 1.0 + 1e-9:
        raise InputError("fit expects a normalized cloud with coordinates in [-1, 1]")

    dtype = cfg.dtype
    qs = build_query_set(cloud, cfg.sigma_k, cfg.queries_per_point,
                         derive_seed(cfg.seed, _SEED_QUERIES))
    queries = qs.queries.astype(dtype)
    targets = cloud.points[qs.target_index].astype(dtype)
    probes = cloud.points

    net = init_geometric(derive_seed(cfg.seed, _SEED_NET), r=cfg.init_radius,
                         hidden_layers=cfg.hidden_layers, width=cfg.width,
                         skip_layer=cfg.skip_layer, beta=cfg.activation_beta,
                         encoding=cfg.encoding(), dtype=dtype)
    disc_in = cfg.batch_size if cfg.disc_batch_input else 1
    disc = init_discriminator(derive_seed(cfg.seed, _SEED_DISC), input_dim=disc_in,
                              width=cfg.disc_width, n_layers=cfg.disc_layers, dtype=dtype)
    g_state = AdamState.for_params(net.parameters())
    d_state = AdamState.for_params(disc.parameters())

    batch_rng = np.random.default_rng(derive_seed(cfg.seed, _SEED_BATCHES))
    reports: list[LossReport] = []
    for step in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, len(queries), size=cfg.batch_size)
        report = train_step(net, disc, queries[idx], targets[idx], cfg,
                            g_state, d_state, step=step)
        if step % cfg.census_interval == 0 or step == cfg.iterations:
            report.pos_count, report.neg_count = sign_census(net, probes)
        reports.append(report)
        if checkpoint_callback is not None and (step % 1000 == 0 or step == cfg.iterations):
            checkpoint_callback(step, net)
        if progress_callback is not None:
            progress_callback(step, report)
    return net, reports
