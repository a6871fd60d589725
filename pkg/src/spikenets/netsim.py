"""Ground-truth networks, trend curves, and synthetic spike panels.

All generators are deterministic functions of their seed.  Randomness comes
from numpy's Philox counter-based generator; per-trial substreams are keyed
by ``SeedSequence([seed, trial])`` so trials can be produced concurrently
without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm as norm_dist

RNG_ALGORITHM = "numpy-philox4x64, substream key = SeedSequence([seed, trial])"

TREND_FAMILIES = ("normal_pdf", "gamma_pdf", "zero")
NETWORK_KINDS = ("chain", "erdos_renyi", "stochastic_block")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the substream keyed by (seed, *key)."""
    entropy = [int(seed)] + [int(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class SpikePanel:
    """Trial-structured d-variate binary time series.

    ``data`` has shape (trials, bins, neurons) with entries in {0, 1}.
    ``meta`` carries provenance (bin width, anchors, filters, rng identity).
    """

    data: np.ndarray
    bin_width_ms: float = 1.0
    neuron_ids: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValueError("panel data must be (trials, bins, neurons)")
        if self.data.max(initial=0) > 1:
            raise ValueError("panel entries must be 0/1")
        if self.bin_width_ms <= 0:
            raise ValueError("bin width must be positive")
        if self.neuron_ids is None:
            self.neuron_ids = [f"neuron_{i + 1}" for i in range(self.data.shape[2])]
        if len(self.neuron_ids) != self.data.shape[2]:
            raise ValueError("neuron_ids length does not match neuron dimension")

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_neurons(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class NetworkSpec:
    """Parameters of a ground-truth interaction network generator."""

    kind: str
    d: int
    magnitude: float = 0.3
    sign_mix: float = 0.5
    edge_count: int | None = None           # erdos_renyi
    block_sizes: tuple[int, ...] | None = None  # stochastic_block
    p_within: float | None = None
    p_between: float | None = None

    def sample(self, seed: int) -> np.ndarray:
        if self.kind == "chain":
            return gen_chain(self.d, self.magnitude, self.sign_mix, seed)
        if self.kind == "erdos_renyi":
            if self.edge_count is None:
                raise ValueError("erdos_renyi network needs edge_count")
            return gen_erdos_renyi(self.d, self.edge_count, self.magnitude, self.sign_mix, seed)
        if self.kind == "stochastic_block":
            if self.block_sizes is None or self.p_within is None or self.p_between is None:
                raise ValueError("stochastic_block network needs block_sizes, p_within, p_between")
            return gen_sbm(self.block_sizes, self.p_within, self.p_between,
                           self.magnitude, self.sign_mix, seed)
        raise ValueError(f"unknown network kind {self.kind!r}")


def _signed(rng: np.random.Generator, count: int, magnitude: float, sign_mix: float) -> np.ndarray:
    signs = np.where(rng.random(count) < sign_mix, -1.0, 1.0)
    return signs * magnitude


def gen_chain(d: int, magnitude: float = 0.3, sign_mix: float = 0.5, seed: int = 0) -> np.ndarray:
    """Chain network: only neighbouring nodes interact.

    For each neighbour pair (i, i+1) one orientation is drawn uniformly from
    {forward, backward, both}, so every pair carries at least one directed
    edge and a d-node chain has at most 2(d-1) edges.
    """
    if d < 2:
        raise ValueError("chain network needs d >= 2")
    if magnitude <= 0:
        raise ValueError("magnitude must be positive")
    rng = substream(seed)
    gamma = np.zeros((d, d))
    orientations = rng.integers(0, 3, size=d - 1)
    edges: list[tuple[int, int]] = []
    for i, orient in enumerate(orientations):
        if orient in (0, 2):  # i influences i+1: row i+1, column i
            edges.append((i + 1, i))
        if orient in (1, 2):  # i+1 influences i
            edges.append((i, i + 1))
    weights = _signed(rng, len(edges), magnitude, sign_mix)
    for (r, c), w in zip(edges, weights):
        gamma[r, c] = w
    return gamma


def chain_edge_budget(d: int) -> int:
    """Maximum directed edge count of a d-node chain, 2(d-1).

    Used as the matching edge count when comparing against random networks
    with a similar number of edges.
    """
    return 2 * (d - 1)


def gen_erdos_renyi(d: int, edge_count: int, magnitude: float = 0.3,
                    sign_mix: float = 0.5, seed: int = 0) -> np.ndarray:
    """Random network with exactly ``edge_count`` directed edges."""
    n_pairs = d * (d - 1)
    if not 0 <= edge_count <= n_pairs:
        raise ValueError(f"edge_count must be in [0, {n_pairs}], got {edge_count}")
    rng = substream(seed)
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    chosen = rng.choice(n_pairs, size=edge_count, replace=False)
    weights = _signed(rng, edge_count, magnitude, sign_mix)
    gamma = np.zeros((d, d))
    for idx, w in zip(chosen, weights):
        gamma[pairs[idx]] = w
    return gamma


def gen_sbm(block_sizes: Sequence[int], p_within: float, p_between: float,
            magnitude: float = 0.3, sign_mix: float = 0.5, seed: int = 0) -> np.ndarray:
    """Stochastic-block network: denser within blocks than between them."""
    if not (0 <= p_between <= 1 and 0 <= p_within <= 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    if p_within <= p_between:
        raise ValueError("p_within must exceed p_between")
    labels = np.repeat(np.arange(len(block_sizes)), block_sizes)
    d = labels.size
    rng = substream(seed)
    same_block = labels[:, None] == labels[None, :]
    prob = np.where(same_block, p_within, p_between)
    edges = rng.random((d, d)) < prob
    np.fill_diagonal(edges, False)
    gamma = np.zeros((d, d))
    rows, cols = np.nonzero(edges)  # row-major, deterministic
    gamma[rows, cols] = _signed(rng, rows.size, magnitude, sign_mix)
    return gamma


@dataclass
class TrendCurve:
    """A mean-centered trend sampled at t/n for t = 1..n."""

    values: np.ndarray
    family: str
    params: dict
    amplitude: float


def _raw_pdf(family: str, params: dict, u: np.ndarray) -> np.ndarray:
    if family == "normal_pdf":
        mu, sigma = params["mu"], params["sigma"]
        if sigma <= 0:
            raise ValueError("normal trend needs sigma > 0")
        return norm_dist.pdf(u, loc=mu, scale=sigma)
    if family == "gamma_pdf":
        shape, rate = params["shape"], params["rate"]
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma trend needs shape > 0 and rate > 0")
        return gamma_dist.pdf(u, a=shape, scale=1.0 / rate)
    raise ValueError(f"unknown trend family {family!r}")


def trend_curve(family: str, params: dict | None, amplitude: float, n: int) -> TrendCurve:
    """Scaled pdf (normal or gamma) at t/n, mean-centered; ``zero`` gives zeros."""
    if family not in TREND_FAMILIES:
        raise ValueError(f"unknown trend family {family!r}")
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    params = dict(params or {})
    if family == "zero":
        return TrendCurve(values=np.zeros(n), family=family, params={}, amplitude=0.0)
    u = np.arange(1, n + 1, dtype=float) / n
    raw = amplitude * _raw_pdf(family, params, u)
    return TrendCurve(values=raw - raw.mean(), family=family, params=params,
                      amplitude=float(amplitude))


def calibrated_amplitude(family: str, params: dict | None, n: int, peak: float = 2.0) -> float:
    """Amplitude making the centered curve reach max|f| = ``peak``.

    Resolved once per configuration and recorded in run metadata, so the
    actual scale used is always explicit.
    """
    if family == "zero":
        return 0.0
    unit = trend_curve(family, params, 1.0, n)
    top = np.abs(unit.values).max()
    if top <= 0:
        raise ValueError("degenerate trend: pdf is constant over the sample grid")
    return float(peak / top)


def simulate_bapla(net: np.ndarray, beta: np.ndarray,
                   trends: Sequence[TrendCurve] | np.ndarray,
                   n_trial: int, l: int, seed: int) -> SpikePanel:
    """Draw a spike panel from the autoregressive logistic model.

    For each trial, the pre-history is the zero vector; then
    Y_t,i ~ Bernoulli(logit^-1(beta_i + gamma_i . y_{t-1} + f_i(t/n))).
    Trials use independent Philox substreams keyed by (seed, trial).
    """
    net = np.asarray(net, dtype=float)
    d = net.shape[0]
    if net.shape != (d, d):
        raise ValueError("interaction matrix must be square")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (d,))
    if isinstance(trends, np.ndarray):
        curves = np.asarray(trends, dtype=float)
    else:
        curves = np.stack([np.asarray(tc.values, dtype=float) for tc in trends])
    if curves.shape != (d, n_trial):
        raise ValueError(f"expected {d} trend curves of length {n_trial}, got {curves.shape}")
    f_by_time = curves.T  # (n, d)

    data = np.empty((l, n_trial, d), dtype=np.uint8)
    for trial in range(l):
        rng = substream(seed, trial)
        uniforms = rng.random((n_trial, d))
        y_prev = np.zeros(d)
        for t in range(n_trial):
            p = expit(beta + net @ y_prev + f_by_time[t])
            y_prev = (uniforms[t] < p).astype(np.uint8)
            data[trial, t] = y_prev
    return SpikePanel(data=data, meta={"rng": RNG_ALGORITHM, "seed": int(seed)})
