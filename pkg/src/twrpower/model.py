"""Domain model for wirelessly powered multi-pair two-way relay networks.

A relay with N antennas serves K user pairs.  In the uplink phase both users
of a pair transmit simultaneously and the relay separates pair k with a unit
receive beamformer w_k; in the downlink phase the relay transmits a network
coded stream per pair with covariance V_k = p_k v_k v_k^H, and every user
splits its received signal between an information decoder (fraction beta)
and an energy harvester (fraction 1 - beta).  Users power their uplink
transmission from harvested plus local energy.

All quantities are kept in linear watts internally; dBm appears only at I/O
boundaries.  Per-user arrays are indexed [i, k] with i in {0, 1} the user
within pair k (the partner of user i is 1 - i).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

# Rate targets below this are clamped away: a zero target would make the
# uplink/downlink SINR coefficients vanish and divide subsequent solvers by
# zero, while the benchmark setup draws targets from a range starting at 0.
R_MIN = 0.01


def linear_from_dbm(x):
    """Convert a power from dBm to watts: 10^((x - 30) / 10)."""
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def dbm_from_linear(p):
    """Convert a power from watts to dBm."""
    return 10.0 * np.log10(np.asarray(p, dtype=float)) + 30.0


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance: channels, noise, targets, energy budget.

    Channel arrays have shape (2, K, N); per-user scalars have shape (2, K).
    """

    N: int                 # relay antennas
    K: int                 # user pairs
    h: np.ndarray          # uplink channels h[i, k] in C^N, linear amplitude
    g: np.ndarray          # downlink channels g[i, k] in C^N, linear amplitude
    sigma_r2: float        # relay noise power, W
    sigma_u2: float        # user antenna noise power, W
    sigma_z2: float        # power-splitter noise power, W
    eta: float             # harvest conversion efficiency, in (0, 1)
    p_c: float             # circuit power per symbol-time, W
    E: np.ndarray          # local energy per symbol-time, W, shape (2, K)
    Rbar: np.ndarray       # rate targets, bps/Hz, shape (2, K)
    rho: np.ndarray        # large-scale fading coefficients, shape (2, K)

    def __post_init__(self):
        h = np.ascontiguousarray(np.asarray(self.h, dtype=complex))
        g = np.ascontiguousarray(np.asarray(self.g, dtype=complex))
        E = np.asarray(self.E, dtype=float)
        Rbar = np.asarray(self.Rbar, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if self.N < 1 or self.K < 1:
            raise ValueError("N and K must be positive")
        if h.shape != (2, self.K, self.N) or g.shape != (2, self.K, self.N):
            raise ValueError(f"channel arrays must have shape (2, {self.K}, {self.N})")
        for name, arr in (("E", E), ("Rbar", Rbar), ("rho", rho)):
            if arr.shape != (2, self.K):
                raise ValueError(f"{name} must have shape (2, {self.K})")
        if min(self.sigma_r2, self.sigma_u2, self.sigma_z2, self.p_c) <= 0:
            raise ValueError("noise powers and p_c must be strictly positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if np.any(E <= 0):
            raise ValueError("local energies must be strictly positive")
        if np.any(Rbar < R_MIN):
            raise ValueError(f"rate targets must be >= R_MIN = {R_MIN}")
        for arr in (h, g, E, Rbar, rho):
            arr.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "Rbar", Rbar)
        object.__setattr__(self, "rho", rho)

    def scale_powers(self, c: float) -> "Scenario":
        """Return a copy with every power-like quantity multiplied by c.

        Channels are amplitudes and stay untouched.  Used to condition conic
        programs (powers pre-scaled by 1/sigma_r2) before solving.
        """
        return replace(
            self,
            sigma_r2=self.sigma_r2 * c,
            sigma_u2=self.sigma_u2 * c,
            sigma_z2=self.sigma_z2 * c,
            p_c=self.p_c * c,
            E=self.E * c,
        )

    def to_json(self) -> str:
        """Serialize to the scenario JSON document (complex as [re, im])."""
        def cplx(a):
            return np.stack([a.real, a.imag], axis=-1).tolist()

        doc = {
            "units": "linear",
            "N": self.N,
            "K": self.K,
            "h": cplx(self.h),
            "g": cplx(self.g),
            "sigma_r2": self.sigma_r2,
            "sigma_u2": self.sigma_u2,
            "sigma_z2": self.sigma_z2,
            "eta": self.eta,
            "p_c": self.p_c,
            "E": self.E.tolist(),
            "Rbar": self.Rbar.tolist(),
            "rho": self.rho.tolist(),
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "Scenario":
        doc = json.loads(text)
        if doc.get("units") != "linear":
            raise ValueError("scenario document must declare units='linear'")

        def cplx(a):
            a = np.asarray(a, dtype=float)
            return a[..., 0] + 1j * a[..., 1]

        return Scenario(
            N=int(doc["N"]),
            K=int(doc["K"]),
            h=cplx(doc["h"]),
            g=cplx(doc["g"]),
            sigma_r2=float(doc["sigma_r2"]),
            sigma_u2=float(doc["sigma_u2"]),
            sigma_z2=float(doc["sigma_z2"]),
            eta=float(doc["eta"]),
            p_c=float(doc["p_c"]),
            E=np.asarray(doc["E"], dtype=float),
            Rbar=np.asarray(doc["Rbar"], dtype=float),
            rho=np.asarray(doc["rho"], dtype=float),
        )


@dataclass(frozen=True)
class DerivedCoefficients:
    """Per-user coefficients shared by all solvers.

    alpha[i, k] is the uplink SINR coefficient obtained once the in-pair
    power ratio is balanced; theta[i, k] is the downlink SINR target for
    user (i, k) (driven by the partner's rate target); Theta[i, k] is the
    rank-one downlink channel outer product g g^H.
    """

    alpha: np.ndarray   # shape (2, K), > 0
    theta: np.ndarray   # shape (2, K), > 0
    Theta: np.ndarray   # shape (2, K, N, N), Hermitian PSD rank one

    def __post_init__(self):
        for arr in (self.alpha, self.theta, self.Theta):
            arr.setflags(write=False)


def derive_coefficients(s: Scenario) -> DerivedCoefficients:
    """Compute alpha, theta and the downlink outer products for a scenario.

    With T_{i,k} = 2^(2 Rbar_{i,k}):
        alpha[i, k] = T_{i,k} - T_{i,k} / (T_{1,k} + T_{2,k})
        theta[i, k] = T_{3-i,k} - 1
    """
    if np.any(s.Rbar < R_MIN):
        raise ValueError(f"rate targets must be >= R_MIN = {R_MIN}")
    T = 2.0 ** (2.0 * s.Rbar)
    S = T[0] + T[1]
    alpha = T - T / S[None, :]
    theta = T[::-1] - 1.0
    Theta = s.g[..., :, None] * s.g[..., None, :].conj()
    return DerivedCoefficients(alpha=alpha, theta=theta, Theta=Theta)


@dataclass
class RecoveredBeamformer:
    """Transmit beamformer recovered from a downlink covariance V_k.

    kind 'rank-one': V ~= p v v^H with unit v.  kind 'rank-two':
    V ~= p F F^H with F = [f1 f2] of unit Frobenius norm; the rank-two
    covariance is realized losslessly by sending the stream in 2x2
    orthogonal space-time blocks (see multipair.alamouti_blocks).
    """

    kind: str                    # "rank-one" | "rank-two"
    p: float                     # Tr(V), W
    v: np.ndarray | None = None  # unit vector, rank-one case
    F: np.ndarray | None = None  # N x 2, rank-two case
    eig_ratio2: float = 0.0      # second / largest eigenvalue
    eig_ratio3: float = 0.0      # third / largest eigenvalue

    def covariance(self) -> np.ndarray:
        if self.kind == "rank-one":
            return self.p * np.outer(self.v, self.v.conj())
        return self.p * (self.F @ self.F.conj().T)


@dataclass
class DesignSolution:
    """A full design: beamformers, powers and splitting ratios.

    objective = sum_k Tr(V_k) + sum_{i,k} q_{i,k}  (total transmit power, W).
    """

    w: np.ndarray                          # (K, N) unit receive beamformers
    V: np.ndarray                          # (K, N, N) Hermitian PSD
    recovered: list[RecoveredBeamformer]   # per-pair transmit recovery
    q: np.ndarray                          # (2, K) user powers, W
    beta: np.ndarray                       # (2, K) splitting ratios, (0, 1]
    mu: np.ndarray                         # (2, K) harvest slack, sqrt(W)
    objective: float                       # W

    def pair_covariances(self) -> np.ndarray:
        """Stack of recovered covariances p_k * (outer product), (K, N, N)."""
        return np.stack([r.covariance() for r in self.recovered])


@dataclass
class SolveReport:
    """Outcome bookkeeping for one solver run."""

    status: str                       # optimal | infeasible | max-iterations | numerical-failure
    iterations: int = 0
    objective_trace: list = field(default_factory=list)   # W, per iteration
    residual: float = 0.0             # worst conic feasibility residual seen
    wall_time: float = 0.0            # seconds


def uplink_sinr(s: Scenario, q: np.ndarray, w: np.ndarray, i: int, k: int) -> float:
    """Uplink SINR of user (i, k): own power over inter-pair power + noise.

    The partner's signal is part of the network coded useful signal, so only
    users of other pairs contribute interference.
    """
    wk = w[k]
    num = q[i, k] * np.abs(wk.conj() @ s.h[i, k]) ** 2
    den = s.sigma_r2
    for l in range(s.K):
        if l == k:
            continue
        for j in range(2):
            den += q[j, l] * np.abs(wk.conj() @ s.h[j, l]) ** 2
    return num / den


def uplink_rate(s: Scenario, q: np.ndarray, w: np.ndarray, i: int, k: int) -> float:
    """Achievable uplink rate of user (i, k) in bps/Hz.

    rate = (1/2) [log2( own / (own + partner) + SINR )]^+ ;
    the 1/2 accounts for the two transmission phases and the clamp returns 0
    whenever the log argument does not exceed 1.
    """
    wk = w[k]
    s1 = q[0, k] * np.abs(wk.conj() @ s.h[0, k]) ** 2
    s2 = q[1, k] * np.abs(wk.conj() @ s.h[1, k]) ** 2
    own = s1 if i == 0 else s2
    arg = own / (s1 + s2) + uplink_sinr(s, q, w, i, k)
    if arg <= 1.0:
        return 0.0
    return 0.5 * np.log2(arg)


def downlink_sinr_rate(s: Scenario, V: np.ndarray, beta: np.ndarray,
                       i: int, k: int) -> tuple[float, float]:
    """Downlink (SINR, rate) of user (i, k) for covariances V (K, N, N).

    SINR = beta * Tr(Theta V_k) / (beta * sum_{l != k} Tr(Theta V_l)
           + beta * sigma_u2 + sigma_z2),  rate = (1/2) log2(1 + SINR).
    """
    gik = s.g[i, k]
    recv = np.array([np.real(gik.conj() @ V[l] @ gik) for l in range(s.K)])
    b = beta[i, k]
    num = b * recv[k]
    den = b * (recv.sum() - recv[k]) + b * s.sigma_u2 + s.sigma_z2
    sinr = num / den
    return sinr, 0.5 * np.log2(1.0 + sinr)


def harvested_power(s: Scenario, V: np.ndarray, beta: np.ndarray,
                    i: int, k: int) -> float:
    """Average harvested power at user (i, k): eta (1-beta) (sum_l Tr(Theta V_l) + sigma_u2)."""
    gik = s.g[i, k]
    recv = sum(np.real(gik.conj() @ V[l] @ gik) for l in range(s.K))
    return s.eta * (1.0 - beta[i, k]) * (recv + s.sigma_u2)


def beamformer_covariances(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Build V_k = p_k v_k v_k^H from powers (K,) and unit vectors (K, N)."""
    return p[:, None, None] * (v[:, :, None] * v[:, None, :].conj())


def min_received_power(theta: float, harvest_need: float, sigma_u2: float,
                       sigma_z2: float, eta: float) -> tuple[float, float]:
    """Smallest interference-free received signal power serving one user.

    Returns (r, beta): the minimum value of the received signal power for
    which some splitting ratio beta satisfies both the downlink SINR
    constraint  beta (r / theta - sigma_u2) >= sigma_z2  and the harvest
    constraint  eta (1 - beta) (r + sigma_u2) >= harvest_need,  together
    with the ratio attaining it.  When harvest_need <= 0 the rate
    constraint alone binds and beta = 1; otherwise the two constraints
    intersect at an interior beta, the positive root of a quadratic.

    Besides its direct use (the asymptotic many-antenna design, where r maps
    to p N rho), this pins the magnitude of the conic blocks built from the
    same two constraints, which is what keeps them solvable when the
    harvest-driven power dwarfs the noise floor.
    """
    m2 = max(harvest_need, 0.0)
    B = theta * sigma_z2 - (theta + 1.0) * sigma_u2 + m2 / eta
    t = (B + np.sqrt(B * B + 4.0 * theta * (theta + 1.0) * sigma_u2 * sigma_z2)) / (2.0 * theta)
    beta = min(1.0, sigma_z2 / t)
    return theta * (t + sigma_u2), beta


@dataclass(frozen=True)
class ScenarioParams:
    """Monte-Carlo scenario generation parameters (benchmark defaults)."""

    d_min: float = 1.0                 # m
    d_max: float = 10.0                # m
    pathloss_exponent: float = 2.7
    rho0: float = 1e-3                 # pathloss at reference distance 1 m
    eta: float = 0.8
    noise_dbm: float = -60.0           # sigma_r2 = sigma_u2 = sigma_z2
    p_c_dbm: float = 10.0
    E_dbm_min: float = 9.5
    E_dbm_max: float = 13.0
    rate_min: float = R_MIN            # bps/Hz
    rate_max: float = 2.0
    rate_fixed: float | None = None    # same target for all users when set


def generate_scenario(seed, N: int, K: int,
                      params: ScenarioParams | None = None) -> Scenario:
    """Draw a random scenario; deterministic for a given (seed, N, K, params).

    Distances are uniform in [d_min, d_max], pathloss rho = rho0 * d^-exp,
    channels are circularly-symmetric complex Gaussian with per-entry
    variance rho, and E / rate targets are drawn uniformly in their ranges.
    """
    if params is None:
        params = ScenarioParams()
    if N < 1 or K < 1:
        raise ValueError("N and K must be positive")
    rng = np.random.default_rng(seed)
    d = rng.uniform(params.d_min, params.d_max, size=(2, K))
    rho = params.rho0 * d ** (-params.pathloss_exponent)
    if params.rate_fixed is not None:
        Rbar = np.full((2, K), float(params.rate_fixed))
    else:
        Rbar = rng.uniform(params.rate_min, params.rate_max, size=(2, K))
    E = linear_from_dbm(rng.uniform(params.E_dbm_min, params.E_dbm_max, size=(2, K)))
    scale = np.sqrt(rho / 2.0)[..., None]
    h = scale * (rng.standard_normal((2, K, N)) + 1j * rng.standard_normal((2, K, N)))
    g = scale * (rng.standard_normal((2, K, N)) + 1j * rng.standard_normal((2, K, N)))
    noise = float(linear_from_dbm(params.noise_dbm))
    return Scenario(
        N=N, K=K, h=h, g=g,
        sigma_r2=noise, sigma_u2=noise, sigma_z2=noise,
        eta=params.eta, p_c=float(linear_from_dbm(params.p_c_dbm)),
        E=E, Rbar=np.clip(Rbar, R_MIN, None), rho=rho,
    )
