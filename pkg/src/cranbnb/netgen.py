"""Cloud-RAN instance generation and physical-layer evaluation.

A network instance holds everything that defines one power-minimization
problem: complex downlink channels between L multi-antenna remote radio
heads (RRHs) and K single-antenna mobile users (MUs), per-RRH transmit
power caps and fronthaul link powers, amplifier efficiencies, noise
variances, and per-user SINR targets.

Beamformers are passed around as complex ndarrays of shape (K, N) where
row k is user k's aggregate beamforming vector across all N antennas;
the block for RRH l is the column slice given by ``instance.rrh_slice(l)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError

SCHEMA_VERSION = "v1"


@dataclass(frozen=True)
class GenConfig:
    """Scenario parameters for instance generation.

    The channel model (path loss exponent/intercept, shadowing, noise) is a
    reconstruction of the usual urban macro defaults; every value is a plain
    config field so experiments never depend on any of them implicitly.
    """

    num_rrh: int = 6
    num_users: int = 4
    antennas_per_rrh: int = 2
    region_halfwidth_m: float = 1000.0
    max_tx_power_w: float = 1.0
    amp_efficiency: float = 0.25
    noise_power_w: float = 10.0 ** (-13.2)  # -102 dBm
    sinr_target_db: float = 0.0
    fronthaul_rule: str = "5+l"  # or "uniform:<lo>,<hi>" in watts
    pathloss_const_db: float = 128.1
    pathloss_slope_db: float = 37.6  # per decade of km
    shadowing_std_db: float = 8.0
    min_separation_m: float = 1.0

    def validate(self) -> None:
        if self.num_rrh <= 0 or self.num_users <= 0:
            raise ConfigError("num_rrh and num_users must be positive")
        if self.antennas_per_rrh <= 0:
            raise ConfigError("antennas_per_rrh must be positive")
        if self.max_tx_power_w <= 0 or self.noise_power_w <= 0:
            raise ConfigError("powers must be positive")
        if not 0 < self.amp_efficiency <= 1:
            raise ConfigError("amp_efficiency must lie in (0, 1]")
        if self.region_halfwidth_m <= 0:
            raise ConfigError("region_halfwidth_m must be positive")
        _parse_fronthaul_rule(self.fronthaul_rule)

    def to_json(self) -> dict:
        return {
            "num_rrh": self.num_rrh,
            "num_users": self.num_users,
            "antennas_per_rrh": self.antennas_per_rrh,
            "region_halfwidth_m": self.region_halfwidth_m,
            "max_tx_power_w": self.max_tx_power_w,
            "amp_efficiency": self.amp_efficiency,
            "noise_power_w": self.noise_power_w,
            "sinr_target_db": self.sinr_target_db,
            "fronthaul_rule": self.fronthaul_rule,
            "pathloss_const_db": self.pathloss_const_db,
            "pathloss_slope_db": self.pathloss_slope_db,
            "shadowing_std_db": self.shadowing_std_db,
            "min_separation_m": self.min_separation_m,
        }

    @staticmethod
    def from_json(doc: dict) -> "GenConfig":
        return GenConfig(**doc)


def _parse_fronthaul_rule(rule: str):
    """Returns ('offset', base) or ('uniform', lo, hi)."""
    if rule == "5+l":
        return ("offset", 5.0)
    if rule.startswith("uniform:"):
        try:
            lo, hi = (float(x) for x in rule.split(":", 1)[1].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad fronthaul rule {rule!r}") from exc
        if not 0 < lo <= hi:
            raise ConfigError(f"bad fronthaul range in {rule!r}")
        return ("uniform", lo, hi)
    raise ConfigError(f"unknown fronthaul rule {rule!r}")


@dataclass(frozen=True)
class NetworkInstance:
    """One Cloud-RAN realization; all powers in watts, channels unitless."""

    L: int
    K: int
    antennas: tuple[int, ...]
    channels: np.ndarray  # (K, N) complex128, row k = h_k
    noise_vars: np.ndarray  # (K,)
    max_tx_power: np.ndarray  # (L,)
    fronthaul_power: np.ndarray  # (L,)
    amp_efficiency: np.ndarray  # (L,)
    sinr_targets: np.ndarray  # (K,), linear scale
    seed: int
    config: GenConfig
    rrh_pos: np.ndarray = field(default=None, repr=False)  # (L, 2), meters
    mu_pos: np.ndarray = field(default=None, repr=False)  # (K, 2)

    def __post_init__(self):
        for arr in (self.channels, self.noise_vars, self.max_tx_power,
                    self.fronthaul_power, self.amp_efficiency, self.sinr_targets):
            arr.setflags(write=False)
        if self.channels.shape != (self.K, self.N):
            raise DimensionError("channels must be (K, N)")
        for name in ("noise_vars", "max_tx_power", "fronthaul_power",
                     "amp_efficiency", "sinr_targets"):
            if np.any(getattr(self, name) <= 0):
                raise ConfigError(f"{name} entries must be strictly positive")

    @property
    def N(self) -> int:
        return sum(self.antennas)

    @property
    def antenna_offsets(self) -> tuple[int, ...]:
        offs, acc = [], 0
        for n in self.antennas:
            offs.append(acc)
            acc += n
        return tuple(offs)

    def rrh_slice(self, l: int) -> slice:
        """Antenna index range of RRH l inside an aggregate length-N vector."""
        off = self.antenna_offsets[l]
        return slice(off, off + self.antennas[l])

    def channel_gain(self, l: int) -> float:
        """Total channel power gain of RRH l across users and antennas."""
        return float(np.sum(np.abs(self.channels[:, self.rrh_slice(l)]) ** 2))

    def with_sinr_targets(self, gamma) -> "NetworkInstance":
        """Copy of this instance with new linear SINR targets (scalar or (K,))."""
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (self.K,)).copy()
        return replace(self, sinr_targets=g)


def generate_instance(config: GenConfig, seed: int) -> NetworkInstance:
    """Draw one network realization, deterministic in (config, seed).

    RRH and MU positions are uniform over the square
    [-region_halfwidth, region_halfwidth]^2; MU positions are redrawn as a
    block until no MU sits within ``min_separation_m`` of an RRH.  Channel
    entries combine distance path loss, per-link log-normal shadowing, and
    CN(0, 1) fast fading.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1)))
    L, K = config.num_rrh, config.num_users
    nl = config.antennas_per_rrh
    N = L * nl
    D = config.region_halfwidth_m

    rrh_pos = rng.uniform(-D, D, size=(L, 2))
    mu_pos = rng.uniform(-D, D, size=(K, 2))
    for _ in range(1000):
        dist = np.linalg.norm(mu_pos[:, None, :] - rrh_pos[None, :, :], axis=2)
        if dist.min() >= config.min_separation_m:
            break
        mu_pos = rng.uniform(-D, D, size=(K, 2))
    else:
        raise ConfigError("could not place MUs clear of RRHs")

    shadow_db = rng.normal(0.0, config.shadowing_std_db, size=(K, L))
    fast = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2.0)

    pl_db = config.pathloss_const_db + config.pathloss_slope_db * np.log10(dist / 1000.0)
    amp = 10.0 ** (-(pl_db + shadow_db) / 20.0)  # amplitude gain per (k, l)
    channels = np.repeat(amp, nl, axis=1) * fast

    rule = _parse_fronthaul_rule(config.fronthaul_rule)
    if rule[0] == "offset":
        pc = rule[1] + np.arange(1, L + 1, dtype=float)
    else:
        pc = rng.uniform(rule[1], rule[2], size=L)

    gamma = 10.0 ** (config.sinr_target_db / 10.0)
    return NetworkInstance(
        L=L,
        K=K,
        antennas=(nl,) * L,
        channels=channels,
        noise_vars=np.full(K, config.noise_power_w),
        max_tx_power=np.full(L, config.max_tx_power_w),
        fronthaul_power=pc,
        amp_efficiency=np.full(L, config.amp_efficiency),
        sinr_targets=np.full(K, gamma),
        seed=int(seed),
        config=config,
        rrh_pos=rrh_pos,
        mu_pos=mu_pos,
    )


def fronthaul_power(a, instance: NetworkInstance) -> float:
    """Fronthaul network power of mode vector a: sum of a_l * Pc_l."""
    a = np.asarray(a, dtype=float)
    if a.shape != (instance.L,):
        raise DimensionError(f"mode vector must have length {instance.L}")
    return float(a @ instance.fronthaul_power)


def transmit_power(w: np.ndarray, instance: NetworkInstance) -> float:
    """Total amplifier-weighted transmit power: sum_l sum_k ||w_lk||^2 / eta_l."""
    w = _check_beamformer(w, instance)
    total = 0.0
    for l in range(instance.L):
        blk = w[:, instance.rrh_slice(l)]
        total += float(np.sum(np.abs(blk) ** 2)) / float(instance.amp_efficiency[l])
    return total


def sinr(instance: NetworkInstance, w: np.ndarray, k: int) -> float:
    """Linear SINR of user k (0-based) under beamformer w."""
    w = _check_beamformer(w, instance)
    h = instance.channels[k]
    gains = w.conj() @ h  # entry i = h_k^H w_i
    signal = np.abs(gains[k]) ** 2
    interference = float(np.sum(np.abs(gains) ** 2) - signal)
    return float(signal / (interference + instance.noise_vars[k]))


def check_feasible(instance: NetworkInstance, w: np.ndarray, a, tol: float = 1e-6) -> bool:
    """True iff every SINR meets its target and every per-RRH cap holds.

    SINR_k >= gamma_k*(1 - tol) and sum_k ||w_lk||^2 <= (a_l + tol)*P_l*(1 + tol);
    a may be binary or fractional (the cap is read as a_l*P_l either way).
    The additive tol on a_l gives the cap an absolute floor so that solver
    round-off near a_l = 0 does not flag a numerically optimal point.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    w = _check_beamformer(w, instance)
    a = np.asarray(a, dtype=float)
    if a.shape != (instance.L,):
        raise DimensionError(f"mode vector must have length {instance.L}")
    for k in range(instance.K):
        if sinr(instance, w, k) < instance.sinr_targets[k] * (1.0 - tol):
            return False
    for l in range(instance.L):
        used = float(np.sum(np.abs(w[:, instance.rrh_slice(l)]) ** 2))
        if used > (a[l] + tol) * instance.max_tx_power[l] * (1.0 + tol):
            return False
    return True


def _check_beamformer(w: np.ndarray, instance: NetworkInstance) -> np.ndarray:
    w = np.asarray(w)
    if w.shape != (instance.K, instance.N):
        raise DimensionError(f"beamformer must have shape ({instance.K}, {instance.N})")
    return w


# ---------------------------------------------------------------------------
# JSON (de)serialization, schema "v1"

def instance_to_json(instance: NetworkInstance) -> dict:
    def cpx(mat):
        return [[[float(z.real), float(z.imag)] for z in row] for row in mat]

    return {
        "schema": SCHEMA_VERSION,
        "L": instance.L,
        "K": instance.K,
        "antennas": list(instance.antennas),
        "channels": cpx(instance.channels),
        "noise_vars": [float(x) for x in instance.noise_vars],
        "max_tx_power": [float(x) for x in instance.max_tx_power],
        "fronthaul_power": [float(x) for x in instance.fronthaul_power],
        "amp_efficiency": [float(x) for x in instance.amp_efficiency],
        "sinr_targets": [float(x) for x in instance.sinr_targets],
        "seed": instance.seed,
        "config": instance.config.to_json(),
        "rrh_pos": [[float(x) for x in p] for p in instance.rrh_pos],
        "mu_pos": [[float(x) for x in p] for p in instance.mu_pos],
    }


def instance_from_json(doc: dict) -> NetworkInstance:
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported instance schema {doc.get('schema')!r}")
    ch = np.array([[complex(re, im) for re, im in row] for row in doc["channels"]])
    return NetworkInstance(
        L=doc["L"],
        K=doc["K"],
        antennas=tuple(doc["antennas"]),
        channels=ch,
        noise_vars=np.array(doc["noise_vars"], dtype=float),
        max_tx_power=np.array(doc["max_tx_power"], dtype=float),
        fronthaul_power=np.array(doc["fronthaul_power"], dtype=float),
        amp_efficiency=np.array(doc["amp_efficiency"], dtype=float),
        sinr_targets=np.array(doc["sinr_targets"], dtype=float),
        seed=doc["seed"],
        config=GenConfig.from_json(doc["config"]),
        rrh_pos=np.array(doc["rrh_pos"], dtype=float),
        mu_pos=np.array(doc["mu_pos"], dtype=float),
    )


def save_instance(instance: NetworkInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_json(instance)))


def load_instance(path) -> NetworkInstance:
    return instance_from_json(json.loads(Path(path).read_text()))
