import numpy as np
import pytest

from cranbnb import conic, netgen


def make_single_link(h=0.8 - 0.3j, sigma2=0.04, gamma=1.7, pmax=1.0, pc=7.0, eta=0.25):
    """Hand-built L=1, K=1, N=1 instance with a known closed-form optimum."""
    cfg = netgen.GenConfig(num_rrh=1, num_users=1, antennas_per_rrh=1)
    return netgen.NetworkInstance(
        L=1, K=1, antennas=(1,),
        channels=np.array([[h]], dtype=complex),
        noise_vars=np.array([sigma2]),
        max_tx_power=np.array([pmax]),
        fronthaul_power=np.array([pc]),
        amp_efficiency=np.array([eta]),
        sinr_targets=np.array([gamma]),
        seed=0, config=cfg,
        rrh_pos=np.zeros((1, 2)), mu_pos=np.zeros((1, 2)),
    )


def make_instance(L=4, K=3, seed=7, tsinr_db=0.0, region=500.0, antennas=2,
                  fronthaul_rule="5+l"):
    cfg = netgen.GenConfig(
        num_rrh=L, num_users=K, antennas_per_rrh=antennas,
        region_halfwidth_m=region, sinr_target_db=tsinr_db,
        fronthaul_rule=fronthaul_rule,
    )
    return netgen.generate_instance(cfg, seed)


def enumeration_optimum(instance, tol=None):
    """Independent brute-force oracle: best objective over all 2^L binary modes."""
    L = instance.L
    best_obj, best_a = np.inf, None
    for code in range(2 ** L):
        a = np.array([(code >> l) & 1 for l in range(L)])
        res = conic.solve_fixed(instance, a, tol)
        if res.status == conic.OPTIMAL and res.objective < best_obj:
            best_obj, best_a = res.objective, a
    return best_a, best_obj


def random_beamformer(instance, rng, scale=1e-3):
    return scale * (rng.standard_normal((instance.K, instance.N))
                    + 1j * rng.standard_normal((instance.K, instance.N)))


@pytest.fixture
def single_link():
    return make_single_link()


@pytest.fixture
def small_instance():
    return make_instance(L=3, K=2, seed=11)
