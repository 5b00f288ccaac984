import numpy as np
import pytest

from cpbs import ClusteredDataset, Cluster, ModelParams, em_fit, simulate_dataset

S5_TRUTH = ModelParams(beta=np.array([3.0, -1.25, 0.75]), phi=0.45)


def random_cluster(rng, n_max=5, mu_lo=0.05, mu_hi=5.0, y_max=20, phi_lo=0.1, phi_hi=1.5):
    """One randomized (y, mu, phi) triple for oracle batteries."""
    n = int(rng.integers(1, n_max + 1))
    mu = rng.uniform(mu_lo, mu_hi, size=n)
    y = rng.integers(0, y_max + 1, size=n)
    phi = float(rng.uniform(phi_lo, phi_hi))
    return y, mu, phi


def toy_dataset(rng, q=3, n_k=8, p=2, phi=0.5, beta=None):
    """Small synthetic dataset with standard-normal covariates."""
    beta = np.array([0.3, 0.4][:p]) if beta is None else np.asarray(beta)
    clusters = []
    from cpbs.simulate import sample_cluster

    for k in range(q):
        X = np.column_stack([np.ones(n_k)] + [rng.normal(size=n_k) for _ in range(p - 1)])
        mu = np.exp(X @ beta)
        y = sample_cluster(mu, phi, rng)
        clusters.append(Cluster(id=f"g{k}", y=y, X=X))
    return ClusteredDataset(tuple(clusters))


@pytest.fixture(scope="session")
def s5_small():
    """Simulated dataset on the benchmark design, small enough for fast fits."""
    return simulate_dataset(5, 60, S5_TRUTH, seed=1205)


@pytest.fixture(scope="session")
def s5_small_fit(s5_small):
    fit = em_fit(s5_small)
    assert fit.converged
    return fit


@pytest.fixture(scope="session")
def meps_csv(tmp_path_factory):
    """Synthetic survey-shaped fixture: 4 regional clusters of sizes
    393/286/764/557 with binary-coded covariates, generated at coefficients
    typical of an inpatient-admissions analysis."""
    from cpbs.io import ModelSpec, write_dataset_csv
    from cpbs.simulate import sample_cluster

    rng = np.random.default_rng(2003)
    sizes = {"midwest": 393, "northeast": 286, "south": 764, "west": 557}
    truth = ModelParams(
        beta=np.array([-4.139, 0.388, 0.347, -0.370, 0.712, 1.322, 1.826, 0.369]),
        phi=0.175,
    )
    prevalences = [0.52, 0.16, 0.78, 0.14, 0.82, 0.12, 0.55]
    clusters = []
    for name, n_k in sizes.items():
        X = np.column_stack(
            [np.ones(n_k)] + [rng.binomial(1, p, n_k).astype(float) for p in prevalences]
        )
        mu = np.exp(X @ truth.beta)
        y = sample_cluster(mu, truth.phi, rng)
        clusters.append(Cluster(id=name, y=y, X=X))
    data = ClusteredDataset(tuple(clusters))
    spec = ModelSpec(
        response="y",
        cluster="region",
        covariates=(
            "female", "black", "married", "unemployed", "insured", "health_poor", "health_good",
        ),
    )
    path = tmp_path_factory.mktemp("meps") / "meps_shaped.csv"
    write_dataset_csv(path, data, spec)
    return path, spec, truth
