import numpy as np
import pytest

from riskbid import BayesianLogisticRegression, LogNormalMarket, SyntheticSpec, generate_synthetic

# reference setting: logit posterior (-1, 1/3), click value 300, lognormal(4, 0.5) market
REF_M, REF_S2, REF_V = -1.0, 1.0 / 3.0, 300.0

# frozen from scipy.integrate.quad on the closed-form density
REF_MEAN = 0.2825661504655664
REF_STD = 0.11131136525955172
REF_SECOND = 0.09223384942487443
# lognormal(4, 0.5) truncated moments at b = 84, by quad on the lognormal pdf
REF_Z = (0.8055554117508512, 39.668839518220885, 2186.9513501476054)
# P(v y < z < 84) by nested quadrature
REF_PNEG = 0.13948922702686126


@pytest.fixture
def ref_market():
    return LogNormalMarket(mu=4.0, sigma=0.5)


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(n_records=6000, n_fields=4, field_cardinality=50, bias=-2.0)
    return generate_synthetic(spec, seed=11)


@pytest.fixture(scope="session")
def small_model(small_data):
    log = small_data.log
    return BayesianLogisticRegression(eta=0.05, epochs=2).fit(log.X, log.clicks)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
