# What a Fisher score looks like: per component a mean block and a precision
# block, weighted by the component's responsibility for the vector.
import numpy as np

from lhs.gmm import GmmModel, posteriors, log_density
from lhs.encoder import fisher_score, fisher_scores

rng = np.random.default_rng(0)
K = 3
w = np.array([0.5, 0.3, 0.2])
mu = rng.normal(0, 1.2, (K, 8))
var = rng.uniform(1, 3, (K, 8))
model = GmmModel(w, mu, var)

v = mu[1] + rng.normal(0, 1, 8)
s = fisher_score(model, v).reshape(K, 2, 8)
print("responsibilities:", np.round(posteriors(model, v), 4))
for k in range(K):
    print("component %d  |mean block| %.3g  |precision block| %.3g" % (
        k, np.abs(s[k, 0]).sum(), np.abs(s[k, 1]).sum()))

# the mean block is a gradient: nudging mu[1, 0] moves log p(v) by about s[1, 0, 0] * h
h = 1e-5
bumped = mu.copy()
bumped[1, 0] += h
delta = log_density(GmmModel(w, bumped, var), v) - log_density(model, v)
print("finite difference %.6f vs score %.6f" % (delta / h, s[1, 0, 0]))

# averaged over samples from the model itself the score is centered at zero
comp = rng.choice(K, size=50000, p=w)
x = mu[comp] + rng.standard_normal((50000, 8)) * np.sqrt(var[comp])
avg = fisher_scores(model, x).mean(0)
print("largest |mean score| over 50k model samples: %.4f" % np.abs(avg).max())
