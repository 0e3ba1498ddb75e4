"""A small replication study of the three estimators and of misspecification.

The full-size study (300 replications, n up to 6400) runs through
``stochmed simulate``; this script uses fewer replications so it finishes
in about a minute.
"""

from stochmed.sim import run_coverage, run_table1

res = run_table1(ns=(400, 1600), reps=40, seed=0)
print("n * MSE of the direct effect")
print(res.pivot("n_mse").round(3).to_string(), "\n")
print("bias")
print(res.pivot("bias").round(4).to_string(), "\n")

# The one-step estimator with an intercept-only exposure model stays biased,
# so its n * MSE grows with n; misspecifying e or m does not.
cov = run_coverage(n=1600, reps=60, seed=0)
print(f"Wald coverage at n={cov['n']}: {cov['coverage']:.2f} over {cov['reps']} replications")
