"""Frozen constants chosen by the sweeps in ``benchmarks/calibrate.py``.

Changing any value here changes what the acceptance suites test; rerun the
sweep and update the decisions record together with the value.
"""

# Leading constant for the SFT sample sizes
#   N = ceil(c * C_cov * ln(2/delta) / eps),  n = ceil(c * ln|class| / (delta * eps)).
SFT_C = 0.5

# Constant in SEC <= c * d * ln(T + 1) for linear-softmax sequences.
SEC_C = 0.5

# Optimism coefficient for XPO on the separation instance, in units of beta^2.
XPO_ALPHA_OVER_BETA_SQ = 1e-3

# XPO iteration budget used by the separation suite (the criterion allows up to 5000).
XPO_T = 200
