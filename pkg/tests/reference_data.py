"""Published monthly site data used as an end-to-end fixture.

Incidences are per 1000 person-months; one-month intervals.
"""

VACCINE_RATE = [7.7, 0.0, 5.2, 7.9, 48.4, 140.2, 312.7, 458.5, 375.7, 215.0, 136.4, 66.9]
CONTROL_RATE = [23.4, 10.2, 5.1, 51.9, 192.3, 389.6, 666.7, 563.5, 547.5, 377.1, 213.8, 98.8]
AUC_K = [0.875, 0.765, 0.692, 0.632, 0.580, 0.533, 0.490, 0.450, 0.413, 0.377, 0.344, 0.312]
NCA_SF_K = [16, 10, 0, 44, 144, 249, 354, 105, 172, 162, 77, 32]
NCA_AUC_K = [20, 8, 4, 33, 111, 208, 327, 254, 226, 142, 73, 31]
NCA_SF_TOTAL = 1365
NCA_AUC_TOTAL = 1437

# fitted log-family curve as stated (two decimals / three decimals)
LOG_BETA0 = -1.66
LOG_BETA1 = 0.525
# a pair that rounds to the stated coefficients
LOG_BETA0_UNROUNDED = -1.656
LOG_BETA1_UNROUNDED = 0.525175
