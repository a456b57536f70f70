# Default parameters for the IOS-assisted full-duplex MISO simulator
# Scenario files override any of these; powers given in dBm there are
# converted to watts at load time.

# Radio
WAVELENGTH = 0.05  # meters
SPACING = WAVELENGTH / 2  # adjacent antennas and IOS elements
PATHLOSS_EXP = 2.5  # kappa, applies to the Rician links only
RICIAN_K = 10**0.3  # 3 dB

# Noise and power (watts)
SIGMA_D2 = 1e-11  # -80 dBm at the destination
SIGMA_R2 = 1e-11  # -80 dBm at the receive antennas
P_MAX = 1.0  # 30 dBm, never stated for the original setup

# Antenna pattern G0 * cos(theta)**q, isotropic by default
GAIN_PEAK = 1.0
GAIN_EXPONENT_TX = 0.0
GAIN_EXPONENT_RX = 0.0

# Array sizes
NUM_TX = 4
NUM_RX = 1
NUM_ELEMENTS = 16

# Anchor positions (x, y, z) in meters
FIRST_TX = (0.0, 0.0, 5.0)
FIRST_RX = (0.0, 0.1, 5.0)
FIRST_IOS = (0.5, 0.0, 5.0)
DESTINATION = (20.0, -10.0, 1.5)

# Optimizer
EPSILON = 1e-5  # relative convergence threshold
MAX_OUTER_ITERS = 100
RANDOMIZATIONS = 1000  # Gaussian samples per SDR mode selection
BRUTEFORCE_LIMIT = 14
SI_NEGLIGIBLE = 1e-14  # fraction of the largest reachable SI treated as zero
EXTRAPOLATION_STEPS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)  # ES surface line search, in last-move units

# Solver
FEASIBILITY_TOL = 1e-7
MAX_SOLVER_ITERS = 200

# Imperfect CSI benchmark
CSI_ETA = 0.95
