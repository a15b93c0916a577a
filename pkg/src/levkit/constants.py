"""Physical constants (SI)."""
from scipy import constants as _c

MU0 = _c.mu_0
K_B = _c.k
G = 9.80665

#: NdFeB N52, B_r ~ 1.4 T
N52_MAGNETIZATION = 1.1e6
#: side length of the cube magnets in the reference setup
MAGNET_SIDE = 12.7e-3
#: out-of-plane susceptibility of pyrolytic graphite, the reference strength
CHI_Z0 = -450e-6
