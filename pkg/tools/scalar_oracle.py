"""High-precision reference values for the exact rate model (mpmath, 50 digits).

Independent of the package: geometry and powers are typed in here from
the reference parameter set. Run ``python3 tools/scalar_oracle.py`` and
copy the printed values into ``tests/test_scenario.py``.
"""

from mpmath import mp, mpf, log, sqrt

mp.dps = 50

r = mpf(1000)
gbs = [(mpf(0), r), (sqrt(3) * r, r), (sqrt(3) * r / 2, -r / 2)]
start = (sqrt(3) * r / 2, r / 2)
H = mpf(100)
alpha0 = mpf(10) ** (mpf(-60) / 10)
sigma2 = mpf(10) ** ((mpf(-114) - 30) / 10)
p_b, p_u, L = mpf(10), mpf(1), mpf(8)


def uplink(u):
    snr = sum(p_b * alpha0 * L / (sigma2 * (H**2 + (u[0] - b[0]) ** 2 + (u[1] - b[1]) ** 2)) for b in gbs)
    return log(1 + snr, 2)


def user(d):
    return log(1 + p_u * alpha0 / (sigma2 * (H**2 + d**2)), 2)


if __name__ == "__main__":
    print("noise_power_W", mp.nstr(sigma2, 20))
    print("uplink_at_intersection", mp.nstr(uplink(start), 20))
    print("uplink_above_gbs1", mp.nstr(uplink(gbs[0]), 20))
    print("user_rate_above_ceu", mp.nstr(user(0), 20))
    print("user_rate_offset_1000", mp.nstr(user(mpf(1000)), 20))
