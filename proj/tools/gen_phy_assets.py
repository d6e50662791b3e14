#!/usr/bin/env python3
"""Generate the bundled link-performance assets under data/.

BLER curves are an AWGN, SISO, 180 kHz, N_SF = 1, N_Rep = 1 abstraction:
the SNR at which the QPSK-constrained mutual information per resource
element equals the code's information rate (plus an implementation gap)
is taken as the 50% point of a probit-shaped waterfall.

The uplink set covers one single-tone resource unit (I_TBS 0..10) with the
same construction over its 96 data resource elements.

Usage: gen_phy_assets.py [out_dir]
"""

import math
import sys
from pathlib import Path

import numpy as np

# 12 subcarriers x 14 symbols minus 16 NRS resource elements (2 ports).
RES_PER_SUBFRAME = 152
# One tone x 16 slots x 6 data symbols (one DMRS symbol per slot).
RES_PER_UL_RU = 96
UL_MAX_MCS = 10
CRC_BITS = 24
GAP_DB = 2.0
SLOPE_DB = 1.0
BLER_FLOOR = 1e-6
SNR_GRID = np.arange(-20.0, 25.0 + 1e-9, 0.5)

# 3GPP TS 36.213 Table 16.4.1.5.1-1, columns N_SF = 1,2,3,4,5,6,8,10.
TBS_3GPP = [
    [16, 32, 56, 88, 120, 152, 208, 256],
    [24, 56, 88, 144, 176, 208, 256, 344],
    [32, 72, 144, 176, 208, 256, 328, 424],
    [40, 104, 176, 208, 256, 328, 440, 568],
    [56, 120, 208, 256, 328, 408, 552, 680],
    [72, 144, 224, 328, 424, 504, 680, 872],
    [88, 176, 256, 392, 504, 600, 808, 1032],
    [104, 224, 328, 472, 584, 680, 968, 1224],
    [120, 256, 392, 536, 680, 808, 1096, 1352],
    [136, 296, 456, 616, 776, 936, 1256, 1544],
    [144, 328, 504, 680, 872, 1032, 1384, 1736],
    [176, 376, 584, 776, 1000, 1192, 1608, 2024],
    [208, 440, 680, 904, 1128, 1352, 1800, 2280],
    [224, 488, 744, 1032, 1256, 1544, 2024, 2536],
]
N_SF_COLUMNS = [1, 2, 3, 4, 5, 6, 8, 10]

_HERMITE_X, _HERMITE_W = np.polynomial.hermite_e.hermegauss(64)
_HERMITE_W = _HERMITE_W / math.sqrt(2.0 * math.pi)


def qpsk_mi(snr_lin):
    """Mutual information of QPSK on AWGN, bits per complex symbol."""
    llr = 2.0 * snr_lin + 2.0 * math.sqrt(snr_lin) * _HERMITE_X
    per_dim = 1.0 - np.sum(_HERMITE_W * np.logaddexp(0.0, -llr)) / math.log(2.0)
    return 2.0 * per_dim


def required_snr_db(bits_per_re):
    lo, hi = -30.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if qpsk_mi(10.0 ** (mid / 10.0)) < bits_per_re:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bler_at(snr_db, snr50_db):
    z = (snr_db - snr50_db) / SLOPE_DB
    return max(BLER_FLOOR, 0.5 * math.erfc(z / math.sqrt(2.0)))


def tbs_full(mcs, n_sf):
    if n_sf in N_SF_COLUMNS:
        return TBS_3GPP[mcs][N_SF_COLUMNS.index(n_sf)]
    # N_SF 7 and 9 are not allocatable in 3GPP; use the next smaller column.
    return TBS_3GPP[mcs][N_SF_COLUMNS.index(n_sf - 1)]


def threshold_at_bler(points, target=0.1):
    """Inverse interpolation in (dB, log-BLER) space."""
    lt = math.log(target)
    for (s0, b0), (s1, b1) in zip(points, points[1:]):
        if b0 >= target >= b1 and b0 > b1:
            l0, l1 = math.log(b0), math.log(b1)
            return s0 + (lt - l0) * (s1 - s0) / (l1 - l0)
    raise ValueError("BLER curve never crosses target")


def write_curves(out, name, num_mcs, res):
    curves = {}
    with open(out / f"bler_curves{name}.csv", "w", newline="\n") as f:
        f.write("mcs,snr_db,bler\n")
        for mcs in range(num_mcs):
            rate = (tbs_full(mcs, 1) + CRC_BITS) / res
            snr50 = required_snr_db(rate) + GAP_DB
            pts = [(float(s), bler_at(float(s), snr50)) for s in SNR_GRID]
            curves[mcs] = pts
            for s, b in pts:
                f.write(f"{mcs},{s:.1f},{b:.6e}\n")

    with open(out / f"cqi_thresholds{name}.csv", "w", newline="\n") as f:
        f.write("cqi,snr_db\n")
        for mcs in range(1, num_mcs):
            f.write(f"{mcs},{threshold_at_bler(curves[mcs]):.4f}\n")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    out.mkdir(parents=True, exist_ok=True)

    write_curves(out, "", 14, RES_PER_SUBFRAME)
    write_curves(out, "_ul", UL_MAX_MCS + 1, RES_PER_UL_RU)

    with open(out / "tbs_table.csv", "w", newline="\n") as f:
        f.write("mcs,n_sf,bits\n")
        for mcs in range(14):
            for n_sf in range(1, 11):
                f.write(f"{mcs},{n_sf},{tbs_full(mcs, n_sf)}\n")


if __name__ == "__main__":
    main()
