"""Run the sign-switching drift experiment at publication scale.

Estimates the weak and strong drift sensitivities of the market whose
price of risk is 1 on {W < 0}, checks them against the closed forms
T/2 - T^{3/2}/(3 sqrt(2 pi)) and T/2, and writes example1.csv plus a
summary to out/example1.  About twenty seconds at the default
200000 x 2000 resolution; --paths / --steps scale it down.
"""

import sys

from portsens.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if "--out" not in argv:
        argv += ["--out", "out/example1"]
    sys.exit(main(["example1", *argv]))
