#!/usr/bin/env python3
"""Ergodicity defect of periodic and quasi-periodic fields as the ball radius grows."""
import math

from stefan_homog.fields import Mode, OscillatoryField, ergodicity_defect


def main():
    fields = {
        "sin z": OscillatoryField.sinusoid(0.0, 1.0, 1.0),
        "sin z + sin(sqrt2 z)": OscillatoryField(0.0, (Mode(1.0, (1.0,)), Mode(1.0, (math.sqrt(2),))), 1),
    }
    radii = (math.pi / 2, 1.0, 10.0, 100.0, 1000.0)
    print(f"{'field':>22}  " + "  ".join(f"t={t:<9.4g}" for t in radii))
    for name, f in fields.items():
        print(f"{name:>22}  " + "  ".join(f"{ergodicity_defect(f, t, 1000.0):<11.3e}" for t in radii))
    print(f"closed form for sin z at t=pi/2: {2 / math.pi ** 2:.6e}")


if __name__ == "__main__":
    main()
