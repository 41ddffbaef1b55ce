#!/usr/bin/env python3
"""Effective coefficient against cell resolution and rational approximation depth."""
import math

from stefan_homog.cell import homogenize_matrix
from stefan_homog.fields import MatrixField, Mode, OscillatoryField

TWO_PI = 2.0 * math.pi


def main():
    k = MatrixField.scalar(OscillatoryField.sinusoid(2.0, 1.0, TWO_PI))
    print("periodic k = 2 + sin(2 pi z); exact K0 = sqrt(3)")
    for M in (16, 32, 64, 128, 256, 1024):
        K0 = homogenize_matrix(k, M)[0][0, 0]
        print(f"  M={M:5d}  K0={K0:.15f}  error={abs(K0 - math.sqrt(3)):.2e}")

    qp = MatrixField.scalar(OscillatoryField(2.0, (Mode(0.5, (TWO_PI,)),
                                                   Mode(0.5, (TWO_PI * math.sqrt(2),))), 1))
    print("quasi-periodic k = 2 + (sin(2 pi z) + sin(2 sqrt2 pi z)) / 2")
    for Q in (2, 5, 12, 29, 70):
        K0, _, rat = homogenize_matrix(qp, 256, Q)
        print(f"  Q={Q:3d}  supercell={rat.period:8.1f}  freq error={rat.error:.2e}  K0={K0[0, 0]:.8f}")


if __name__ == "__main__":
    main()
