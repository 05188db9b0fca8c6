#!/usr/bin/env python3
"""Regenerates crates/core/tests/data/reference_values.txt.

Every value is evaluated with mpmath at 50 significant digits, independently
of the Rust implementation.
"""

from pathlib import Path

from mpmath import mp, mpf, exp, nstr

mp.dps = 50

GAMMA1 = mpf("0.01")
GAMMA2 = mpf("0.5")


def cycle(fw, bw_at_target):
    num = sum((a + b) ** 2 for a, b in zip(fw, bw_at_target))
    den = GAMMA1 * (sum(a * a for a in fw) + sum(b * b for b in bw_at_target)) + GAMMA2
    return num, den


def main():
    values = {}
    values["confidence_db_unit_error"] = exp(-1)
    values["confidence_db_error_3_4"] = exp(-25)
    values["confidence_db_error_10"] = exp(-100)

    num, den = cycle([mpf(5), mpf(0)], [mpf(0), mpf(0)])
    values["cycle_occluded_numerator"] = num
    values["cycle_occluded_denominator"] = den
    values["cycle_occluded_is_matched"] = mpf(1 if num < den else 0)
    values["confidence_oa_occluded"] = exp(-num / den)

    num, den = cycle([mpf(2), mpf(0)], [mpf(-2), mpf(0)])
    values["cycle_consistent_numerator"] = num
    values["cycle_consistent_denominator"] = den
    values["confidence_oa_ratio_one"] = exp(-mpf("0.58") / mpf("0.58"))

    alpha = mpf(2)
    values["weight_db_zero_confidence"] = 1 + alpha * (1 - mpf(0)) ** mpf("0.5")
    values["weight_oa_full_confidence"] = 1 + alpha * mpf(1) ** mpf(1)

    gamma_seq = mpf("0.8")
    n = 3
    values["sequence_total_unit_losses"] = sum(gamma_seq ** (n - i) for i in range(1, n + 1))

    out = Path(__file__).resolve().parent.parent / "crates/core/tests/data/reference_values.txt"
    lines = ["# key = value, 30 significant digits"]
    lines += [f"{k} = {nstr(v, 30)}" for k, v in values.items()]
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(values)} values to {out}")


if __name__ == "__main__":
    main()
