"""Run every attack kind with and without a defense and tabulate.

Each attack runs twice at the default desk scale: once against plain
dimension-wise averaging and once against the prediction-screening
defense amplified by the patch max.  TA loss is the checkpoint-averaged
accuracy gap to the attack-free run, attack success only applies to the
two backdoor attacks, and the pulse is the worst accuracy dip after
onset.  The interesting read is each row's left column shrinking in the
right column.
"""

import math

from gradamp.config import ExperimentConfig
from gradamp.harness import run_pair

KINDS = ("l-flip", "g-asc", "l-flip+g-asc", "scale", "dba", "sh-optimized")


def one_pair(kind: str, family: str, amp: str) -> dict:
    cfg = ExperimentConfig.from_mapping(
        {
            "attack.kind": kind,
            "attack.target_label": 1,
            "defense.family": family,
            "defense.amplifier": amp,
            "output.dir": f"demos/out/gallery/{kind}-{family}",
        }
    )
    return run_pair(cfg).metrics_row


def fmt_asr(value: float) -> str:
    return "     -" if isinstance(value, float) and math.isnan(value) else f"{value:6.3f}"


def main():
    print(f"{'':14s} {'-- no defense --':>23s} {'-- screened+amplified --':>27s}")
    print(f"{'attack':14s} {'ta_loss':>8s} {'asr':>6s} {'pulse':>7s} "
          f"{'ta_loss':>8s} {'asr':>6s} {'pulse':>7s}")
    for kind in KINDS:
        base = one_pair(kind, "fedavg", "none")
        guarded = one_pair(kind, "fang", "mp")
        print(
            f"{kind:14s} {base['ta_loss']:8.4f} {fmt_asr(base['avg_asr'])} "
            f"{base['negative_pulse']:7.3f} {guarded['ta_loss']:8.4f} "
            f"{fmt_asr(guarded['avg_asr'])} {guarded['negative_pulse']:7.3f}"
        )


if __name__ == "__main__":
    main()
