"""Full pipeline: attacked pair run, amplified-vector dump, report.

Runs a clean/attacked pair under the boosted backdoor with the
distance-cosine defense, dumps the amplified vectors of one round for
projection, then renders the report: a summary table, accuracy and
attack-success plots as SVG, and the 2-D projection of the dumped
vectors where the colluding cohort separates visually.
"""

import os

from gradamp.config import ExperimentConfig
from gradamp.harness import run_pair
from gradamp.report import report


def main():
    out = "demos/out/pair"
    cfg = ExperimentConfig.from_mapping(
        {
            "attack.kind": "scale",
            "attack.target_label": 1,
            "defense.family": "dist-cos",
            "defense.amplifier": "mp",
            "output.dir": out,
            "output.dump_amplified_round": 30,
        }
    )
    summary = run_pair(cfg)
    row = summary.metrics_row
    print(f"ta_loss {row['ta_loss']:.4f}  avg_asr {row['avg_asr']:.4f}  "
          f"pulse {row['negative_pulse']:.4f}")

    manifests = [
        os.path.join(out, "clean", "manifest.txt"),
        os.path.join(out, "attacked", "manifest.txt"),
    ]
    written = report(manifests, "demos/out/report")
    print("report files:")
    for path in written:
        print(f"   {path}")


if __name__ == "__main__":
    main()
