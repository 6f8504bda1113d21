"""Run the forensic benchmark harness on the demo dataset.

Uses the bundled reference adapters (oracle, anti-oracle, residual-energy
heuristic, seeded random) to exercise the four binary tasks, both
hierarchical 3-way strategies, and size-bucketed localization. Third-party
detectors plug in the same way via the subprocess protocol (see README).

Run:  python demos/04_build_dataset.py && python demos/05_evaluate_detectors.py
"""
from pathlib import Path

from terradiff.bench import (
    STRATEGY_DETECTOR_FIRST,
    STRATEGY_SPLICER_FIRST,
    evaluate,
    reference_detectors,
    reference_localizers,
)
from terradiff.dataset import DatasetManifest

OUT = Path(__file__).parent / "_out"


def main():
    manifest_path = OUT / "dataset" / "test" / "manifest.jsonl"
    if not manifest_path.exists():
        raise SystemExit("run demos/04_build_dataset.py first")
    manifest = DatasetManifest.load(manifest_path)
    root = manifest_path.parent

    dets = reference_detectors(seed=1)
    locs = reference_localizers(seed=1, data_root=root)
    report = evaluate(
        manifest, root,
        detectors=[dets["oracle"], dets["residual"], dets["random"]],
        localizers=[locs["oracle"], locs["random"]],
        three_way_pairs=[
            (STRATEGY_DETECTOR_FIRST, dets["residual"], dets["random"]),
            (STRATEGY_SPLICER_FIRST, dets["residual"], dets["random"]),
        ],
    )
    print(report.render_text())
    (OUT / "report.json").write_text(report.dumps())
    (OUT / "report.txt").write_text(report.render_text())
    print("wrote", OUT / "report.json", "and", OUT / "report.txt")


if __name__ == "__main__":
    main()
