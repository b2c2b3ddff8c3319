"""Print the fitted slopes and headline numbers from the artifacts under out/."""
import csv
import json
import sys
from pathlib import Path


def rows(path: Path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def first_per(rows_, key):
    seen = {}
    for r in rows_:
        seen.setdefault(r[key], r)
    return seen


def main(root: str = "out") -> int:
    base = Path(root)
    if not base.is_dir():
        print(f"no artifacts under {base}; run scripts/run_experiments.sh first", file=sys.stderr)
        return 1
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        print(f"[{d.name}]")
        if (d / "superconvergence.csv").exists():
            for p, r in first_per(rows(d / "superconvergence.csv"), "p").items():
                print(f"  residual slope p={p}: {float(r['fitted_slope']):.4f} +- {float(r['stderr']):.2g}")
        if (d / "normal_form.json").exists():
            cert = json.loads((d / "normal_form.json").read_text())["result"]["certificate"]
            print(f"  steps {cert['steps']}, bounds hold: {cert['bounds_hold']}, gamma_inf {cert['gamma_infinity']}")
        if (d / "scaling.csv").exists():
            for name, r in first_per(rows(d / "scaling.csv"), "experiment").items():
                print(f"  {name}: slope {float(r['fitted_slope']):.4f} +- {float(r['stderr']):.2g}")
        if (d / "lemmas.csv").exists():
            lr = rows(d / "lemmas.csv")
            print(f"  {len(lr)} lemma ratios, max {max(float(r['ratio']) for r in lr):.4f}")
        if (d / "diophantine.json").exists():
            s = json.loads((d / "diophantine.json").read_text())
            print(f"  diophantine passed: {s['passed']}, worst k {s['worst_k']}, margin {s['worst_margin']:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
