"""Run information-plane panels end to end and print their phase diagnostics.

    python3 scripts/run_panels.py --panels b c --out runs
    python3 scripts/run_panels.py --panels d --mnist-dir data/mnist5k --set dataset.subsample=5000
"""

import argparse
import time
from pathlib import Path

import yaml

from ibmcr.cli import run_panel
from ibmcr.experiment import ExperimentConfig, panel_config, set_dotted


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--panels", nargs="+", default=["a", "b", "c", "d"], choices=["a", "b", "c", "d"])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--mnist-dir")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    for panel in args.panels:
        raw = panel_config(panel, args.mnist_dir).to_dict()
        for item in args.set:
            key, value = item.split("=", 1)
            set_dotted(raw, key, yaml.safe_load(value))
        cfg = ExperimentConfig.from_dict(raw).validate()
        t0 = time.perf_counter()
        summary = run_panel(cfg, Path(args.out) / cfg.name, quiet=True)
        print(f"panel {panel} ({'-'.join(map(str, cfg.model.hidden_widths))} {cfg.model.activation}), "
              f"{(time.perf_counter() - t0) / 60:.1f} min")
        print("  layer  I(T;Y) first -> final   compression depth")
        for layer, d in sorted(summary["averaged"].items(), key=lambda kv: int(kv[0])):
            flag = " *" if d["shows_compression"] else ""
            print(f"  {layer:>5}  {d['mi_ty_first']:6.3f} -> {d['mi_ty_final']:6.3f}   "
                  f"{d['compression_depth_bits']:6.3f}{flag}")


if __name__ == "__main__":
    main()
