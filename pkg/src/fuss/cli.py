"""Command-line entry point.

Subcommands:
    run       execute one experiment and write its reports
    ablate    sweep the aggregation ablation matrix
    compare   paired significance tests between two run reports
    gen-data  generate and cache a synthetic dataset on disk
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigurationError, FussError
from .evaluation import SignificanceReport
from .federation import RunReport
from .runner import build_dataset, partition_clients, run_federation
from .wire import save_dataset, save_partition_manifest

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _load_config(path: str, seed: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(path)
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    return cfg


def _write_report(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    # created_at is the one declared nondeterministic field in the output
    payload["created_at"] = datetime.now(timezone.utc).isoformat()
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (out_dir / "resolved_config.json").write_text(
        json.dumps(report.config, indent=2, sort_keys=True)
    )
    with open(out_dir / "rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "round", "client", "corr_loss", "cluster_loss", "reg_loss",
                "head_shift", "centroid_shift", "global_centroid_shift", "val_miou",
            ]
        )
        for entry in report.rounds:
            val = entry["validation"].get("miou")
            for client in entry["clients"]:
                writer.writerow(
                    [
                        entry["round"],
                        client["client_id"],
                        client["corr_loss"],
                        client["cluster_loss"],
                        client["reg_loss"],
                        client["head_shift"],
                        client["centroid_shift"],
                        entry["global_centroid_shift"],
                        val,
                    ]
                )
    method = report.config.get("aggregation", {}).get("strategy", "")
    with open(out_dir / "per_image.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "method", "iou"])
        for row in report.final.get("per_image", []):
            writer.writerow([row["image_id"], method, row["iou"]])
    with open(out_dir / "audit.jsonl", "w") as fh:
        for entry in report.audit_log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    report = run_federation(cfg, threads=args.threads or 1)
    _write_report(report, Path(args.out))
    final = report.final
    if "miou" in final:
        print(f"final {final.get('mode', 'global')} mIoU: {final['miou']:.4f}")
    print(f"report written to {args.out}")
    return EXIT_OK


ABLATION_FLAG_ROWS = {
    "fedavg": [
        (False, True, False),
        (False, False, True),
        (False, True, True),
        (True, True, False),
        (True, False, True),
        (True, True, True),
    ],
    # centroid strategies always aggregate centroids
    "fedcc_kmeans": [
        (False, False, True),
        (True, False, True),
        (False, True, True),
        (True, True, True),
    ],
    "fedcc_maximin": [
        (False, False, True),
        (True, False, True),
        (False, True, True),
        (True, True, True),
    ],
}


def ablation_rows(strategies: list[str], include_local_only: bool = True) -> list[dict]:
    rows = []
    if include_local_only:
        rows.append(
            {"name": "local_only", "strategy": "local_only",
             "weighted": False, "encoder": False, "centroids": False}
        )
    for strategy in strategies:
        for weighted, enc, cent in ABLATION_FLAG_ROWS[strategy]:
            tag = "".join(
                flag for flag, on in (("W", weighted), ("E", enc), ("C", cent)) if on
            )
            rows.append(
                {
                    "name": f"{strategy}_{tag}",
                    "strategy": strategy,
                    "weighted": weighted,
                    "encoder": enc,
                    "centroids": cent,
                }
            )
    return rows


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    strategies = (
        args.strategies.split(",") if args.strategies
        else ["fedavg", "fedcc_kmeans", "fedcc_maximin"]
    )
    for s in strategies:
        if s not in ABLATION_FLAG_ROWS:
            raise ConfigurationError(f"unknown ablation strategy {s!r}")
    rows = ablation_rows(strategies, include_local_only=not args.no_local_only)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for row in rows:
        sub_cfg = cfg.with_overrides(
            **{
                "aggregation.strategy": row["strategy"],
                "aggregation.weighted": row["weighted"],
                "aggregation.aggregate_encoder": row["encoder"],
                "aggregation.aggregate_centroids": row["centroids"],
            }
        )
        report = run_federation(sub_cfg, threads=args.threads or 1)
        _write_report(report, out_dir / row["name"])
        final = report.final
        is_global = final.get("mode") == "global"
        summary.append(
            {
                "name": row["name"],
                "strategy": row["strategy"],
                "W": int(row["weighted"]),
                "E": int(row["encoder"]),
                "C": int(row["centroids"]),
                "global_model": int(is_global),
                "miou_mean": final.get("miou"),
                "miou_best": final.get("best", ""),
                "miou_worst": final.get("worst", ""),
            }
        )
        print(
            f"{row['name']}: mIoU {final.get('miou'):.4f}"
            + ("" if is_global else f" (best {final.get('best'):.4f}, worst {final.get('worst'):.4f})")
        )
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        writer.writeheader()
        writer.writerows(summary)
    print(f"ablation summary written to {out_dir / 'summary.csv'}")
    return EXIT_OK


def _per_image_series(report_path: Path) -> dict[str, float]:
    payload = json.loads(report_path.read_text())
    series = payload.get("final", {}).get("per_image", [])
    return {row["image_id"]: float(row["iou"]) for row in series}


def cmd_compare(args) -> int:
    series_a = _per_image_series(Path(args.report_a))
    series_b = _per_image_series(Path(args.report_b))
    if set(series_a) != set(series_b) or not series_a:
        print("error: reports score different image sets", file=sys.stderr)
        return EXIT_CONFIG
    ids = sorted(series_a)
    a = [series_a[i] for i in ids]
    b = [series_b[i] for i in ids]
    result = SignificanceReport.from_series(a, b)
    payload = result.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "significance.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True)
        )
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.seed)
    train, val = build_dataset(cfg)
    out_dir = Path(args.out)
    manifest = save_dataset(train + val, out_dir)
    clients = partition_clients(cfg, train)
    entries = json.loads(manifest.read_text())["scenes"]
    paths = {e["scene_id"]: e["features"] for e in entries}
    save_partition_manifest(clients, paths, out_dir / "partition.json")
    print(f"wrote {len(train)} train + {len(val)} validation scenes to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuss",
        description="Deterministic federated unsupervised segmentation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=0, help="worker threads (0 = auto)")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="sweep aggregation ablations")
    common(p_abl)
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--strategies", default="", help="comma-separated subset")
    p_abl.add_argument("--no-local-only", action="store_true")
    p_abl.set_defaults(func=cmd_ablate)

    p_cmp = sub.add_parser("compare", help="paired tests between two reports")
    p_cmp.add_argument("--report-a", required=True)
    p_cmp.add_argument("--report-b", required=True)
    p_cmp.add_argument("--out", default="")
    p_cmp.set_defaults(func=cmd_compare)

    p_gen = sub.add_parser("gen-data", help="generate a dataset to disk")
    common(p_gen)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = getattr(args, "threads", 0)
    if threads and threads < 0:
        print("error: --threads must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FussError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
