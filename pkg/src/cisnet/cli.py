"""Command-line entry point: ``cisnet <command> [options]``.

Exit codes: 0 success, 1 failed check or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, load_config
from .evaluation import cam, cam_vs_probmap, detection_error
from .experiments import ablation_configs, desk_task, run
from .laplace import GenLaplaceParams, QuadratureError, empirical_theorem_check, truncation_stats
from .model import build_network
from .stego import PGMError, atomic_write, pgm_bytes
from .train import Trainer, pair_scores, train_curriculum

DEFAULT_GRID = "alpha=0.5,1,2;s=0.5,1,2;T=1,3,5"
IDENTITY_TOL = 1e-8
T_VALUES = ("1", "3", "5", "7", "11", "inf")
GAMMA_SET = (0.6, 0.7, 0.8, 0.9, 1.0)


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------- helpers


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def parse_grid(text: str) -> dict[str, list[float]]:
    """``alpha=..;s=..;T=..`` with comma-separated values in each part."""
    out: dict[str, list[float]] = {}
    for part in text.split(";"):
        if "=" not in part:
            raise UsageError(f"malformed grid part {part!r}")
        key, vals = (x.strip() for x in part.split("=", 1))
        if key not in ("alpha", "s", "T") or key in out:
            raise UsageError(f"unexpected grid key {key!r}")
        try:
            out[key] = [float(v) for v in vals.split(",")]
        except ValueError:
            raise UsageError(f"non-numeric value in grid part {part!r}") from None
        if not out[key] or any(not (v > 0 and math.isfinite(v)) for v in out[key]):
            raise UsageError(f"grid values must be positive and finite in {part!r}")
    if set(out) != {"alpha", "s", "T"}:
        raise UsageError("grid needs alpha, s and T")
    return out


def snapshot(out_dir: Path, cfg: RunConfig, args) -> None:
    text = f"# resolved configuration, seed = {args.seed}\n" + cfg.to_text()
    atomic_write(out_dir / "config.resolved.ini", text.encode())


# ---------------------------------------------------------------- commands


def cmd_verify_variance(args, cfg: RunConfig) -> int:
    grid = parse_grid(args.grid)
    rows = []
    ok = True
    for i, (a, s, T) in enumerate(itertools.product(grid["alpha"], grid["s"], grid["T"])):
        params = GenLaplaceParams(a, s)
        st = truncation_stats(params, T)
        passed = st.identity_error() <= IDENTITY_TOL and st.theorem_error() <= IDENTITY_TOL
        emp_gap = ""
        if args.samples:
            emp = empirical_theorem_check(params, T, args.samples, args.seed + i)
            emp_gap = fmt(emp.gap)
        ok &= passed
        rows.append([fmt(a), fmt(s), fmt(T), fmt(st.mu_s), fmt(st.var_b), fmt(st.var_s_direct),
                     fmt(st.var_s_simplified), fmt(st.gap), emp_gap, "1" if passed else "0"])
    header = ["alpha", "s", "T", "mu_s", "var_b", "var_s_direct", "var_s_simplified",
              "gap", "empirical_gap", "pass"]
    atomic_write(args.out_dir / "variance.csv", csv_bytes(header, rows))
    print(f"{sum(r[-1] == '1' for r in rows)}/{len(rows)} grid points pass")
    if not ok:
        raise CheckFailed("variance identity failed on at least one grid point")
    return 0


def cmd_prepare(args, cfg: RunConfig) -> int:
    d = cfg["data"]
    if args.covers:
        covers = dataset.scan_covers(args.covers)
    else:
        covers = dataset.write_synthetic_covers(args.out_dir, d["synthetic_count"], d["size"], args.seed)
    written = dataset.prepare(args.out_dir, covers, d["payloads"], args.seed, d["test_fraction"],
                              d["embedder"], cfg["train"]["augment"])
    for name in sorted(written):
        print(name)
    return 0


def _train_manifests(args, cfg: RunConfig) -> list[tuple[float, Path]]:
    if args.manifest:
        return [(None, Path(args.manifest))]
    if not args.data_dir:
        raise UsageError("train needs --manifest or --data-dir")
    return [(p, Path(args.data_dir) / dataset.manifest_name("train", p)) for p in cfg["train"]["curriculum"]]


def _loss_rows(trainer: Trainer, groups) -> list[list[str]]:
    return [[str(r.epoch), fmt(r.loss), *(fmt(r.rates[g]) for g in groups)] for r in trainer.history]


def cmd_train(args, cfg: RunConfig) -> int:
    tcfg = cfg.train(args.seed)
    embedder = cfg["data"]["embedder"]
    groups = list(tcfg.learning_rates)
    header = ["epoch", "loss", *(f"lr_{g}" for g in groups)]
    ckpt_path = args.out_dir / "checkpoint.ckpt"

    stages = _train_manifests(args, cfg)
    for _, m in stages:
        if not m.is_file():
            raise FileNotFoundError(f"manifest not found: {m}")
    data = {p: dataset.load_manifest(m, embedder) for p, m in stages}
    if len(stages) > 1:
        if args.resume:
            raise UsageError("--resume is supported for single-stage training only")
        cks = train_curriculum([p for p, _ in stages], data, cfg.network(args.seed), tcfg)
        for ck, (p, _) in zip(cks, stages):
            ck.save(args.out_dir / f"checkpoint_{dataset.payload_tag(p)}.ckpt")
        cks[-1].save(ckpt_path)
        trainer = cks[-1].restore()
    else:
        pairs = data[stages[0][0]]
        if args.resume:
            trainer = Checkpoint.load(args.resume).restore()
            # the epoch target is the only training setting a resume may change
            trainer.cfg = replace(trainer.cfg, epochs=tcfg.epochs)
        else:
            trainer = Trainer(build_network(cfg.network(args.seed)), tcfg)
            trainer.calibrate(pairs)

        def save(tr):
            Checkpoint.capture(tr).save(ckpt_path)
            atomic_write(args.out_dir / "losses.csv", csv_bytes(header, _loss_rows(tr, groups)))

        try:
            trainer.fit(pairs, tcfg.epochs, save)
        except FloatingPointError as exc:
            raise CheckFailed(f"{exc}; last good checkpoint kept at {ckpt_path}") from None
    atomic_write(args.out_dir / "losses.csv", csv_bytes(header, _loss_rows(trainer, groups)))
    print(f"trained {trainer.epoch} epochs, final loss {trainer.history[-1].loss:.6f}")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    a = cfg["ablate"]
    axis = a["axis"]
    if args.values:
        if axis == "T":
            values = [v.strip() for v in args.values.split(",")]
        else:
            values = [tuple(x.split(":")) for x in args.values.split(",")]
    else:
        values = list(T_VALUES) if axis == "T" else list(itertools.product(GAMMA_SET, GAMMA_SET))
    try:
        base = replace(cfg.network(args.seed), channels=tuple(a["channels"]))
        cells = ablation_configs(axis, values, base)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    task = desk_task(a["train_pairs"], a["test_pairs"], a["payload"], args.seed,
                     cfg["network"]["input_size"], cfg["data"]["embedder"])
    tcfg = cfg.train(args.seed)
    rows = []
    for label, ncfg in cells:
        r = run(task, ncfg, tcfg)
        print(f"{label}: train P_E {r.train_pe:.4f} test P_E {r.test_pe:.4f}")
        rows.append([label, fmt(r.train_pe), fmt(r.test_pe), fmt(r.gap)])
        atomic_write(args.out_dir / "ablate.csv", csv_bytes(["cell", "train_pe", "test_pe", "gap"], rows))
    return 0


def _load_checkpoint(path) -> Checkpoint:
    if not path:
        raise UsageError("--checkpoint is required")
    return Checkpoint.load(path)


def cmd_eval(args, cfg: RunConfig) -> int:
    net = _load_checkpoint(args.checkpoint).restore().net
    embedder = cfg["data"]["embedder"]
    summary = ["split,pe,auc,threshold"]
    for m in args.manifest:
        m = Path(m)
        pairs = dataset.load_manifest(m, embedder)
        scores, labels = pair_scores(net, pairs)
        rep = detection_error(scores, labels)
        ids = [f"{n}:cover" for n in pairs.names] + [f"{n}:stego" for n in pairs.names]
        rows = [[i, fmt(float(s)), str(int(y))] for i, s, y in zip(ids, scores, labels)]
        atomic_write(args.out_dir / f"scores_{m.stem}.csv", csv_bytes(["image_id", "score", "label"], rows))
        summary.append(f"{m.stem},{fmt(rep.pe)},{fmt(rep.auc)},{fmt(rep.best_threshold)}")
        print(f"{m.stem}: P_E {rep.pe:.4f} AUC {rep.auc:.4f} threshold {rep.best_threshold:.6g}")
    atomic_write(args.out_dir / "summary.csv", ("\n".join(summary) + "\n").encode())
    return 0


def heat_image(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, np.uint8)
    return np.rint(255.0 * (values - lo) / (hi - lo)).astype(np.uint8)


def cmd_cam(args, cfg: RunConfig) -> int:
    net = _load_checkpoint(args.checkpoint).restore().net
    if len(args.manifest) != 1:
        raise UsageError("cam takes exactly one --manifest")
    pairs = dataset.load_manifest(args.manifest[0], cfg["data"]["embedder"])
    count = args.count if args.count is not None else cfg["eval"]["cam_count"]
    if count < 1:
        raise UsageError("--count must be positive")
    count = min(count, len(pairs))
    cam_dir = args.out_dir / "cam"
    cam_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        cm = cam(net, pairs.stegos[i], class_index=1, post_map=cfg["eval"]["post_map"])
        cmp = cam_vs_probmap(cm, pairs.prob_maps[i])
        atomic_write(cam_dir / f"{pairs.names[i]}.pgm", pgm_bytes(heat_image(cm.upscaled)))
        rows.append([pairs.names[i], fmt(cmp.spearman), fmt(cmp.top_decile_overlap), str(int(cmp.constant))])
    atomic_write(args.out_dir / "cam.csv",
                 csv_bytes(["image_id", "spearman", "top_decile_overlap", "constant"], rows))
    print(f"wrote {count} CAM maps, median Spearman {np.median([float(r[1]) for r in rows]):.4f}")
    return 0


COMMANDS = {
    "verify-variance": cmd_verify_variance,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "cam": cmd_cam,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="directory for all outputs")
    common.add_argument("--config", type=Path, help="key = value config file with [sections]")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cisnet", description="Steganalysis network toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify-variance", parents=[common], help="check the truncation variance identities")
    s.add_argument("--grid", default=DEFAULT_GRID, help=f"grid, default {DEFAULT_GRID!r}")
    s.add_argument("--samples", type=int, default=0, help="Monte-Carlo samples per grid point (0 = skip)")

    s = sub.add_parser("prepare", parents=[common], help="materialise stegos and write manifests")
    s.add_argument("--covers", type=Path, help="directory of P5 covers (default: synthetic covers)")

    s = sub.add_parser("train", parents=[common], help="train a network")
    s.add_argument("--manifest", help="training manifest (single stage)")
    s.add_argument("--data-dir", help="directory written by prepare; runs the train.curriculum payloads")
    s.add_argument("--resume", help="checkpoint to resume from")

    s = sub.add_parser("ablate", parents=[common], help="truncation-threshold or (gamma1, gamma2) sweep")
    s.add_argument("--values", help="T values 'a,b,..' or gamma pairs 'g1:g2,..'")

    for name in ("eval", "cam"):
        s = sub.add_parser(name, parents=[common], help=f"{name} from a checkpoint")
        s.add_argument("--checkpoint")
        s.add_argument("--manifest", action="append", default=[], required=True)
        if name == "cam":
            s.add_argument("--count", type=int)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.set)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.network(args.seed)  # validate early
        snapshot(args.out_dir, cfg, args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, PGMError, CheckpointError, QuadratureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
