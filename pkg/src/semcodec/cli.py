"""Command-line front end: ``semcodec <command> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("semcodec")


class UsageError(Exception):
    pass


# -- run configuration -----------------------------------------------------------

DEFAULT_CONFIG = {
    "data": {"width": 256, "height": 256, "n_frames": 9},
    "train": None,  # filled from TrainConfig defaults
    "eval": {"anchor_mode": "gop", "qp_span": 8, "lambdas": [0, 0.5, 1, 2, 3, 5, 7, 10, 14, 20, 30, 50, 70, 100]},
}
_DATA_KEYS = {"width", "height", "n_frames", "noise_sigma", "n_vessels", "vessel_width_range", "drift_px_per_frame"}
_EVAL_KEYS = {"anchor_mode", "qp_span", "lambdas"}


def _defaults() -> dict:
    from .training import TrainConfig

    cfg = json.loads(json.dumps({k: v for k, v in DEFAULT_CONFIG.items() if v is not None}))
    cfg["train"] = TrainConfig().to_dict()
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base: dict, extra: dict, where: str = "") -> None:
    for k, v in extra.items():
        path = f"{where}{k}"
        if k not in base:
            raise UsageError(f"unknown config key {path!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise UsageError(f"config key {path!r} must be an object")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def resolve_config(path: str | None, overrides: list[str]) -> dict:
    """Defaults, then the JSON file, then ``section.key=value`` overrides; unknown keys are rejected."""
    cfg = _defaults()
    # optional data keys may be absent from the defaults but are still valid
    for k in _DATA_KEYS - set(cfg["data"]):
        cfg["data"][k] = None
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        _merge(cfg, doc)
    for item in overrides or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} is not of the form key=value")
        parts = key.split(".")
        node: dict = {}
        cur = node
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = _parse_value(val)
        _merge(cfg, node)
    cfg["data"] = {k: v for k, v in cfg["data"].items() if v is not None}
    return cfg


def write_run_config(out: Path, cfg: dict, args: argparse.Namespace) -> Path:
    """Store the resolved config and tool version next to ``out``."""
    target = out / "run_config.json" if out.is_dir() else out.with_name(out.name + ".config.json")
    doc = {
        "version": __version__,
        "command": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "set") and _jsonable(v)},
        "config": cfg,
    }
    target.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return target


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _train_config(cfg: dict, seed: int | None = None):
    from .training import TrainConfig

    d = dict(cfg["train"])
    if seed is not None:
        d["seed"] = seed
    return TrainConfig.from_dict(d)


def _eval_cfg(cfg: dict) -> dict:
    ev = cfg["eval"]
    unknown = set(ev) - _EVAL_KEYS
    if unknown:
        raise UsageError(f"unknown eval keys {sorted(unknown)}")
    return ev


# -- list parsing ----------------------------------------------------------------


def parse_list(text: str, kind=float) -> list:
    """Comma-separated values; ``a:b:s`` expands to an inclusive range."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" in tok:
            parts = tok.split(":")
            if len(parts) != 3:
                raise argparse.ArgumentTypeError(f"range {tok!r} must be start:stop:step")
            a, b, s = (int(p) for p in parts)
            if s <= 0:
                raise argparse.ArgumentTypeError(f"range step must be positive in {tok!r}")
            out += [kind(x) for x in range(a, b + 1, s)]
        else:
            try:
                out.append(kind(tok))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad list item {tok!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _int_list(text):
    return parse_list(text, int)


def _float_list(text):
    return parse_list(text, float)


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


# -- corpus helpers ----------------------------------------------------------------


def _load_seqs(corpus: str, domain: str | None = None, split: str | None = None, part: str = "test"):
    from .dataset import load_corpus

    seqs = [s for s, _ in load_corpus(corpus, domain)]
    if split:
        names = json.loads(Path(split).read_text())[part]
        by_name = {s.name: s for s in seqs}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise RuntimeError(f"split names not in corpus: {missing}")
        seqs = [by_name[n] for n in names]
    if not seqs:
        raise RuntimeError(f"no sequences found in {corpus}")
    return seqs


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parent(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(args, cfg):
    from .dataset import gen_corpus

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = gen_corpus(args.count, args.domain, args.seed, out, **cfg["data"])
    write_run_config(out, cfg, args)
    n = sum(1 for e in manifest["sequences"] if e["domain"] == args.domain)
    print(f"wrote {n} domain-{args.domain} sequences to {out}")


def cmd_pretrain(args, cfg):
    from .training import pretrain

    tc = _train_config(cfg, args.seed)
    seqs = _load_seqs(args.corpus, args.domain)
    out = _parent(args.out)
    ckpt, rows = pretrain(seqs, tc, log_path=out.with_name(out.name + ".log.csv"))
    digest = ckpt.save(out)
    write_run_config(out, cfg, args)
    print(f"checkpoint {out} sha256 {digest}")


def cmd_tune(args, cfg):
    from .policy.checkpoint import Checkpoint
    from .tuning import Strategy, make_split, tune

    strategy = Strategy.parse(args.strategy)
    ckpt = Checkpoint.load(args.ckpt)
    tc = _train_config(cfg, args.seed)
    seqs = _load_seqs(args.corpus, args.domain)
    split = make_split(seqs, args.k, args.seed)
    out = _parent(args.out)
    split.save_manifest(out.with_name(out.name + ".split.json"))
    tuned, report = tune(ckpt, strategy, split, tc)
    if strategy is Strategy.PRETRAINED:
        out.write_bytes(Path(args.ckpt).read_bytes())
    else:
        tuned.save(out)
    out.with_name(out.name + ".report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    write_run_config(out, cfg, args)
    print(
        f"checkpoint {out} sha256 {_sha(out)} strategy {strategy.value} "
        f"trainable {report.trainable_params}/{report.total_params} ({100 * report.trainable_fraction:.2f}%)"
    )


def cmd_sweep(args, cfg):
    from .eval import policy_sweep
    from .policy.checkpoint import Checkpoint

    ckpt = Checkpoint.load(args.ckpt)
    lambdas = args.lambdas if args.lambdas is not None else _eval_cfg(cfg)["lambdas"]
    curve = policy_sweep(ckpt, _load_seqs(args.corpus, args.domain, args.split), lambdas)
    out = _parent(args.out)
    curve.save_csv(out)
    write_run_config(out, cfg, args)
    print(f"wrote {len(curve)} points to {out}")


def cmd_anchor(args, cfg):
    from .eval import anchor_sweep

    mode = args.mode or _eval_cfg(cfg)["anchor_mode"]
    curve = anchor_sweep(_load_seqs(args.corpus, args.domain, args.split), args.qps, mode)
    out = _parent(args.out)
    curve.save_csv(out)
    write_run_config(out, cfg, args)
    print(f"wrote {len(curve)} points to {out}")


def cmd_baseline(args, cfg):
    from .eval import baseline_sweep

    ev = _eval_cfg(cfg)
    span = args.span if args.span is not None else ev["qp_span"]
    curves = baseline_sweep(
        _load_seqs(args.corpus, args.domain, args.split), args.kinds, args.qps, span, args.mode or ev["anchor_mode"]
    )
    out = _parent(args.out)
    lines = ["label,rate_bpp,quality_miou"]
    for kind in args.kinds:
        lines += curves[kind].to_csv().splitlines()[1:]
    out.write_text("\n".join(lines) + "\n")
    write_run_config(out, cfg, args)
    print(f"wrote {len(args.kinds)} curves to {out}")


def cmd_bd(args, cfg):
    from .eval import RdCurve, bd_metric

    anchor = RdCurve.load_csv(args.anchor)
    test = RdCurve.load_csv(args.test)
    res = bd_metric(anchor.pareto(), test.pareto())
    out = _parent(args.out)
    out.write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    write_run_config(out, cfg, args)
    print(json.dumps(res.to_dict(), sort_keys=True))


def cmd_bench(args, cfg):
    from .codec import decode_frame, encode_sequence, frame_qp_schedule
    from .policy import CTU_OFFSETS
    from .policy.checkpoint import Checkpoint, fresh
    from .training import RewardConfig, prepare, run_episode

    seqs = _load_seqs(args.corpus, args.domain)[: args.limit]
    ckpt = Checkpoint.load(args.ckpt) if args.ckpt else fresh(0)
    norm = float(ckpt.meta.get("bpp_norm", 1.0))
    preps = prepare(seqs)
    t_agent = t_enc = t_dec = 0.0
    frames = 0
    for p in preps:
        t0 = time.perf_counter()
        ep = run_episode(p, ckpt, RewardConfig(args.lam, norm), "greedy")
        t1 = time.perf_counter()
        qps = frame_qp_schedule(ep.qp_i, p.n_frames)
        offs = list(CTU_OFFSETS[ep.ctu_actions].reshape(p.n_frames, *p.grid))
        t2 = time.perf_counter()
        streams, _, _ = encode_sequence(p.seq, qps, offs)
        t3 = time.perf_counter()
        prev = None
        for bs in streams:
            prev = decode_frame(bs, prev)
        t4 = time.perf_counter()
        # the episode also encoded and segmented; subtract the separately timed encode
        t_agent += max(0.0, (t1 - t0) - (t3 - t2))
        t_enc += t3 - t2
        t_dec += t4 - t3
        frames += p.n_frames
    report = {
        "sequences": len(preps),
        "frames": frames,
        "agent_decision_s_per_frame": t_agent / frames,
        "encode_s_per_frame": t_enc / frames,
        "decode_s_per_frame": t_dec / frames,
    }
    for k, v in report.items():
        print(f"{k}: {v:.6f}" if isinstance(v, float) else f"{k}: {v}")
    if args.out:
        out = _parent(args.out)
        out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        write_run_config(out, cfg, args)


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .eval import ANCHOR_MODES, HANDCRAFTED_KINDS
    from .tuning import STRATEGY_NAMES

    parser = argparse.ArgumentParser(prog="semcodec", description="Semantic-aware video codec with RL rate control.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--help-json", action="store_true", help="print the command and flag table as JSON and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted config override")
        p.set_defaults(func=func)
        return p

    def corpus_args(p, split=False):
        p.add_argument("--corpus", required=True, help="corpus directory (with manifest.json)")
        p.add_argument("--domain", choices=("A", "B"), help="restrict to one domain")
        if split:
            p.add_argument("--split", help="split manifest; restricts to its test sequences")

    p = add("gen-data", cmd_gen_data, "generate a synthetic phantom corpus")
    p.add_argument("--domain", required=True, choices=("A", "B"))
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, "pretrain both agents from scratch")
    corpus_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output checkpoint")

    p = add("tune", cmd_tune, "few-shot tuning with one strategy")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    corpus_args(p)
    p.add_argument("--k", required=True, type=int, choices=(1, 3, 5))
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output checkpoint")

    p = add("sweep", cmd_sweep, "greedy policy RD sweep over lambda")
    p.add_argument("--ckpt", required=True)
    corpus_args(p, split=True)
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--out", required=True, help="output CSV")

    p = add("anchor", cmd_anchor, "constant-QP anchor RD sweep")
    corpus_args(p, split=True)
    p.add_argument("--qps", required=True, type=_int_list)
    p.add_argument("--mode", choices=ANCHOR_MODES)
    p.add_argument("--out", required=True, help="output CSV")

    p = add("baseline", cmd_baseline, "hand-crafted QP-map RD sweeps")
    corpus_args(p, split=True)
    p.add_argument("--kinds", required=True, type=_str_list, help=f"comma list from {','.join(HANDCRAFTED_KINDS)}")
    p.add_argument("--qps", required=True, type=_int_list)
    p.add_argument("--span", type=int)
    p.add_argument("--mode", choices=ANCHOR_MODES)
    p.add_argument("--out", required=True, help="output CSV")

    p = add("bd", cmd_bd, "BD-rate and BD-mIoU of a test curve against an anchor curve")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="output JSON")

    p = add("bench", cmd_bench, "per-stage wall-clock timing")
    corpus_args(p)
    p.add_argument("--ckpt")
    p.add_argument("--lam", type=float, default=5.0)
    p.add_argument("--limit", type=int, default=4)
    p.add_argument("--out", help="optional JSON report")
    return parser


def help_table(parser: argparse.ArgumentParser) -> dict:
    out = {}
    for action in parser._subparsers._group_actions:
        for name, sp in action.choices.items():
            out[name] = [
                {
                    "flags": a.option_strings,
                    "required": a.required,
                    "choices": list(a.choices) if a.choices else None,
                    "help": a.help,
                }
                for a in sp._actions
                if a.option_strings and a.dest != "help"
            ]
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.help_json:
        print(json.dumps(help_table(parser), indent=1, sort_keys=True))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("semcodec: error: a command is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.set)
        _eval_cfg(cfg)
    except UsageError as e:
        print(f"semcodec {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    np.seterr(all="ignore")
    try:
        args.func(args, cfg)
    except UsageError as e:
        print(f"semcodec {args.command}: usage error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError, FloatingPointError) as e:
        print(f"semcodec {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
