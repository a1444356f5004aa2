"""Command-line entry point: ``fwpkm {bench,ablate,verify,inspect,reset}``.

Settings come from built-in defaults, then an optional INI file
(``--config``, sections ``[memory]``, ``[episode]``, ``[run]``), then flags.
Exit codes: 0 success, 1 check failure, 2 configuration error, 3 I/O error.
"""

import argparse
import configparser
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .bench import EpisodeSpec, gen_episode, run_niter, write_csv, write_jsonl
from .diagnostics import trace_retrieval, usage_stats
from .errors import ArgumentError, FwPKMError, StorageError
from .memory import MemoryConfig, init, load, retrieve, save
from .seeding import int_seed

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunConfig:
    # memory
    slots: int = 64 * 64
    key_dim: int = 32
    value_dim: int = 32
    heads: int = 1
    top_k: int = 8
    chunk_size: int = 512
    eps_idw: float = 1e-3
    addr_weight: float = 10.0
    score: str = "idw"
    lr: float = 1.0
    value_norm: bool = True
    addr_loss: bool = True
    gating: bool = True
    loss_weight: bool = True
    lookahead: bool = True
    # episode
    needles: int = 5
    distractors: int = 1000
    codebook: int = 256
    gate_mode: str = "all_one"
    # run
    seed: int = 0
    seeds: int = 10
    iters: int = 4
    chunking: str = "per_episode"
    scales: str = "1"
    out: str = "fwpkm_out"
    workers: int = 1

    def memory_config(self):
        n_sub = math.isqrt(self.slots)
        if n_sub * n_sub != self.slots:
            raise ArgumentError(f"slots={self.slots} is not a perfect square")
        return MemoryConfig(
            n_sub=n_sub, key_dim=self.key_dim, value_dim=self.value_dim, heads=self.heads,
            top_k=self.top_k, chunk_size=self.chunk_size, eps_idw=self.eps_idw,
            addr_weight=self.addr_weight, score_kind=self.score, lr=self.lr,
            value_norm=self.value_norm, addressing_loss=self.addr_loss, gating=self.gating,
            loss_weighting=self.loss_weight, lookahead=self.lookahead,
        )

    def scale_list(self):
        try:
            vals = [int(s) for s in str(self.scales).split(",") if s.strip()]
        except ValueError:
            raise ArgumentError(f"bad --scales {self.scales!r}") from None
        if not vals or any(v < 1 for v in vals):
            raise ArgumentError("--scales needs positive integers")
        return vals

    def episode_spec(self, seed, scale=1):
        return EpisodeSpec(
            n_needles=self.needles, n_distractors=self.distractors * scale,
            codebook_size=self.codebook, key_dim=self.heads * self.key_dim,
            value_dim=self.value_dim, seed=seed, gate_mode=self.gate_mode,
        )

    def validate(self):
        self.memory_config()
        self.scale_list()
        self.episode_spec(0).validate()
        if self.seeds < 1 or self.iters < 1 or self.workers < 1:
            raise ArgumentError("seeds, iters and workers must be positive")
        if self.chunking not in ("per_episode", "fixed_C"):
            raise ArgumentError("chunking must be per_episode or fixed_C")


SECTIONS = {
    "memory": ("slots", "key_dim", "value_dim", "heads", "top_k", "chunk_size", "eps_idw",
               "addr_weight", "score", "lr", "value_norm", "addr_loss", "gating", "loss_weight", "lookahead"),
    "episode": ("needles", "distractors", "codebook", "gate_mode"),
    "run": ("seed", "seeds", "iters", "chunking", "scales", "out", "workers"),
}
FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name, raw):
    typ = FIELD_TYPES[name]
    if typ in (bool, "bool"):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ArgumentError(f"{name}: expected a boolean, got {raw!r}")
    conv = {"int": int, "float": float, "str": str}.get(typ, typ)
    try:
        return conv(raw)
    except ValueError:
        raise ArgumentError(f"{name}: cannot parse {raw!r}") from None


def read_config_file(path):
    cp = configparser.ConfigParser()
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as e:
        raise StorageError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ArgumentError(f"{path}: {e}") from e
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ArgumentError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            key = key.replace("-", "_")
            if key not in SECTIONS[section]:
                raise ArgumentError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _coerce(key, raw)
    return values


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="INI file with [memory]/[episode]/[run] sections")
    g = p.add_argument_group("memory")
    g.add_argument("--slots", type=int, default=S, help="total slots N (perfect square), default 4096")
    g.add_argument("--key-dim", type=int, default=S, help="key dim per head, default 32")
    g.add_argument("--value-dim", type=int, default=S, help="default 32")
    g.add_argument("--heads", type=int, default=S, help="default 1")
    g.add_argument("--top-k", type=int, default=S, help="default 8")
    g.add_argument("--chunk-size", type=int, default=S, help="default 512")
    g.add_argument("--eps-idw", type=float, default=S, help="default 1e-3")
    g.add_argument("--addr-weight", type=float, default=S, help="default 10")
    g.add_argument("--score", choices=("idw", "dot"), default=S)
    g.add_argument("--lr", type=float, default=S, help="default 1.0")
    for flag, dest in (("value-norm", "value_norm"), ("addr-loss", "addr_loss"), ("gating", "gating"),
                       ("loss-weight", "loss_weight"), ("lookahead", "lookahead")):
        g.add_argument(f"--no-{flag}", dest=dest, action="store_false", default=S)
    e = p.add_argument_group("episode")
    e.add_argument("--needles", type=int, default=S, help="default 5")
    e.add_argument("--distractors", type=int, default=S, help="default 1000")
    e.add_argument("--codebook", type=int, default=S, help="default 256")
    e.add_argument("--gate-mode", choices=("all_one", "random"), default=S)
    r = p.add_argument_group("run")
    r.add_argument("--seed", type=int, default=S, help="root seed, default 0")
    r.add_argument("--seeds", type=int, default=S, help="number of seeds in the grid, default 10")
    r.add_argument("--iters", type=int, default=S, help="passes n, default 4")
    r.add_argument("--chunking", choices=("per_episode", "fixed_C"), default=S)
    r.add_argument("--scales", default=S, help="comma-separated distractor multipliers, default 1")
    r.add_argument("--out", default=S, help="output directory or file")
    r.add_argument("--workers", type=int, default=S, help="worker processes, default 1")


def resolve(args):
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in FIELD_TYPES:
        if name in vars(args):
            values[name] = getattr(args, name)
    rc = RunConfig(**values)
    rc.validate()
    return rc


# ---------------------------------------------------------------------------
# bench / ablate


def _bench_job(job):
    rc, seed_idx, scale = job
    cfg = rc.memory_config()
    ep = gen_episode(rc.episode_spec(int_seed(rc.seed, "episode", seed_idx, scale), scale))
    state = init(cfg, int_seed(rc.seed, "init", seed_idx), track_ledger=False)
    rep = run_niter(state, ep, rc.iters, rc.chunking)
    usage = usage_stats(rep.reports, window=1)
    return {
        "seed_index": seed_idx,
        "scale": scale,
        "n_distractors": ep.spec.n_distractors,
        "per_iter_accuracy": rep.per_iter_accuracy,
        "usage_fraction": usage.usage_fraction,
        "marginal_entropy": usage.marginal_entropy,
        "subkey_collisions": rep.subkey_collisions,
        "mse_sum": [r.mse_sum for r in rep.reports],
    }


def run_bench(rc):
    jobs = [(rc, s, scale) for scale in rc.scale_list() for s in range(rc.seeds)]
    if rc.workers > 1:
        with ProcessPoolExecutor(rc.workers) as ex:
            rows = list(ex.map(_bench_job, jobs))
    else:
        rows = [_bench_job(j) for j in jobs]
    return rows


def summarize(rows, iters):
    out = []
    for nd in sorted({r["n_distractors"] for r in rows}):
        group = [r for r in rows if r["n_distractors"] == nd]
        acc = np.array([r["per_iter_accuracy"] for r in group])
        for it in range(iters):
            out.append({
                "n_distractors": nd,
                "iter": it + 1,
                "mean_accuracy": f"{acc[:, it].mean():.6f}",
                "n_seeds": len(group),
                "mean_usage_fraction": f"{np.mean([r['usage_fraction'] for r in group]):.6f}",
            })
    return out


def _echo(rc):
    return {k: v for k, v in vars(rc).items() if k not in ("out", "workers")}


def cmd_bench(rc):
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_bench(rc)
    echo = _echo(rc)
    write_jsonl(out / "results.jsonl", [dict(r, config=echo) for r in rows])
    summary = summarize(rows, rc.iters)
    write_csv(out / "summary.csv", summary, ["n_distractors", "iter", "mean_accuracy", "n_seeds", "mean_usage_fraction"])
    for s in summary:
        print(f"distractors={s['n_distractors']:>6} iter={s['iter']} acc={s['mean_accuracy']} usage={s['mean_usage_fraction']}")
    return EXIT_OK


ABLATIONS = [
    ("baseline", {}),
    ("w/ 1 head x Top-32", {"heads": 1, "top_k": 32}),
    ("w/ 4 heads x Top-8", {"heads": 4, "top_k": 8}),
    ("w/o value norm", {"value_norm": False}),
    ("w/o addr loss", {"addr_loss": False}),
    ("w/o gating", {"gating": False}),
    ("w/o loss weight", {"loss_weight": False}),
    ("w/o lookahead", {"lookahead": False}),
]


def cmd_ablate(rc):
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    table, all_rows = [], []
    for name, changes in ABLATIONS:
        vrc = RunConfig(**{**vars(rc), **changes})
        vrc.validate()
        rows = run_bench(vrc)
        acc = np.array([r["per_iter_accuracy"] for r in rows])
        row = {"variant": name, "seeds": rc.seeds}
        for it in range(rc.iters):
            row[f"acc_iter{it + 1}"] = f"{acc[:, it].mean():.6f}"
        row["usage_fraction"] = f"{np.mean([r['usage_fraction'] for r in rows]):.6f}"
        table.append(row)
        all_rows.extend(dict(r, variant=name, config=_echo(vrc)) for r in rows)
    cols = ["variant", "seeds"] + [f"acc_iter{i + 1}" for i in range(rc.iters)] + ["usage_fraction"]
    write_csv(out / "ablation.csv", table, cols)
    write_jsonl(out / "ablation.jsonl", all_rows)
    print("  ".join(f"{c:>20}" if i == 0 else f"{c:>11}" for i, c in enumerate(cols)))
    for row in table:
        print("  ".join(f"{str(row[c]):>20}" if i == 0 else f"{str(row[c]):>11}" for i, c in enumerate(cols)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify / inspect / reset


def cmd_verify(args):
    from .checks import CHECKS

    names = list(CHECKS) if not args.checks else [c.strip() for c in args.checks.split(",") if c.strip()]
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ArgumentError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    ok = True
    for name in names:
        kwargs = {"seed": args.seed}
        if name == "gradient" and args.inject_fault:
            kwargs["fault"] = args.inject_fault
        res = CHECKS[name](**kwargs)
        print(res.line())
        ok = ok and res.passed
    return EXIT_OK if ok else EXIT_FAIL


def read_probes(path, query_dim):
    probes = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise StorageError(f"cannot read probes {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            q = np.asarray(obj["query"], dtype=float)
            if q.shape != (query_dim,):
                raise ValueError(f"query has shape {q.shape}, expected ({query_dim},)")
            tag = obj.get("truth_tag")
        except (ValueError, KeyError, TypeError) as e:
            raise ArgumentError(f"{path}: malformed probe on line {lineno}: {e}") from None
        probes.append((lineno, q, tag))
    return probes


def cmd_inspect(args):
    state = load(args.snapshot)
    probes = read_probes(args.probes, state.config.query_dim)
    lines = []
    for lineno, q, tag in probes:
        trace = trace_retrieval(state, retrieve(state, q), tag, depth=args.depth)
        for e in trace.entries:
            lines.append(json.dumps(dict(e.to_dict(), probe_line=lineno), sort_keys=True))
    text = "".join(l + "\n" for l in lines)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as e:
            raise StorageError(f"cannot write {args.out}: {e}") from e
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_reset(rc, path):
    state = init(rc.memory_config(), int_seed(rc.seed, "init", 0))
    save(state, path)
    print(f"wrote fresh memory snapshot to {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fwpkm", description="Fast-weight product key memory tools")
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bench", help="needle-in-a-haystack benchmark over a seed grid")
    _add_common(b)
    a = sub.add_parser("ablate", help="benchmark the baseline and seven ablation variants")
    _add_common(a)
    v = sub.add_parser("verify", help="run oracle checks")
    v.add_argument("--checks", help="comma-separated subset of checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", choices=("grad-sign",), help=argparse.SUPPRESS)
    i = sub.add_parser("inspect", help="trace retrieved slots for probe queries")
    i.add_argument("snapshot")
    i.add_argument("probes", help="JSON lines with 'query' and optional 'truth_tag'")
    i.add_argument("--depth", type=int, default=1, help="write records shown per slot")
    i.add_argument("--out", help="write JSON lines here instead of stdout")
    r = sub.add_parser("reset", help="write a freshly initialized memory snapshot")
    r.add_argument("path")
    _add_common(r)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        rc = resolve(args)
        if args.command == "bench":
            return cmd_bench(rc)
        if args.command == "ablate":
            return cmd_ablate(rc)
        if args.command == "reset":
            return cmd_reset(rc, args.path)
    except StorageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ArgumentError, FwPKMError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
