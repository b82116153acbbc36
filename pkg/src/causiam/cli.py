"""Command-line driver: synth, pretrain, adapt, eval and scm.

Exit codes: 0 success, 1 verification failed, 2 usage, 3 I/O, 4 numeric.
"""

import argparse
import dataclasses
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np

from .adapt import ABLATIONS, TOKEN_MODES, AdaptConfig, StepReport, init_state, run_stream
from .metrics import aggregate, render_table, rows_to_csv
from .network import NumericError, init_backbone, load_checkpoint, pretrain, save_checkpoint, split_checkpoint
from .synth import DomainStream, Pair, PsfKind, gen_domain_stream
from .tensor_image import ImageFormatError, load_image, save_image

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
MIN_SIZE = 32

log = logging.getLogger("causiam")


class UsageError(Exception):
    pass


# -- run configuration -----------------------------------------------------

_PATH_KEYS = {"checkpoint": str, "data": str, "report": str, "save_images": str,
              "ablate": str, "seed": int, "rounds": int, "threads": int}


def _config_types():
    types = {f.name: f.type for f in dataclasses.fields(AdaptConfig)}
    types = {k: {"float": float, "int": int, "bool": bool}.get(t, t) if isinstance(t, str) else t
             for k, t in types.items()}
    types.update(_PATH_KEYS)
    return types


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def read_run_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    types = _config_types()
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in types:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        conv = _parse_bool if types[key] is bool else types[key]
        try:
            out[key] = conv(val)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def _threads(args):
    env = os.environ.get("CAUSIAM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"CAUSIAM_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


# -- dataset layout --------------------------------------------------------

def _parse_domains(text):
    out = []
    for item in text.split(","):
        name, colon, count = item.strip().partition(":")
        if not colon or not name:
            raise UsageError(f"domain entry {item!r} must look like name:count")
        if name.startswith("disc"):
            kind = PsfKind.DISC
        elif name.startswith("gauss"):
            kind = PsfKind.GAUSSIAN
        else:
            raise UsageError(f"domain name {name!r} must start with 'disc' or 'gauss' to pick a lens model")
        try:
            n = int(count)
        except ValueError:
            raise UsageError(f"bad image count in {item!r}") from None
        if n < 1:
            raise UsageError(f"domain {name} needs at least one image")
        out.append((name, kind, n))
    if len({n for n, _, _ in out}) != len(out):
        raise UsageError("duplicate domain names")
    return out


def _parse_range(s):
    try:
        lo, hi = (float(v) for v in s.split(","))
    except ValueError:
        raise UsageError(f"radius range must be 'lo,hi', got {s!r}") from None
    if lo < 0 or hi < lo:
        raise UsageError(f"invalid radius range {s!r}")
    return lo, hi


def domain_seed(seed, name):
    return (seed + zlib.crc32(name.encode())) % (2 ** 32)


def write_domain(stream, root):
    d = Path(root) / stream.domain_id
    (d / "blur").mkdir(parents=True, exist_ok=True)
    (d / "sharp").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, p in enumerate(stream.pairs):
        save_image(p.blurry, d / "blur" / f"{i:04d}.png")
        save_image(p.sharp, d / "sharp" / f"{i:04d}.png")
        radii = ",".join(f"{r:.2f}" for r in stream.radii[i])
        lines.append(f"{i:04d} {stream.psf_kind.value} {radii}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    return d


def read_domain(path, need_sharp=False):
    d = Path(path)
    blur = sorted((d / "blur").glob("*.png"))
    if not blur:
        raise FileNotFoundError(f"{d}: no images under blur/")
    pairs = []
    for b in blur:
        s = d / "sharp" / b.name
        if need_sharp and not s.exists():
            raise FileNotFoundError(f"{s}: missing ground truth")
        pairs.append(Pair(load_image(b), load_image(s) if s.exists() else None))
    return DomainStream(d.name, pairs)


# -- commands --------------------------------------------------------------

def cmd_synth(args):
    if args.size < MIN_SIZE:
        raise UsageError(f"--size must be at least {MIN_SIZE} pixels, got {args.size}")
    rng = _parse_range(args.radius)
    domains = _parse_domains(args.domains)
    total = 0
    for name, kind, n in domains:
        stream = gen_domain_stream(name, n, domain_seed(args.seed, name), kind, rng, args.size, args.size)
        d = write_domain(stream, args.out)
        total += n
        print(f"{name}: {n} pairs, {kind.value} PSF, radius {rng[0]:g}-{rng[1]:g} -> {d}")
    print(f"total: {total} pairs in {len(domains)} domain(s)")
    return EXIT_OK


def cmd_pretrain(args):
    streams = [read_domain(p, need_sharp=True) for p in args.data.split(",")]
    lines = []

    def on_epoch(epoch, mean):
        lines.append(f"{epoch}\t{mean:.8f}")
        print(f"epoch {epoch}: mean L1 {mean:.6f}")

    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if args.epochs == 0:
        params = init_backbone(args.channels, args.seed)
    else:
        params = pretrain(streams, args.epochs, args.seed, args.lr, args.channels, on_epoch)
    save_checkpoint(args.out, params)
    log_path = args.log or f"{args.out}.log"
    Path(log_path).write_text("epoch\tmean_l1\n" + "".join(l + "\n" for l in lines))
    print(f"checkpoint -> {args.out}; log -> {log_path}")
    return EXIT_OK


_ADAPT_FLAGS = ("alpha", "eta", "lam", "lr", "K", "N", "heads", "head_dim", "ca_seed", "tokens")


def _adapt_settings(args):
    conf = read_run_config(args.config) if args.config else {}
    for k in _ADAPT_FLAGS + ("rounds", "ablate", "save_images", "report", "threads", "seed"):
        v = getattr(args, k, None)
        if v is not None:
            conf[k] = v
    if args.ckpt:
        conf["checkpoint"] = args.ckpt
    if args.domains:
        conf["data"] = args.domains
    for req in ("checkpoint", "data"):
        if req not in conf:
            raise UsageError(f"missing {req} (flag or config key)")
    kw = {k: conf[k] for k in (f.name for f in dataclasses.fields(AdaptConfig)) if k in conf}
    if "seed" in conf and "ca_seed" not in kw:
        kw["ca_seed"] = conf["seed"]
    try:
        cfg = AdaptConfig(**kw)
        ablate = conf.get("ablate")
        if ablate:
            cfg = cfg.with_ablation(ablate)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if conf.get("rounds", 1) < 1:
        raise UsageError("rounds must be >= 1")
    return cfg, conf


def cmd_adapt(args):
    cfg, conf = _adapt_settings(args)
    threads = _threads(argparse.Namespace(threads=conf.get("threads", 1)))
    backbone, ca = split_checkpoint(load_checkpoint(conf["checkpoint"]), cfg.alpha, cfg.heads, cfg.head_dim)
    streams = [read_domain(p) for p in conf["data"].split(",")]
    state = init_state(backbone, cfg, ca if cfg.use_ca else None)
    report_fh = open(conf["report"], "w") if conf.get("report") else None
    img_root = Path(conf["save_images"]) if conf.get("save_images") else None

    def on_step(rep, restored):
        if report_fh is not None:
            report_fh.write(rep.to_json() + "\n")
        if img_root is not None:
            d = img_root / f"round{rep.round}" / rep.domain_id
            d.mkdir(parents=True, exist_ok=True)
            save_image(restored, d / f"{rep.sample_index:04d}.png")

    pool = ThreadPoolExecutor(threads) if threads > 1 else nullcontext()
    try:
        with pool as ex:
            reports = run_stream(state, cfg, streams, conf.get("rounds", 1), True, on_step, ex)
    finally:
        if report_fh is not None:
            report_fh.close()
    scored = [r for r in reports if r.psnr_adapted is not None]
    if scored:
        rows, overall = aggregate(scored)
        print(render_table(rows, overall), end="")
    print(f"steps: {len(reports)}  numeric errors: {len(state.numeric_errors)}")
    return EXIT_OK


def load_reports(path):
    text = Path(path).read_text()
    reports = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            reports.append(StepReport.from_json(line))
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{path}:{lineno}: malformed report line ({exc})") from None
    if not reports:
        raise UsageError(f"{path}: no report lines")
    return reports


def cmd_eval(args):
    reports = load_reports(args.report)
    scored = [r for r in reports if r.psnr_adapted is not None]
    if not scored:
        raise UsageError(f"{args.report}: reports carry no metrics (ground truth was unavailable)")
    rows, overall = aggregate(scored)
    csv_text = rows_to_csv(rows + [overall])
    print(render_table(rows, overall))
    print(csv_text, end="")
    if args.csv:
        Path(args.csv).write_text(csv_text)
    return EXIT_OK


def _graph_path(name):
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("causiam") / "fixtures" / (name if name.endswith(".scm") else name + ".scm")
    if bundled.is_file():
        return bundled
    raise FileNotFoundError(f"{name}: no such graph file or bundled fixture")


def cmd_scm(args):
    from .scm import DslError, closed_form, closed_form_error, parse_scm, random_scm, verify_derivation

    try:
        graph, _ = parse_scm(_graph_path(args.graph).read_text())
    except DslError as exc:
        raise UsageError(f"{args.graph}: {exc}") from None
    if args.action == "identify":
        try:
            res = closed_form(graph, args.x, args.y)
        except (KeyError, ValueError) as exc:
            raise UsageError(str(exc).strip("'\"")) from None
        print(res.render())
        if args.trace:
            for t in res.trace:
                mark = "yes" if t.satisfied else "no"
                print(f"  step {t.step}: {t.condition}: {mark}" + (f"  ({t.detail})" if t.detail else ""))
        if args.verify and res.ok:
            worst = max(closed_form_error(random_scm(graph, np.random.default_rng(seed)), res.expr, args.x, args.y)
                        for seed in range(args.verify))
            print(f"max |closed form - interventional| over {args.verify} seeds: {worst:.3e}")
            return EXIT_OK if worst <= 1e-10 else EXIT_FAIL
        return EXIT_OK
    # check
    names, worst, fails = [], {}, {}
    for seed in range(args.seeds):
        try:
            rep = verify_derivation(random_scm(graph, np.random.default_rng(seed)))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for c in rep.checks:
            if c.name not in worst:
                names.append(c.name)
                worst[c.name], fails[c.name] = 0.0, 0
            worst[c.name] = max(worst[c.name], c.max_err)
            fails[c.name] += not c.passed
    for n in names:
        status = "PASS" if fails[n] == 0 else f"FAIL ({fails[n]}/{args.seeds} seeds)"
        print(f"{status:<22} max err {worst[n]:.2e}  {n}")
    return EXIT_OK if not any(fails.values()) else EXIT_FAIL


# -- entry point -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="causiam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic defocus pairs")
    s.add_argument("--domains", required=True, help="e.g. discA:200,gaussB:100")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--radius", default="1,4", help="blur radius range lo,hi in pixels")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="supervised training on source pairs")
    s.add_argument("--data", required=True, help="domain directory (comma-separate several)")
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("adapt", help="continual test-time adaptation over domain streams")
    s.add_argument("--config")
    s.add_argument("--ckpt")
    s.add_argument("--domains", help="ordered, comma-separated domain directories")
    s.add_argument("--rounds", type=int)
    s.add_argument("--report")
    s.add_argument("--save-images", dest="save_images")
    s.add_argument("--ablate", choices=ABLATIONS)
    s.add_argument("--alpha", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--lam", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--K", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--head-dim", dest="head_dim", type=int)
    s.add_argument("--ca-seed", dest="ca_seed", type=int)
    s.add_argument("--tokens", choices=TOKEN_MODES, help="semantic tokens fed to CA (default patches)")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("eval", help="aggregate a JSON-lines report")
    s.add_argument("--report", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("scm", help="causal identifiability tools")
    ssub = s.add_subparsers(dest="action", required=True)
    i = ssub.add_parser("identify", help="closed form of P(y|do(x)) or FAIL")
    i.add_argument("--graph", required=True, help="DSL file or bundled name (fig3a, fig3b, chain)")
    i.add_argument("--y", default="Y")
    i.add_argument("--x", default="X")
    i.add_argument("--trace", action="store_true")
    i.add_argument("--verify", type=int, default=0, metavar="SEEDS",
                   help="check the result against the interventional oracle on random CPTs")
    c = ssub.add_parser("check", help="certify the do-calculus derivation on random CPTs")
    c.add_argument("--graph", required=True)
    c.add_argument("--seeds", type=int, default=50)
    s.set_defaults(func=cmd_scm)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ImageFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
