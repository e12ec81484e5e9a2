"""Command-line front end.

    lorank gen       build a seeded generator file
    lorank discover  attribute basis of an image region
    lorank edit      apply an attribute edit and write PGM images
    lorank verify    run the acceptance experiments

Exit codes: 0 success, 1 assertion or solver failure, 2 usage error.
Output goes to ``--out``, else ``$LORANK_OUT``, else ``./lorank-out``.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import genzoo, harness, pgm
from .errors import DivergenceError, FormatError, LorankError, NumericalError, VanishingDirectionError
from .numkernel import format_real
from .rpca import PcpConfig
from .subspace import (
    RANK_TOL,
    RELAX_PRESETS,
    EditRequest,
    ProjectionSpec,
    RegionMask,
    dumps_basis,
    edit,
    loads_basis,
    null_project,
    region_basis,
)

RECT_HELP = (
    "rectangle x0,y0,x1,y1 on the image grid, inclusive-exclusive and row-major: "
    "on a 4x4 grid 1,0,3,2 selects indices 1 2 5 6"
)


class UsageError(Exception):
    pass


class Failure(Exception):
    pass


# -- config ------------------------------------------------------------------


def read_config(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError("cannot read config %s: %s" % (path, exc.strerror))
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError("%s:%d: expected 'key = value'" % (path, n))
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def merged(args, known, defaults=None):
    """Flags override the config file, which overrides ``defaults``.

    ``known`` maps each accepted key to a converter for config-file strings.
    """
    settings = dict(defaults or {})
    if args.config:
        for key, text in read_config(args.config).items():
            if key not in known:
                raise UsageError("unknown config key %r (accepted: %s)" % (key, ", ".join(sorted(known))))
            try:
                settings[key] = known[key](text)
            except ValueError:
                raise UsageError("config key %r: bad value %r" % (key, text))
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def out_dir(settings):
    path = settings.get("out") or os.environ.get("LORANK_OUT") or "lorank-out"
    os.makedirs(path, exist_ok=True)
    return path


def inside(root, name):
    """Join ``name`` under ``root``, refusing anything that escapes it."""
    path = os.path.normpath(os.path.join(root, name))
    if os.path.commonpath([os.path.abspath(root), os.path.abspath(path)]) != os.path.abspath(root):
        raise UsageError("output name %r leaves the output directory" % name)
    return path


def write_text(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _flag(text):
    return text.lower() in ("1", "true", "yes", "on")


def _ints(text):
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError:
        raise UsageError("expected comma-separated integers, got %r" % text)


def parse_rect(text, grid):
    vals = _ints(text)
    if len(vals) != 4:
        raise UsageError("rectangle needs four integers x0,y0,x1,y1")
    try:
        return RegionMask.from_rect(grid, *vals)
    except ValueError as exc:
        raise UsageError(str(exc))


def load_generator(path):
    try:
        return genzoo.load(path)
    except OSError as exc:
        raise UsageError("cannot read generator %s: %s" % (path, exc.strerror))
    except FormatError as exc:
        raise Failure("%s: %s" % (path, exc))


# Images with more pixels than this are written as binary P5.
BINARY_PIXELS = 4096


def encode_image(img, lo, hi):
    return pgm.encode(img, lo, hi, binary=img.size > BINARY_PIXELS)


def encode_heatmap(heat):
    heat = np.asarray(heat, dtype=float)
    return encode_image(heat, 0.0, float(heat.max()))


def grid_of(g):
    grid = int(round(math.sqrt(g.d_x)))
    return grid if grid * grid == g.d_x else None


def image_of(g, x):
    grid = grid_of(g)
    return x.reshape(grid, grid) if grid else x.reshape(1, -1)


# -- commands ----------------------------------------------------------------

GEN_KEYS = {
    "kind": str, "dz": int, "dx": int, "grid": int, "split": int, "coupling": float, "widths": str,
    "activation": str, "identity": _flag, "seed": int, "name": str, "out": str,
}


def cmd_gen(args):
    s = merged(args, GEN_KEYS, {"seed": 0, "grid": 16, "coupling": 0.0, "activation": "identity", "identity": False})
    kind = s.get("kind")
    if kind not in ("linear", "mlp", "blocky"):
        raise UsageError("--kind must be one of linear, mlp, blocky")
    if "dz" not in s:
        raise UsageError("--dz is required")
    dz, seed = s["dz"], s["seed"]
    try:
        if kind == "linear":
            if "dx" not in s:
                raise UsageError("--dx is required for linear generators")
            g = genzoo.make_linear(dz, s["dx"], seed=seed, identity=s["identity"])
        elif kind == "mlp":
            widths = _ints(s.get("widths", ""))
            if "dx" in s:
                widths = widths + [s["dx"]]
            if not widths:
                raise UsageError("--widths (hidden widths then output) or --dx is required for mlp generators")
            g = genzoo.make_mlp(dz, widths, seed=seed, output_activation=s["activation"])
        else:
            split = s.get("split", dz // 2)
            g = genzoo.make_blocky(dz, s["grid"], split, s["coupling"], seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    root = out_dir(s)
    path = inside(root, s.get("name") or "%s.gen" % kind)
    genzoo.save(g, path)
    print("wrote %s" % path)
    print("intrinsic_dim %d" % g.intrinsic_dim)
    for i, (rows, cols, act) in enumerate(g.shapes()):
        print("layer %d: %d x %d %s" % (i, rows, cols, act))
    return 0


DISCOVER_KEYS = {
    "generator": str, "seed": int, "rect": str, "indices": str, "lam": float, "lambda_n": float,
    "mu": float, "max_iter": int, "rel_tol": float, "rank_tol": float, "name": str, "out": str,
}


def pcp_from(s):
    if s.get("lam") is not None and s.get("lambda_n") is not None:
        raise UsageError("--lambda and --lambda-n are mutually exclusive")
    if s.get("lambda_n") is not None:
        if s["lambda_n"] <= 0:
            raise UsageError("--lambda-n must be positive")
        lam = 1.0 / s["lambda_n"]
    else:
        lam = s.get("lam", harness.GRAM_PCP["lam"])
    try:
        return PcpConfig(
            lam=lam,
            mu=s.get("mu", "auto"),
            rel_tol=s.get("rel_tol", 1e-7),
            max_iter=s.get("max_iter", harness.GRAM_PCP["max_iter"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def region_from(s, g):
    if s.get("rect") and s.get("indices"):
        raise UsageError("give either --rect or --indices, not both")
    if s.get("rect"):
        grid = grid_of(g)
        if grid is None:
            raise UsageError("--rect needs a square image output; use --indices")
        return parse_rect(s["rect"], grid)
    if s.get("indices"):
        try:
            return RegionMask(_ints(s["indices"])).check(g.d_x)
        except ValueError as exc:
            raise UsageError(str(exc))
    raise UsageError("a region is required: --rect or --indices")


def cmd_discover(args):
    s = merged(args, DISCOVER_KEYS, {"seed": 0})
    if not s.get("generator"):
        raise UsageError("--generator is required")
    g = load_generator(s["generator"])
    region = region_from(s, g)
    cfg = pcp_from(s)
    z = harness.latent(g, s["seed"], 0)
    rank_tol = s.get("rank_tol", RANK_TOL)
    if not 0 < rank_tol < 1:
        raise UsageError("--rank-tol must lie in (0, 1)")
    basis = region_basis(genzoo.jacobian(g, z), region, cfg, rank_tol)
    sol = basis.solution
    root = out_dir(s)
    path = inside(root, s.get("name") or "basis.txt")
    write_text(path, dumps_basis(basis))
    print("wrote %s" % path)
    print("rank %d" % basis.rank)
    print("top singular values %s" % " ".join(format_real(x) for x in basis.sigma[:5]))
    print("pcp iterations %d residual %s converged %s lambda %s" % (sol.iterations, format_real(sol.final_residual), "yes" if sol.converged else "no", format_real(sol.lam)))
    return 0


EDIT_KEYS = {
    "generator": str, "basis_a": str, "basis_b": str, "index": int, "alpha": float, "r_relax": str,
    "seed": int, "prefix": str, "out": str,
}


def load_basis(path):
    try:
        with open(path) as fh:
            return loads_basis(fh.read())
    except OSError as exc:
        raise UsageError("cannot read basis %s: %s" % (path, exc.strerror))
    except FormatError as exc:
        raise Failure("%s: %s" % (path, exc))


def cmd_edit(args):
    s = merged(args, EDIT_KEYS, {"seed": 0, "index": 0, "alpha": 1.0, "r_relax": "0", "prefix": ""})
    for key in ("generator", "basis_a"):
        if not s.get(key):
            raise UsageError("--%s is required" % key.replace("_", "-"))
    g = load_generator(s["generator"])
    basis_a = load_basis(s["basis_a"])
    if basis_a.v.shape[0] != g.d_z:
        raise UsageError("basis has %d latent rows, generator has d_z = %d" % (basis_a.v.shape[0], g.d_z))
    if basis_a.region is None:
        raise UsageError("basis %s records no region" % s["basis_a"])
    if not 0 <= s["index"] < basis_a.rank:
        raise UsageError("attribute index %d out of range; valid indices are 0..%d" % (s["index"], basis_a.rank - 1)
                         if basis_a.rank else "basis has rank 0; there are no attribute directions")
    relax = s["r_relax"]
    relax = RELAX_PRESETS[relax] if relax in RELAX_PRESETS else relax
    try:
        relax = int(relax)
    except ValueError:
        raise UsageError("--r-relax must be an integer or one of %s" % ", ".join(sorted(RELAX_PRESETS)))
    if relax < 0:
        raise UsageError("--r-relax must be nonnegative")
    direction = basis_a.v[:, s["index"]]
    if s.get("basis_b"):
        basis_b = load_basis(s["basis_b"])
        if basis_b.v.shape[0] != g.d_z:
            raise UsageError("basis B has %d latent rows, generator has d_z = %d" % (basis_b.v.shape[0], g.d_z))
        direction = null_project(direction, ProjectionSpec(basis_b, min(relax, basis_b.rank)))
    z = harness.latent(g, s["seed"], 0)
    before = genzoo.forward(g, z)
    after = edit(g, EditRequest(z, direction, s["alpha"]))
    region = basis_a.region.check(g.d_x)
    lo = float(min(before.min(), after.min()))
    hi = float(max(before.max(), after.max()))
    root = out_dir(s)
    heat = np.abs(after - before)
    names = []
    for stem, data in (
        ("before", encode_image(image_of(g, before), lo, hi)),
        ("after", encode_image(image_of(g, after), lo, hi)),
        ("heatmap", encode_heatmap(image_of(g, heat))),
    ):
        path = inside(root, s["prefix"] + stem + ".pgm")
        with open(path, "wb") as fh:
            fh.write(data)
        names.append(path)
    print("wrote %s" % " ".join(names))
    inside_mse = harness.region_mse(before, after, region)
    outside = harness.masked_mse(before, after, region) if len(region) < g.d_x else 0.0
    print("masked_mse inside_a %s outside_a %s" % (format_real(inside_mse), format_real(outside)))
    return 0


def verify_keys():
    keys = {k: (lambda t, k=k: harness.parse_value(k, t)) for k in harness.DEFAULT_CONFIG}
    keys.update({"only": str, "out": str})
    return keys


def ensure_fixture(path, text):
    """Write a fixture once; afterwards it must still match its construction."""
    if os.path.exists(path):
        with open(path) as fh:
            current = fh.read()
        try:
            genzoo.loads(current)
        except FormatError as exc:
            raise Failure("fixture %s is corrupt: %s" % (path, exc))
        if current != text:
            raise Failure("fixture %s does not match its seeded construction" % path)
    else:
        write_text(path, text)
    with open(path) as fh:
        return genzoo.loads(fh.read())


def cmd_verify(args):
    s = merged(args, verify_keys(), dict(harness.DEFAULT_CONFIG))
    root = out_dir(s)
    fixtures = os.path.join(root, "fixtures")
    reports_dir = os.path.join(root, "reports")
    images_dir = os.path.join(root, "images")
    for d in (fixtures, reports_dir, images_dir):
        os.makedirs(d, exist_ok=True)

    generators = {}
    for name, g in sorted(genzoo.default_zoo(s["seed"]).items()):
        generators[name] = ensure_fixture(os.path.join(fixtures, name + ".gen"), genzoo.dumps(g))

    config = {k: v for k, v in s.items() if k in harness.DEFAULT_CONFIG}
    suite = harness.Suite(generators, config)
    only = [t for t in str(s.get("only") or "").split(",") if t]
    try:
        names = suite.select(only)
    except KeyError as exc:
        raise UsageError(exc.args[0])

    index = {}
    failed = []
    for name in names:
        try:
            report, images = suite.run(name)
        except (DivergenceError, NumericalError, LorankError) as exc:
            print("FAIL %s: %s" % (name, exc))
            failed.append(name)
            index[name] = {"pass": False, "error": str(exc)}
            continue
        for stem, img in sorted(images.items()):
            rel = os.path.join("images", "%s-%s.pgm" % (name, stem))
            data = encode_heatmap(img) if stem.startswith("heatmap") else encode_image(img, *_shared_range(images))
            with open(os.path.join(root, rel), "wb") as fh:
                fh.write(data)
            report.artifacts.append(rel)
        rel = os.path.join("reports", name + ".json")
        write_text(os.path.join(root, rel), harness.dumps_report(report))
        ok = report.passed
        index[name] = {"pass": ok, "report": rel}
        if ok:
            print("PASS %s" % name)
        else:
            failed.append(name)
            print("FAIL %s: %s" % (name, "; ".join(report.failures())))
    write_text(os.path.join(root, "index.json"), harness.dumps_report({"experiments": index, "seed": s["seed"], "pass": not failed}))
    print("%d of %d experiments passed" % (len(names) - len(failed), len(names)))
    return 1 if failed else 0


def _shared_range(images):
    # Before/after images share one value range so unchanged pixels match.
    vals = [v for k, v in images.items() if not k.startswith("heatmap")]
    return float(min(v.min() for v in vals)), float(max(v.max() for v in vals))


# -- parser ------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--seed", type=int, help="seed (default 0)")
    common.add_argument("--out", help="output directory (default $LORANK_OUT or ./lorank-out)")

    p = argparse.ArgumentParser(prog="lorank", description="Low-rank latent subspaces of toy generators.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    g = sub.add_parser("gen", parents=[common], help="write a seeded generator file")
    g.add_argument("--kind", choices=["linear", "mlp", "blocky"])
    g.add_argument("--dz", type=int, help="latent dimension (required)")
    g.add_argument("--dx", type=int, help="output dimension (linear; last width for mlp)")
    g.add_argument("--widths", help="mlp layer widths, comma separated")
    g.add_argument("--activation", choices=["identity", "tanh"], help="mlp output activation")
    g.add_argument("--identity", action="store_const", const=True, help="linear: identity-initialized square weight")
    g.add_argument("--grid", type=int, help="blocky image side (default 16)")
    g.add_argument("--split", type=int, help="blocky latent split (default dz/2)")
    g.add_argument("--coupling", type=float, help="blocky cross-block coupling in [0, 1]")
    g.add_argument("--name", help="file name inside the output directory")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("discover", parents=[common], help="attribute basis of a region", description="Region: " + RECT_HELP)
    d.add_argument("--generator", help="generator file")
    d.add_argument("--rect", help=RECT_HELP)
    d.add_argument("--indices", help="comma-separated output indices")
    d.add_argument("--lambda", dest="lam", type=float, help="PCP sparsity weight (default %g)" % harness.GRAM_PCP["lam"])
    d.add_argument("--lambda-n", dest="lambda_n", type=float, help="use lambda = 1/n")
    d.add_argument("--mu", type=float, help="PCP penalty (default auto)")
    d.add_argument("--max-iter", dest="max_iter", type=int)
    d.add_argument("--rel-tol", dest="rel_tol", type=float)
    d.add_argument("--rank-tol", dest="rank_tol", type=float)
    d.add_argument("--name", help="basis file name inside the output directory")
    d.set_defaults(func=cmd_discover)

    e = sub.add_parser("edit", parents=[common], help="edit along an attribute and write images")
    e.add_argument("--generator")
    e.add_argument("--basis-a", dest="basis_a", help="basis file of the edited region")
    e.add_argument("--basis-b", dest="basis_b", help="basis file of the region to keep fixed")
    e.add_argument("--index", type=int, help="attribute index (default 0)")
    e.add_argument("--alpha", type=float, help="editing strength (default 1)")
    e.add_argument("--r-relax", dest="r_relax", help="relaxation count or preset: %s" % ", ".join("%s=%d" % kv for kv in sorted(RELAX_PRESETS.items())))
    e.add_argument("--prefix", help="prefix for the image file names")
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("verify", parents=[common], help="run the acceptance experiments")
    v.add_argument("--only", help="comma-separated experiment names or prefixes, e.g. rpca")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(2, "lorank %s: error: %s\n" % (args.command, exc))
    except VanishingDirectionError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except DivergenceError as exc:
        tail = " ".join(format_real(r) for r in exc.history[-5:])
        print("error: %s; last residuals: %s" % (exc, tail), file=sys.stderr)
        return 1
    except (Failure, LorankError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
