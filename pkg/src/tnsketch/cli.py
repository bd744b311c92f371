"""Command-line front end. Every command prints one JSON RunReport to stdout.

Exit codes: 0 success, 2 invalid input (argparse usage errors exit 2 as well),
3 resource limit.
"""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import harness, rng
from .errors import InvalidArgumentError, InvalidStateError, ResourceLimitError
from .fpt_tucker import FptParams, evaluate_candidate, fpt_tucker
from .net_compile import GeneralNetwork, contract_to_tree, general_contract, plan_contraction
from .sketching import SketchParams, rows_sign_regression
from .tensor import SparseTensor, atomic_write_text, check_dense, read_tns, set_dense_cap, write_tns
from .tree_net import TreeNetwork, balanced_binary_tree, tree_contract, tree_error
from .tt import TensorTrain, tt_bicriteria, tt_error, tt_materialize

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE = 0, 2, 3


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _constants(text):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected c_cs,c_sign,c_sv, got {text!r}") from None
    if len(vals) != 3 or min(vals) <= 0:
        raise argparse.ArgumentTypeError("--constants needs three positive numbers c_cs,c_sign,c_sv")
    return vals


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"{path}: {e}") from None


def _params(args, q) -> SketchParams:
    c_cs, c_sign, c_sv = args.constants or (4.0, 4.0, 4.0)
    return SketchParams(eps=args.eps, delta=args.delta, q=q, k=args.rank, c_cs=c_cs, c_sign=c_sign, c_sv=c_sv)


def _neighbor_manifest(tensor_path):
    path = os.path.join(os.path.dirname(os.path.abspath(tensor_path)), "manifest.json")
    return _load_json(path) if os.path.exists(path) else None


def _oracles(A: SparseTensor, k: int) -> dict:
    try:
        check_dense(A.dims)
        dense = A.to_dense()
    except ResourceLimitError:
        return {}
    out = {}
    if A.ndim >= 2:
        out["tt_svd"] = float(np.linalg.norm(tt_materialize(harness.tt_svd_oracle(dense, k)) - dense))
    return out


def _report(command, args, seeds, best, runs, A, extra=None, phases=None):
    norm = A.norm()
    rep = {
        "command": command,
        "params": {k: v for k, v in vars(args).items() if k != "func"},
        "seeds": seeds,
        "error": best["error"],
        "relative_error": best["error"] / norm if norm > 0 else 0.0,
        "best_seed": best["seed"],
        "per_seed_errors": [r["error"] for r in runs],
        "tensor_norm": norm,
        "times": phases or {},
        "sketches": best["model"].info.get("sketches", []),
    }
    rep["times"]["sweep_seconds"] = [r["sweep_seconds"] for r in runs]
    rep["times"]["eval_seconds"] = [r["eval_seconds"] for r in runs]
    man = _neighbor_manifest(args.tensor)
    if man is not None:
        rep["witness_eta"] = man.get("eta")
    rep.update(extra or {})
    return rep


def _read(path):
    t0 = time.perf_counter()
    A = read_tns(path)
    return A, {"read_seconds": time.perf_counter() - t0}


# ------------------------------------------------------------------ commands


def cmd_generate(args):
    shape = None
    if args.tree:
        shape = TreeNetwork.from_shape_dict(_load_json(args.tree))
    elif args.net:
        shape = GeneralNetwork.from_shape_dict(_load_json(args.net))
    inst = harness.generate(args.kind, args.dims, args.rank, args.noise, args.seed, shape=shape)
    if args.out:
        inst.save(args.out)
    return {"command": "generate", "params": {k: v for k, v in vars(args).items() if k != "func"},
            "seeds": [args.seed], "witness_eta": inst.eta, "witness_error": inst.witness_error(),
            "tensor_norm": float(np.linalg.norm(inst.tensor)), "manifest": inst.manifest(), "out": args.out}


def _decompose(args, command, runner, q_of, save):
    A, phases = _read(args.tensor)
    params = _params(args, q_of(A))
    seeds = harness.seed_list(args.seed, args.seeds)
    best, runs = runner(A, params, seeds)
    extra = {"t": rows_sign_regression(params), "ranks": _ranks(best["model"]), "oracle_errors": _oracles(A, args.rank)}
    if args.out:
        save(best["model"], args.out)
    return _report(command, args, seeds, best, runs, A, extra, phases)


def _ranks(model):
    if isinstance(model, TensorTrain):
        return model.ranks
    return [[a, b, r] for (a, b), r in model.ranks().items()]


def cmd_decompose_tt(args):
    return _decompose(args, "decompose-tt", lambda A, p, s: harness.best_tt(A, args.rank, p, s, jobs=args.jobs),
                      lambda A: A.ndim, lambda m, out: m.save(out, {"kind": "tt"}))


def _tree_shape(args, dims):
    if args.tree:
        shape = TreeNetwork.from_shape_dict(_load_json(args.tree))
        if shape.dims != list(dims):
            raise InvalidArgumentError(f"tree dims {shape.dims} do not match tensor dims {list(dims)}")
        return shape
    return balanced_binary_tree(dims)


def cmd_decompose_tree(args):
    return _decompose(
        args, "decompose-tree",
        lambda A, p, s: harness.best_tree(A, _tree_shape(args, A.dims), args.rank, p, s, jobs=args.jobs),
        lambda A: A.ndim, lambda m, out: m.save(out, {"kind": "tree"}))


def _net(args):
    if not args.net:
        raise InvalidArgumentError("--net FILE is required")
    return GeneralNetwork.from_shape_dict(_load_json(args.net))


def cmd_compile_net(args):
    G = _net(args)
    t0 = time.perf_counter()
    plan = plan_contraction(G)
    t1 = time.perf_counter()
    if G.factors is None:
        G = G.random_factors(rng.generator(args.seed, "compile-net", "factors"))
    tree = contract_to_tree(G, plan)
    t2 = time.perf_counter()
    ref = general_contract(G)
    err = float(np.linalg.norm(tree_contract(tree) - ref))
    if args.out:
        tree.save(args.out, {"kind": "tree", "plan": plan.to_dict()})
    norm = float(np.linalg.norm(ref))
    return {"command": "compile-net", "params": {k: v for k, v in vars(args).items() if k != "func"},
            "seeds": [args.seed], "error": err, "relative_error": err / norm if norm > 0 else 0.0,
            "plan": plan.to_dict(), "max_degree": tree.max_degree(), "splits": tree.info.get("splits", []),
            "times": {"plan_seconds": t1 - t0, "compile_seconds": t2 - t1}}


def cmd_decompose_net(args):
    G = _net(args)
    A, phases = _read(args.tensor)
    params = _params(args, A.ndim)
    seeds = harness.seed_list(args.seed, args.seeds)
    best, runs = harness.best_net(A, G, args.rank, params, seeds, jobs=args.jobs)
    model = best["model"]
    extra = {"t": rows_sign_regression(params.with_(k=model.info["k_tree"])), "k_tree": model.info["k_tree"],
             "plan": model.info["plan"], "ranks": _ranks(model), "oracle_errors": _oracles(A, args.rank)}
    if args.out:
        model.save(args.out, {"kind": "tree"})
    return _report("decompose-net", args, seeds, best, runs, A, extra, phases)


def cmd_fpt_tucker(args):
    A, phases = _read(args.tensor)
    p = args.p if args.p is not None else A.ndim
    c_cs, c_sign, _ = args.constants or (4.0, 4.0, 4.0)
    fp = FptParams(p=p, q=A.ndim, k=args.rank, eps=args.eps, trials=args.trials, seed=args.seed,
                   mode=args.eval_mode, c_cs=c_cs, c_sign=c_sign)
    t0 = time.perf_counter()
    cand = fpt_tucker(A, fp)
    phases["solve_seconds"] = time.perf_counter() - t0
    try:
        exact = evaluate_candidate(cand.factors, A.to_dense(), "exact")
    except ResourceLimitError:
        exact = None
    total = A.norm() ** 2
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for m, U in enumerate(cand.factors):
            write_tns(os.path.join(args.out, f"factor_{m}.tns"), U)
        atomic_write_text(os.path.join(args.out, "manifest.json"),
                          json.dumps({"kind": "tucker", "p": p, "k": args.rank, "trials": list(cand.trials)}))
    return {"command": "fpt-tucker", "params": {k: v for k, v in vars(args).items() if k != "func"},
            "seeds": [args.seed], "cost": cand.cost, "exact_cost": exact,
            "relative_cost": (exact if exact is not None else cand.cost) / total if total > 0 else 0.0,
            "error": math.sqrt(exact if exact is not None else cand.cost),
            "chosen_trials": list(cand.trials), "times": phases, "sketches": cand.info["sketches"]}


def load_model(path):
    """A saved TT or tree directory, or a general network directory (net.json + factors)."""
    if os.path.exists(os.path.join(path, "net.json")):
        G = GeneralNetwork.from_shape_dict(_load_json(os.path.join(path, "net.json")))
        return G.with_factors({v: read_tns(os.path.join(path, f"factor_{v}.tns")).to_dense() for v in G.vertices})
    man = _load_json(os.path.join(path, "manifest.json"))
    if "vertices" in man:
        return TreeNetwork.load(path)
    if "q" in man:
        return TensorTrain.load(path)
    raise InvalidArgumentError(f"{path} holds no tensor-train, tree or network model")


def cmd_eval(args):
    A, phases = _read(args.tensor)
    model = load_model(args.model)
    t0 = time.perf_counter()
    if isinstance(model, TensorTrain):
        err = tt_error(model, A)
    elif isinstance(model, TreeNetwork):
        if model.factors is None:
            raise InvalidStateError("tree model has no factors")
        err = tree_error(model, A)
    else:
        err = float(np.linalg.norm(general_contract(model) - A.to_dense()))
    phases["eval_seconds"] = time.perf_counter() - t0
    norm = A.norm()
    return {"command": "eval", "params": {k: v for k, v in vars(args).items() if k != "func"}, "seeds": [],
            "error": err, "relative_error": err / norm if norm > 0 else 0.0, "times": phases}


def bench_tensor(q: int, n: int, nnz: int, seed: int) -> SparseTensor:
    gen = rng.generator(seed, "bench", q, n, nnz)
    coords = gen.integers(0, n, size=(nnz, q))
    return SparseTensor([n] * q, coords, gen.standard_normal(nnz))


def cmd_bench(args):
    """Sweep wall-time on random sparse tensors whose nnz doubles per row."""
    rows = []
    params = _params(args, args.q)
    for j in range(args.scale_nnz):
        nnz = args.nnz0 * 2**j
        n = max(args.n0, math.ceil(args.n0 * 2 ** (j / args.q)))
        A = bench_tensor(args.q, n, nnz, args.seed)
        times = []
        for r in range(args.reps):
            t0 = time.perf_counter()
            tt_bicriteria(A, args.rank, params, seed=rng.derive_seed(args.seed, "bench", j, r))
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "nnz": A.nnz, "requested_nnz": nnz, "sweep_seconds": times,
                     "median_seconds": float(np.median(times))})
    ratios = [b["median_seconds"] / a["median_seconds"] / (b["nnz"] / a["nnz"]) for a, b in zip(rows, rows[1:])]
    return {"command": "bench", "params": {k: v for k, v in vars(args).items() if k != "func"},
            "seeds": [args.seed], "rows": rows, "time_per_nnz_ratios": ratios,
            "time_ratios": [b["median_seconds"] / a["median_seconds"] for a, b in zip(rows, rows[1:])]}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnsketch", description="Sketching-based tensor network decompositions.")
    parser.add_argument("--dense-cap", type=int, default=None, help="entry cap for dense materializations")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tensor=True):
        if tensor:
            p.add_argument("tensor", help="input tensor (.tns text format)")
        p.add_argument("--eps", type=float, default=0.5)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--rank", "-k", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--constants", type=_constants, default=None, help="c_cs,c_sign,c_sv")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--dense-cap", type=int, default=argparse.SUPPRESS)

    def restarts(p):
        p.add_argument("--seeds", type=int, default=1, help="best-of-B restarts")
        p.add_argument("--jobs", type=int, default=1, help="threads for restarts")

    g = sub.add_parser("generate", help="write a planted instance")
    g.add_argument("--kind", choices=harness.KINDS, required=True)
    g.add_argument("--dims", type=_ints, required=True)
    g.add_argument("--rank", "-k", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.0, help="noise norm relative to the (unit) signal norm")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tree", default=None)
    g.add_argument("--net", default=None)
    g.add_argument("--out", default=None)
    g.add_argument("--dense-cap", type=int, default=argparse.SUPPRESS)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("decompose-tt", help="tensor-train decomposition")
    common(p)
    restarts(p)
    p.set_defaults(func=cmd_decompose_tt)

    p = sub.add_parser("decompose-tree", help="tree tensor network decomposition")
    common(p)
    restarts(p)
    p.add_argument("--tree", default=None, help="tree shape JSON (default: balanced binary)")
    p.set_defaults(func=cmd_decompose_tree)

    p = sub.add_parser("compile-net", help="compile a general network into a tree network")
    p.add_argument("--net", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--dense-cap", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_compile_net)

    p = sub.add_parser("decompose-net", help="decomposition against a general network")
    common(p)
    restarts(p)
    p.add_argument("--net", required=True)
    p.set_defaults(func=cmd_decompose_net)

    p = sub.add_parser("fpt-tucker", help="exact-rank Tucker by guess and verify")
    common(p)
    p.add_argument("--p", type=int, default=None, help="number of factored modes (default: all)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--eval-mode", choices=("exact", "pcp"), default="exact")
    p.set_defaults(func=cmd_fpt_tucker)

    p = sub.add_parser("eval", help="error of a saved model against a tensor")
    p.add_argument("tensor")
    p.add_argument("--model", required=True)
    p.add_argument("--dense-cap", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep time as nnz doubles")
    common(p, tensor=False)
    p.add_argument("--scale-nnz", type=int, required=True, help="number of rows (nnz doubles per row)")
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--n0", type=int, default=16)
    p.add_argument("--nnz0", type=int, default=4000)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.dense_cap is not None:
            set_dense_cap(args.dense_cap)
        report = args.func(args)
    except ResourceLimitError as e:
        print(f"tnsketch: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (InvalidArgumentError, InvalidStateError, FileNotFoundError, IsADirectoryError) as e:
        print(f"tnsketch: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        set_dense_cap(None)
    print(json.dumps(report, indent=2, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
