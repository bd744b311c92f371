"""Planted instances, the TT-SVD oracle and best-of-seeds drivers."""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import InvalidArgumentError
from .net_compile import GeneralNetwork, approx_by_tree, general_contract
from .sketching import SketchParams
from .tensor import as_dense, atomic_write_text, check_dense, write_tns
from .tree_net import TreeNetwork, balanced_binary_tree, tree_bicriteria, tree_contract, tree_error
from .tt import TensorTrain, tt_bicriteria, tt_error, tt_materialize

KINDS = ("tt", "tree", "ring", "tucker", "random")


@dataclass
class Instance:
    kind: str
    dims: list
    rank: int
    eta: float
    seed: int
    tensor: np.ndarray
    signal: np.ndarray
    planted: object = None
    meta: dict = field(default_factory=dict)

    def witness_error(self) -> float:
        return float(np.linalg.norm(self.tensor - self.signal))

    def manifest(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "rank": self.rank, "eta": self.eta,
                "seed": self.seed, "signal_norm": float(np.linalg.norm(self.signal)), **self.meta}

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_tns(os.path.join(out_dir, "tensor.tns"), self.tensor)
        planted_dir = os.path.join(out_dir, "planted")
        if isinstance(self.planted, (TensorTrain, TreeNetwork)):
            self.planted.save(planted_dir, {"kind": self.kind})
        elif isinstance(self.planted, GeneralNetwork):
            os.makedirs(planted_dir, exist_ok=True)
            atomic_write_text(os.path.join(planted_dir, "net.json"), self.planted.to_json())
            for v in self.planted.vertices:
                write_tns(os.path.join(planted_dir, f"factor_{v}.tns"), self.planted.factors[v])
        elif isinstance(self.planted, dict):
            os.makedirs(planted_dir, exist_ok=True)
            write_tns(os.path.join(planted_dir, "core.tns"), self.planted["core"])
            for i, U in enumerate(self.planted["factors"]):
                write_tns(os.path.join(planted_dir, f"factor_{i}.tns"), U)
        atomic_write_text(os.path.join(out_dir, "manifest.json"), json.dumps(self.manifest(), indent=2))


def ring_network(dims, rank: int) -> GeneralNetwork:
    q = len(dims)
    edges = [(i, (i + 1) % q, rank) for i in range(q)]
    return GeneralNetwork(range(q), edges, {i: int(n) for i, n in enumerate(dims)})


def _random_tree_factors(shape: TreeNetwork, rank: int, gen) -> TreeNetwork:
    factors = {}
    for v in shape.vertices:
        sizes = [shape.open_dims[v] if lab[0] == "o" else rank for lab in shape.leg_labels(v)]
        factors[v] = gen.standard_normal(sizes)
    return TreeNetwork(shape.parent, shape.open_dims, shape.modes, factors)


def _scale_first(planted, scale):
    if isinstance(planted, TensorTrain):
        planted.cores[0] = planted.cores[0] * scale
    elif isinstance(planted, (TreeNetwork, GeneralNetwork)):
        v = min(planted.factors)
        planted.factors[v] = planted.factors[v] * scale
    elif isinstance(planted, dict):
        planted["core"] = planted["core"] * scale


def generate(kind: str, dims, rank: int = 1, eta: float = 0.0, seed: int = 0, relative: bool = True,
             shape=None) -> Instance:
    """Planted structure (scaled to unit Frobenius norm) plus Gaussian noise of norm exactly eta.

    ``relative`` measures eta in units of the signal norm, which is 1 after
    scaling, so both readings agree; it is kept for explicitness in manifests.
    """
    dims = [int(n) for n in dims]
    if kind not in KINDS:
        raise InvalidArgumentError(f"kind must be one of {KINDS}")
    if not dims or any(n < 1 for n in dims) or rank < 1 or eta < 0:
        raise InvalidArgumentError("need positive dims, rank >= 1 and eta >= 0")
    check_dense(dims, "generated tensor")
    gen = rng.generator(seed, "generate", kind)
    q = len(dims)
    planted = None
    meta = {}
    if kind == "tt":
        if q < 2:
            raise InvalidArgumentError("tt instances need q >= 2")
        ranks = [1] + [min(rank, math.prod(dims[:i]), math.prod(dims[i:])) for i in range(1, q)] + [1]
        planted = TensorTrain.from_cores3([gen.standard_normal((ranks[i], dims[i], ranks[i + 1])) for i in range(q)])
        signal = tt_materialize(planted)
    elif kind == "tree":
        shape = shape or balanced_binary_tree(dims)
        if shape.dims != dims:
            raise InvalidArgumentError("tree shape does not match dims")
        planted = _random_tree_factors(shape, rank, gen)
        signal = tree_contract(planted)
        meta["tree"] = shape.shape_dict()
    elif kind == "ring":
        G = shape or ring_network(dims, rank)
        planted = G.random_factors(gen)
        signal = general_contract(planted)
        meta["net"] = G.shape_dict()
    elif kind == "tucker":
        planted = {"core": gen.standard_normal([min(rank, n) for n in dims]),
                   "factors": [gen.standard_normal((n, min(rank, n))) for n in dims]}
        signal = planted["core"]
        for m, U in enumerate(planted["factors"]):
            signal = np.moveaxis(np.tensordot(U, signal, axes=(1, m)), 0, m)
    else:
        signal = gen.standard_normal(dims)
    norm = float(np.linalg.norm(signal))
    if norm > 0:
        signal = signal / norm
        if planted is not None:
            _scale_first(planted, 1.0 / norm)
    noise = gen.standard_normal(dims)
    noise *= eta / np.linalg.norm(noise) if eta > 0 else 0.0
    meta["relative_noise"] = bool(relative)
    return Instance(kind, dims, rank, float(eta), seed, signal + noise, signal, planted, meta)


def tt_svd_oracle(A, k: int) -> TensorTrain:
    """Sequential truncated SVDs from the left, ranks at most k."""
    A = as_dense(A)
    check_dense(A.shape)
    dims = A.shape
    q = len(dims)
    if q < 2:
        raise InvalidArgumentError("TT-SVD needs q >= 2")
    cores = []
    r = 1
    C = A.reshape(dims[0], -1)
    for i in range(q - 1):
        C = C.reshape(r * dims[i], -1)
        u, s, vt = np.linalg.svd(C, full_matrices=False)
        rr = max(1, min(k, int(np.sum(s > 0))))
        cores.append(u[:, :rr].reshape(r, dims[i], rr))
        C = s[:rr, None] * vt[:rr]
        r = rr
    cores.append(C.reshape(r, dims[-1], 1))
    return TensorTrain.from_cores3(cores)


# ------------------------------------------------------------ best-of drivers


def _restarts(run, error, seeds, jobs=1):
    """Run every seed (threads when jobs > 1; results keep seed order) and keep the best."""

    def one(s):
        t0 = time.perf_counter()
        model = run(s)
        t1 = time.perf_counter()
        err = error(model)
        return {"seed": int(s), "error": err, "sweep_seconds": t1 - t0,
                "eval_seconds": time.perf_counter() - t1, "model": model}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(one, seeds))
    else:
        runs = [one(s) for s in seeds]
    best = min(runs, key=lambda r: (r["error"], r["seed"]))
    return best, runs


def seed_list(root: int, count: int) -> list[int]:
    return [rng.derive_seed(root, "restart", i) for i in range(count)]


def best_tt(A, k, params: SketchParams, seeds, jobs=1):
    return _restarts(lambda s: tt_bicriteria(A, k, params, seed=s), lambda m: tt_error(m, A), seeds, jobs)


def best_tree(A, shape, k, params: SketchParams, seeds, jobs=1):
    return _restarts(lambda s: tree_bicriteria(A, shape, k, params, seed=s), lambda m: tree_error(m, A), seeds, jobs)


def best_net(A, G, k, params: SketchParams, seeds, jobs=1):
    return _restarts(lambda s: approx_by_tree(A, G, k, params, seed=s), lambda m: tree_error(m, A), seeds, jobs)
