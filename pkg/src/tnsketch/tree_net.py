"""Tree tensor networks and the leaf-to-root sketched bicriteria decomposition."""

import json
import math
import os
from collections import deque

import numpy as np

from . import rng
from .errors import InvalidArgumentError, InvalidStateError
from .labeled import contract_labeled
from .linalg import col_basis, pinv
from .sketching import (SketchParams, apply_group, countsketch_or_identity, ledger_entry,
                        rows_left_countsketch, rows_sign_regression, rows_subtree_sketch,
                        sign_or_identity)
from .tensor import SparseTensor, as_dense, as_sparse, atomic_write_text, read_tns, write_tns


def edge_key(u: int, v: int) -> tuple:
    return ("e", min(u, v), max(u, v))


def open_key(mode: int) -> tuple:
    return ("o", mode)


class TreeNetwork:
    """Rooted tree; each vertex has at most one open mode and optionally a factor.

    Factor legs are ordered: edges to children (by child id), the edge to the
    parent, then the open mode.
    """

    def __init__(self, parent: dict, open_dims: dict, modes: dict | None = None,
                 factors: dict | None = None):
        self.parent = {int(v): (None if p is None else int(p)) for v, p in parent.items()}
        self.open_dims = {int(v): int(n) for v, n in open_dims.items()}
        verts = set(self.parent)
        if not verts:
            raise InvalidArgumentError("empty tree")
        roots = [v for v, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise InvalidArgumentError(f"tree needs exactly one root, found {len(roots)}")
        if any(p not in verts for p in self.parent.values() if p is not None):
            raise InvalidArgumentError("parent refers to an unknown vertex")
        if not set(self.open_dims) <= verts or any(n < 1 for n in self.open_dims.values()):
            raise InvalidArgumentError("open modes must belong to vertices and be positive")
        self.root = roots[0]
        self._children = {v: [] for v in verts}
        for v, p in self.parent.items():
            if p is not None:
                self._children[p].append(v)
        for c in self._children.values():
            c.sort()
        # connectivity (also rules out cycles since |E| = |V| - 1)
        seen, stack = {self.root}, [self.root]
        while stack:
            for c in self._children[stack.pop()]:
                seen.add(c)
                stack.append(c)
        if seen != verts:
            raise InvalidArgumentError("parent links do not form a tree")
        if modes is None:
            modes = {v: i for i, v in enumerate(sorted(self.open_dims))}
        self.modes = {int(v): int(m) for v, m in modes.items()}
        if set(self.modes) != set(self.open_dims) or sorted(self.modes.values()) != list(range(len(self.modes))):
            raise InvalidArgumentError("open modes must map one-to-one onto tensor modes 0..q-1")
        self.factors = None if factors is None else {int(v): np.asarray(f, dtype=np.float64) for v, f in factors.items()}
        if self.factors is not None:
            self._check_factors()

    # structure -------------------------------------------------------------

    @property
    def vertices(self) -> list[int]:
        return sorted(self.parent)

    @property
    def q(self) -> int:
        return len(self.modes)

    @property
    def dims(self) -> list[int]:
        inv = {m: v for v, m in self.modes.items()}
        return [self.open_dims[inv[m]] for m in range(self.q)]

    def children(self, v: int) -> list[int]:
        return list(self._children[v])

    def neighbors(self, v: int) -> list[int]:
        out = list(self._children[v])
        if self.parent[v] is not None:
            out.append(self.parent[v])
        return out

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def max_degree(self) -> int:
        return max(self.degree(v) for v in self.parent)

    def edges(self) -> list[tuple[int, int]]:
        return [(v, p) for v, p in sorted(self.parent.items()) if p is not None]

    def leg_labels(self, v: int) -> list:
        labs = [edge_key(v, c) for c in self._children[v]]
        if self.parent[v] is not None:
            labs.append(edge_key(v, self.parent[v]))
        if v in self.open_dims:
            labs.append(open_key(self.modes[v]))
        return labs

    def post_order(self) -> list[int]:
        out = []

        def visit(v):
            for c in self._children[v]:
                visit(c)
            out.append(v)

        visit(self.root)
        return out

    def subtree(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(self._children[u])
        return out

    def ranks(self) -> dict:
        """Bond dimension of each edge (child, parent), read from the factors."""
        if self.factors is None:
            raise InvalidStateError("network has no factors")
        out = {}
        for v, p in self.edges():
            out[(v, p)] = self.factors[v].shape[self.leg_labels(v).index(edge_key(v, p))]
        return out

    def _check_factors(self):
        if set(self.factors) != set(self.parent):
            raise InvalidStateError("every vertex needs a factor")
        for v in self.parent:
            f, labs = self.factors[v], self.leg_labels(v)
            if f.ndim != len(labs):
                raise InvalidArgumentError(f"factor of vertex {v} has {f.ndim} modes, expected {len(labs)}")
            if v in self.open_dims and f.shape[-1] != self.open_dims[v]:
                raise InvalidArgumentError(f"factor of vertex {v} has open size {f.shape[-1]}")
        for v, p in self.edges():
            a = self.factors[v].shape[self.leg_labels(v).index(edge_key(v, p))]
            b = self.factors[p].shape[self.leg_labels(p).index(edge_key(v, p))]
            if a != b:
                raise InvalidArgumentError(f"edge ({v},{p}) has sizes {a} and {b} on its two ends")

    def labeled(self) -> dict:
        if self.factors is None:
            raise InvalidStateError("network has no factors")
        return {v: (self.factors[v], self.leg_labels(v)) for v in self.parent}

    @classmethod
    def from_labeled(cls, parent: dict, open_dims: dict, modes: dict, labeled: dict) -> "TreeNetwork":
        """Build from factors whose legs carry ``edge_key``/``open_key`` labels in any order."""
        shape = cls(parent, open_dims, modes)
        factors = {}
        for v in shape.parent:
            arr, labs = labeled[v]
            want = shape.leg_labels(v)
            if sorted(map(repr, labs)) != sorted(map(repr, want)):
                raise InvalidArgumentError(f"vertex {v} legs {labs} do not match the tree {want}")
            factors[v] = np.transpose(arr, [labs.index(w) for w in want])
        return cls(parent, open_dims, modes, factors)

    def rerooted(self, root: int) -> "TreeNetwork":
        if root not in self.parent:
            raise InvalidArgumentError(f"unknown vertex {root}")
        parent = _bfs_parents(_adjacency(self), root)
        if self.factors is None:
            return TreeNetwork(parent, self.open_dims, self.modes)
        return TreeNetwork.from_labeled(parent, self.open_dims, self.modes, self.labeled())

    def shape_only(self) -> "TreeNetwork":
        return TreeNetwork(self.parent, self.open_dims, self.modes)

    # serialization ----------------------------------------------------------

    def shape_dict(self) -> dict:
        verts = []
        for v in self.vertices:
            d = {"id": v}
            if v in self.open_dims:
                d["open_mode_size"] = self.open_dims[v]
                d["mode"] = self.modes[v]
            if self.parent[v] is not None:
                d["parent"] = self.parent[v]
            verts.append(d)
        return {"vertices": verts}

    @classmethod
    def from_shape_dict(cls, d: dict) -> "TreeNetwork":
        try:
            verts = d["vertices"]
            parent = {int(x["id"]): x.get("parent") for x in verts}
            open_dims = {int(x["id"]): int(x["open_mode_size"]) for x in verts if x.get("open_mode_size")}
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgumentError(f"malformed tree shape: {e}") from None
        if len(parent) != len(verts):
            raise InvalidArgumentError("duplicate vertex ids in tree shape")
        modes = None
        if any("mode" in x for x in verts if x.get("open_mode_size")):
            modes = {int(x["id"]): int(x["mode"]) for x in verts if x.get("open_mode_size")}
        return cls(parent, open_dims, modes)

    def save(self, path, extra: dict | None = None) -> None:
        os.makedirs(path, exist_ok=True)
        manifest = self.shape_dict()
        if self.factors is not None:
            for v in self.vertices:
                write_tns(os.path.join(path, f"factor_{v}.tns"), self.factors[v])
            manifest["ranks"] = [[a, b, r] for (a, b), r in self.ranks().items()]
        manifest.update(extra or {})
        atomic_write_text(os.path.join(path, "manifest.json"), json.dumps(manifest, indent=2, default=str))

    @classmethod
    def load(cls, path) -> "TreeNetwork":
        with open(os.path.join(path, "manifest.json")) as f:
            shape = cls.from_shape_dict(json.load(f))
        factors = {}
        for v in shape.vertices:
            fp = os.path.join(path, f"factor_{v}.tns")
            if os.path.exists(fp):
                factors[v] = read_tns(fp).to_dense()
        if not factors:
            return shape
        return cls(shape.parent, shape.open_dims, shape.modes, factors)


def _adjacency(net: TreeNetwork) -> dict:
    return {v: net.neighbors(v) for v in net.parent}


def _bfs_parents(adj: dict, root: int) -> dict:
    parent, queue = {root: None}, deque([root])
    while queue:
        u = queue.popleft()
        for w in sorted(adj[u]):
            if w not in parent:
                parent[w] = u
                queue.append(w)
    if len(parent) != len(adj):
        raise InvalidArgumentError("graph is not connected")
    return parent


def centroid(adj: dict) -> int:
    """Vertex whose removal leaves the smallest largest component (ties: smallest id)."""
    verts = sorted(adj)
    n = len(verts)
    parent = _bfs_parents(adj, verts[0])
    order = list(parent)  # BFS order
    size = {v: 1 for v in verts}
    for v in reversed(order):
        if parent[v] is not None:
            size[parent[v]] += size[v]
    best, best_val = None, None
    for v in verts:
        comp = [size[c] for c in adj[v] if parent.get(c) == v]
        comp.append(n - size[v])
        val = max(comp)
        if best_val is None or val < best_val:
            best, best_val = v, val
    return best


def tree_contract(net: TreeNetwork, order=None) -> np.ndarray:
    """Contract all factors; ``order`` is an optional list of edges (u, v)."""
    if net.factors is None:
        raise InvalidStateError("network has no factors")
    bonds = None if order is None else [edge_key(u, v) for u, v in order]
    out_labels = [open_key(m) for m in range(net.q)]
    Z, _ = contract_labeled(net.labeled(), bonds, out_labels)
    return Z


def tree_error(net: TreeNetwork, A) -> float:
    return float(np.linalg.norm(tree_contract(net) - as_dense(A)))


# ------------------------------------------------------------ pre-contraction


def _precontract(adj: dict, open_dims: dict):
    """Drop open-less vertices of degree <= 2; returns the reduced adjacency and removal log."""
    adj = {v: set(ns) for v, ns in adj.items()}
    log = []
    changed = True
    while changed:
        changed = False
        for w in sorted(adj):
            if w in open_dims or len(adj) <= 2:
                continue
            ns = sorted(adj[w])
            if len(ns) == 1:
                u = ns[0]
                adj[u].discard(w)
                del adj[w]
                log.append(("leaf", w, u))
                changed = True
            elif len(ns) == 2:
                a, b = ns
                adj[a].discard(w)
                adj[b].discard(w)
                adj[a].add(b)
                adj[b].add(a)
                del adj[w]
                log.append(("path", w, a, b))
                changed = True
    return {v: sorted(ns) for v, ns in adj.items()}, log


def _reinsert(labeled: dict, log: list) -> dict:
    """Undo ``_precontract`` with identity (path) and unit-vector (leaf) factors."""
    labeled = dict(labeled)
    for entry in reversed(log):
        if entry[0] == "path":
            _, w, a, b = entry
            old = edge_key(a, b)
            arr_a, la = labeled[a]
            arr_b, lb = labeled[b]
            r = arr_a.shape[la.index(old)]
            labeled[a] = (arr_a, [edge_key(a, w) if x == old else x for x in la])
            labeled[b] = (arr_b, [edge_key(b, w) if x == old else x for x in lb])
            labeled[w] = (np.eye(r), [edge_key(a, w), edge_key(b, w)])
        else:
            _, w, u = entry
            arr_u, lu = labeled[u]
            labeled[u] = (arr_u[..., None], lu + [edge_key(u, w)])
            labeled[w] = (np.ones(1), [edge_key(u, w)])
    return labeled


# ------------------------------------------------------------ decomposition


class _Labeled:
    """Current sketched tensor with one label per mode."""

    def __init__(self, A, labels):
        self.A = A
        self.labels = list(labels)

    @property
    def dims(self):
        return list(self.A.dims) if isinstance(self.A, SparseTensor) else list(np.shape(self.A))

    def size(self, labels) -> int:
        d = self.dims
        return math.prod(d[self.labels.index(x)] for x in labels)

    def sketch(self, S, group, new_label) -> "_Labeled":
        pos = [self.labels.index(x) for x in group]
        rest = [x for x in self.labels if x not in group]
        out = apply_group(S, self.A, pos)
        first = sum(1 for i, x in enumerate(self.labels) if x not in group and i < pos[0])
        rest.insert(first, new_label)
        return _Labeled(out, rest)

    def dense(self, order) -> np.ndarray:
        D = as_dense(self.A)
        return np.transpose(D, [self.labels.index(x) for x in order])


def solve_factor(child_sketches: list, Av: np.ndarray) -> np.ndarray:
    """Contract each leading child mode of ``Av`` with the pseudo-inverse of that child's M.

    ``Av`` has modes (s_c1, ..., s_cm, rest...) and each M_c is (s_c x t_c);
    the result has modes (t_c1, ..., t_cm, rest...). This is the least-squares
    solution of ``Av ~ U x_1 M_c1 ... x_m M_cm`` since the Kronecker product of
    pseudo-inverses is the pseudo-inverse of the Kronecker product.
    """
    U = np.asarray(Av, dtype=np.float64)
    for j, M in enumerate(child_sketches):
        if U.shape[j] != M.shape[0]:
            raise InvalidArgumentError(f"child sketch {M.shape} does not match mode {j} of size {U.shape[j]}")
        U = np.moveaxis(np.tensordot(pinv(M), U, axes=(1, j)), 0, j)
    return U


def _apply_child_sketches(child_sketches: list, U: np.ndarray) -> np.ndarray:
    for j, M in enumerate(child_sketches):
        U = np.moveaxis(np.tensordot(M, U, axes=(1, j)), 0, j)
    return U


def tree_bicriteria(A, shape: TreeNetwork, k: int, params: SketchParams, seed: int = 0,
                    root: int | None = None) -> TreeNetwork:
    """Bicriteria tree-network approximation, processing vertices leaf to root.

    For each non-root vertex v (post-order, children by id) the modes outside
    v's subtree are compressed by a Countsketch T_v and a sign matrix R_v;
    the sketched child modes are solved against the children's stored
    sketches M_c; an orthonormal basis of the result is v's factor; M_v
    sketches the subtree and A is contracted with the same Countsketch S_v
    along the subtree's modes. The root solves against its children without
    an above-sketch. Edge ranks are at most t = rows_sign_regression(params).
    """
    A = as_sparse(A)
    if list(A.dims) != shape.dims:
        raise InvalidArgumentError(f"tensor dims {list(A.dims)} do not match the tree's open modes {shape.dims}")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    q = A.ndim
    adj, log = _precontract(_adjacency(shape), shape.open_dims)
    if root is None or root not in adj:
        root = centroid(adj)
    parent = _bfs_parents(adj, root)
    tree = TreeNetwork(parent, shape.open_dims, shape.modes)

    t = rows_sign_regression(params)
    r_t = rows_left_countsketch(params)
    d = shape.max_degree()
    s_req = rows_subtree_sketch(params, t, d)
    total = math.prod(A.dims)
    sub_size = {}
    for v in tree.post_order():
        sub_size[v] = tree.open_dims.get(v, 1) * math.prod(sub_size[c] for c in tree.children(v))

    inv_modes = {m: v for v, m in tree.modes.items()}
    cur = _Labeled(A, [("open", inv_modes[m]) for m in range(q)])
    M = {}
    labeled = {}
    ledger = []
    for v in tree.post_order():
        ch = tree.children(v)
        own = [("sk", c) for c in ch] + ([("open", v)] if v in tree.open_dims else [])
        legs = [edge_key(v, c) for c in ch] + ([open_key(tree.modes[v])] if v in tree.open_dims else [])
        if v == root:
            Y = cur.dense(own)
            U = solve_factor([M[c] for c in ch], Y)
            labeled[v] = (U, legs)
            break
        t_v = min(t, sub_size[v], total // sub_size[v])
        above = [x for x in cur.labels if x not in own]
        T = countsketch_or_identity(r_t, cur.size(above), rng.derive_seed(seed, "tree", "T", v))
        R = sign_or_identity(t_v, T.rows, rng.derive_seed(seed, "tree", "R", v))
        ledger += [ledger_entry(f"T[{v}]", T, r_t), ledger_entry(f"R[{v}]", R, t_v)]
        sk = cur.sketch(T, above, ("above", v))
        sk = sk.sketch(R, [("above", v)], ("above", v))
        Y = sk.dense(own + [("above", v)])
        U = solve_factor([M[c] for c in ch], Y)
        lead = U.shape[:-1]
        Q = col_basis(U.reshape(-1, U.shape[-1]), max_rank=t_v)
        U = Q.reshape(lead + (Q.shape[1],))
        labeled[v] = (U, legs + [edge_key(v, parent[v])])
        Z = _apply_child_sketches([M[c] for c in ch], U)
        Z = Z.reshape(-1, Z.shape[-1])
        S = countsketch_or_identity(s_req, Z.shape[0], rng.derive_seed(seed, "tree", "S", v))
        ledger.append(ledger_entry(f"S[{v}]", S, s_req))
        M[v] = S.apply(Z)
        cur = cur.sketch(S, own, ("sk", v))

    labeled = _reinsert(labeled, log)
    full_parent = _bfs_parents({u: sorted(set(ns)) for u, ns in _labeled_adjacency(labeled).items()}, root)
    out = TreeNetwork.from_labeled(full_parent, shape.open_dims, shape.modes, labeled)
    out.info = {"t": t, "root": root, "max_degree": d, "sketches": ledger, "seed": seed,
                "params": params.to_dict(), "ranks": [[a, b, r] for (a, b), r in out.ranks().items()]}
    return out


def _labeled_adjacency(labeled: dict) -> dict:
    adj = {v: [] for v in labeled}
    for v, (_, labs) in labeled.items():
        for lab in labs:
            if lab[0] == "e":
                u = lab[2] if lab[1] == v else lab[1]
                adj[v].append(u)
    return adj


def path_tree(dims) -> TreeNetwork:
    """Path 0 - 1 - ... - (q-1) rooted at 0, vertex i carrying mode i."""
    q = len(dims)
    parent = {i: (i - 1 if i else None) for i in range(q)}
    return TreeNetwork(parent, {i: int(n) for i, n in enumerate(dims)})


def star_tree(dims) -> TreeNetwork:
    """Open-less center q with one leaf per mode."""
    q = len(dims)
    parent = {i: q for i in range(q)}
    parent[q] = None
    return TreeNetwork(parent, {i: int(n) for i, n in enumerate(dims)})


def balanced_binary_tree(dims) -> TreeNetwork:
    """Leaves 0..q-1 carry the modes; internal vertices q, q+1, ... pair them bottom-up."""
    q = len(dims)
    if q < 2:
        raise InvalidArgumentError("a binary tree needs at least two leaves")
    level = list(range(q))
    parent = {}
    nxt = q
    while len(level) > 1:
        new = []
        for i in range(0, len(level) - 1, 2):
            parent[level[i]] = nxt
            parent[level[i + 1]] = nxt
            new.append(nxt)
            nxt += 1
        if len(level) % 2:
            new.append(level[-1])
        level = new
    parent[level[0]] = None
    return TreeNetwork(parent, {i: int(n) for i, n in enumerate(dims)})
