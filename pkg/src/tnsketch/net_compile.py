"""General tensor networks: contraction planning, exact compilation to a tree, and
sketched approximation against the compiled tree."""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError, ResourceLimitError
from .labeled import contract_labeled, trace_repeated
from .linalg import rank_factor
from .sketching import SketchParams
from .tensor import as_sparse, check_dense
from .tree_net import TreeNetwork, _bfs_parents, centroid, edge_key, open_key, tree_bicriteria


class GeneralNetwork:
    """Undirected multigraph of factors. Edge ids are positions in ``edges``.

    Factor legs of vertex v: incident edges in increasing edge id (a self-loop
    contributes two consecutive legs), then the open mode if any.
    """

    def __init__(self, vertices, edges, open_dims: dict, modes: dict | None = None,
                 factors: dict | None = None):
        self.vertices = sorted(int(v) for v in vertices)
        if not self.vertices or len(set(self.vertices)) != len(self.vertices):
            raise InvalidArgumentError("vertex ids must be distinct and non-empty")
        vs = set(self.vertices)
        self.edges = []
        for e in edges:
            u, v, r = (int(x) for x in e)
            if u not in vs or v not in vs or r < 1:
                raise InvalidArgumentError(f"bad edge {e}")
            self.edges.append((u, v, r))
        self.open_dims = {int(v): int(n) for v, n in open_dims.items()}
        if not set(self.open_dims) <= vs or any(n < 1 for n in self.open_dims.values()):
            raise InvalidArgumentError("open modes must belong to vertices and be positive")
        if modes is None:
            modes = {v: i for i, v in enumerate(sorted(self.open_dims))}
        self.modes = {int(v): int(m) for v, m in modes.items()}
        if set(self.modes) != set(self.open_dims) or sorted(self.modes.values()) != list(range(len(self.modes))):
            raise InvalidArgumentError("open modes must map one-to-one onto tensor modes 0..q-1")
        if not self.is_connected():
            raise InvalidArgumentError("network graph is not connected")
        self.factors = None
        if factors is not None:
            self.factors = {int(v): np.asarray(f, dtype=np.float64) for v, f in factors.items()}
            self._check_factors()

    @property
    def q(self) -> int:
        return len(self.modes)

    @property
    def dims(self) -> list[int]:
        inv = {m: v for v, m in self.modes.items()}
        return [self.open_dims[inv[m]] for m in range(self.q)]

    def incident(self, v: int) -> list[int]:
        out = []
        for i, (a, b, _) in enumerate(self.edges):
            if a == v:
                out.append(i)
            if b == v:
                out.append(i)
        return out

    def degree(self, v: int) -> int:
        """Number of incident non-loop edges, parallel edges counted with multiplicity."""
        return sum(1 for i in self.incident(v) if self.edges[i][0] != self.edges[i][1])

    def max_degree(self) -> int:
        return max(self.degree(v) for v in self.vertices)

    def leg_labels(self, v: int) -> list:
        labs = [("g", i) for i in self.incident(v)]
        if v in self.open_dims:
            labs.append(open_key(self.modes[v]))
        return labs

    def leg_dims(self, v: int) -> list[int]:
        out = [self.edges[i][2] for i in self.incident(v)]
        if v in self.open_dims:
            out.append(self.open_dims[v])
        return out

    def is_connected(self) -> bool:
        adj = {v: set() for v in self.vertices}
        for a, b, _ in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        seen, stack = {self.vertices[0]}, [self.vertices[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.vertices)

    def _check_factors(self):
        if set(self.factors) != set(self.vertices):
            raise InvalidStateError("every vertex needs a factor")
        for v in self.vertices:
            if list(self.factors[v].shape) != self.leg_dims(v):
                raise InvalidArgumentError(
                    f"factor of vertex {v} has shape {self.factors[v].shape}, expected {self.leg_dims(v)}")

    def labeled(self) -> dict:
        if self.factors is None:
            raise InvalidStateError("network has no factors")
        return {v: (self.factors[v], self.leg_labels(v)) for v in self.vertices}

    def with_factors(self, factors: dict) -> "GeneralNetwork":
        return GeneralNetwork(self.vertices, self.edges, self.open_dims, self.modes, factors)

    def random_factors(self, gen: np.random.Generator) -> "GeneralNetwork":
        return self.with_factors({v: gen.standard_normal(self.leg_dims(v)) for v in self.vertices})

    def shape_dict(self) -> dict:
        verts = []
        for v in self.vertices:
            d = {"id": v}
            if v in self.open_dims:
                d["open_mode_size"] = self.open_dims[v]
                d["mode"] = self.modes[v]
            verts.append(d)
        return {"vertices": verts, "edges": [{"u": a, "v": b, "rank": r} for a, b, r in self.edges]}

    @classmethod
    def from_shape_dict(cls, d: dict) -> "GeneralNetwork":
        try:
            verts = d["vertices"]
            ids = [int(x["id"]) for x in verts]
            open_dims = {int(x["id"]): int(x["open_mode_size"]) for x in verts if x.get("open_mode_size")}
            edges = [(int(e["u"]), int(e["v"]), int(e["rank"])) for e in d["edges"]]
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgumentError(f"malformed network shape: {e}") from None
        modes = None
        if any("mode" in x for x in verts if x.get("open_mode_size")):
            modes = {int(x["id"]): int(x["mode"]) for x in verts if x.get("open_mode_size")}
        return cls(ids, edges, open_dims, modes)

    def to_json(self) -> str:
        return json.dumps(self.shape_dict(), indent=2)


def general_contract(G: GeneralNetwork, order=None) -> np.ndarray:
    """Contract the network edge by edge (``order``: list of edge ids; default by id)."""
    bonds = None if order is None else [("g", i) for i in order]
    Z, _ = contract_labeled(G.labeled(), bonds, [open_key(m) for m in range(G.q)])
    return Z


# ---------------------------------------------------------------- planning


@dataclass
class ContractionPlan:
    """Edges contracted in order; per step the degrees of both endpoints and of the merged vertex.

    ``t_deg`` counts parallel edges with multiplicity; ``t_deg_distinct``
    counts distinct neighbours (parallel edges once).
    """

    edges: list
    steps: list = field(default_factory=list)
    t_deg: int = 0
    t_deg_distinct: int = 0

    def to_dict(self) -> dict:
        return {"edges": self.edges, "steps": self.steps, "t_deg": self.t_deg,
                "t_deg_distinct": self.t_deg_distinct}

    @classmethod
    def from_dict(cls, d: dict) -> "ContractionPlan":
        return cls([int(e) for e in d["edges"]], list(d.get("steps", [])),
                    int(d.get("t_deg", 0)), int(d.get("t_deg_distinct", 0)))


class _Groups:
    """Vertex groups of the partially contracted multigraph."""

    def __init__(self, G: GeneralNetwork):
        self.G = G
        self.group = {v: v for v in G.vertices}
        self.members = {v: {v} for v in G.vertices}

    def find(self, v):
        return self.group[v]

    def cross_edges(self, x):
        """Multiset of neighbouring groups of group x (one entry per edge)."""
        out = []
        for a, b, _ in self.G.edges:
            ga, gb = self.group[a], self.group[b]
            if ga == gb:
                continue
            if ga == x:
                out.append(gb)
            elif gb == x:
                out.append(ga)
        return out

    def merged_degree(self, x, y):
        nb = [z for z in self.cross_edges(x) + self.cross_edges(y) if z not in (x, y)]
        return len(nb), len(set(nb))

    def merge(self, x, y):
        keep, gone = min(x, y), max(x, y)
        for v in self.members[gone]:
            self.group[v] = keep
        self.members[keep] |= self.members.pop(gone)
        return keep


def replay_plan(G: GeneralNetwork, order) -> ContractionPlan:
    """Replay an edge order, skipping edges already internal to a merged vertex."""
    g = _Groups(G)
    plan = ContractionPlan([])
    t_deg = max([G.degree(v) for v in G.vertices] + [0])
    t_dist = max([len({(a if b == v else b) for a, b, _ in G.edges if v in (a, b) and a != b})
                  for v in G.vertices] + [0])
    for e in order:
        e = int(e)
        if not 0 <= e < len(G.edges):
            raise InvalidArgumentError(f"edge id {e} out of range")
        a, b, _ = G.edges[e]
        x, y = g.find(a), g.find(b)
        if x == y:
            continue
        dx, dy = len(g.cross_edges(x)), len(g.cross_edges(y))
        dxd, dyd = len(set(g.cross_edges(x))), len(set(g.cross_edges(y)))
        md, mdd = g.merged_degree(x, y)
        plan.edges.append(e)
        plan.steps.append({"edge": e, "deg_u": dx, "deg_v": dy, "deg_merged": md})
        t_deg = max(t_deg, dx, dy, md)
        t_dist = max(t_dist, dxd, dyd, mdd)
        g.merge(x, y)
    if len(g.members) != 1:
        raise InvalidArgumentError("edge order does not contract the network to a single vertex")
    plan.t_deg, plan.t_deg_distinct = t_deg, t_dist
    return plan


def plan_contraction(G: GeneralNetwork) -> ContractionPlan:
    """Greedy order: contract the edge whose merged vertex has the fewest incident edges.

    Ties are broken by the (smaller, larger) group ids, then by edge id.
    """
    g = _Groups(G)
    order = []
    while len(g.members) > 1:
        best = None
        for i, (a, b, _) in enumerate(G.edges):
            x, y = g.find(a), g.find(b)
            if x == y:
                continue
            key = (g.merged_degree(x, y)[0], min(x, y), max(x, y), i)
            if best is None or key < best:
                best = key
        _, x, y, i = best
        order.append(i)
        g.merge(x, y)
    return replay_plan(G, order)


# ---------------------------------------------------------------- compilation


def _compile(G: GeneralNetwork, plan: ContractionPlan, with_factors: bool):
    """Shared driver of exact compilation and topology-only compilation.

    Returns (labeled tree factors or leg-size lists, split ranks, final root vertex).
    Each live group carries a tensor with graph legs ("g", eid), tree legs
    ("t", id) and open legs; before two groups merge, each splits off its
    non-graph legs into a new tree vertex.
    """
    live = {}
    for v in G.vertices:
        labs = G.leg_labels(v)
        if with_factors:
            arr, labs = trace_repeated(G.factors[v], labs)
        else:
            arr = None
            dims = G.leg_dims(v)
            keep = [i for i, lab in enumerate(labs) if labs.count(lab) == 1]
            labs, arr = [labs[i] for i in keep], [dims[i] for i in keep]
        live[v] = (arr, labs)
    groups = _Groups(G)
    tree = {}  # tree vertex -> (array or dims, labels)
    next_id = max(G.vertices) + 1
    split_ranks = []

    def shape_of(arr):
        return list(arr.shape) if with_factors else list(arr)

    for e in plan.edges:
        a, b, _ = G.edges[e]
        x, y = groups.find(a), groups.find(b)
        if x == y:
            raise InvalidArgumentError(f"plan edge {e} is already contracted")
        for z in (x, y):
            arr, labs = live[z]
            l1 = [lab for lab in labs if lab[0] == "g"]
            l2 = [lab for lab in labs if lab[0] != "g"]
            if not l2:
                continue
            sh = shape_of(arr)
            d1 = [sh[labs.index(lab)] for lab in l1]
            d2 = [sh[labs.index(lab)] for lab in l2]
            # single original vertices keep their id for the leaf they leave behind
            tid = z if len(groups.members[z]) == 1 else next_id
            if tid == next_id:
                next_id += 1
            tau = ("t", tid)
            if with_factors:
                perm = [labs.index(lab) for lab in l1 + l2]
                M = np.transpose(arr, perm).reshape(math.prod(d1), math.prod(d2))
                L, R = rank_factor(M)
                r = L.shape[1]
                live[z] = (L.reshape(d1 + [r]), l1 + [tau])
                tree[tid] = (R.reshape([r] + d2), [tau] + l2)
            else:
                r = min(math.prod(d1), math.prod(d2))
                live[z] = (d1 + [r], l1 + [tau])
                tree[tid] = ([r] + d2, [tau] + l2)
            split_ranks.append({"edge": e, "vertex": tid, "rank": r, "graph_leg_product": math.prod(d1)})
        (X, xl), (Y, yl) = live.pop(x), live.pop(y)
        if with_factors:
            shared = [lab for lab in xl if lab in yl]
            out_shape = [s for s, lab in zip(X.shape, xl) if lab not in shared] + \
                        [s for s, lab in zip(Y.shape, yl) if lab not in shared]
            try:
                check_dense(out_shape, f"merged factor at plan edge {e}")
            except ResourceLimitError as err:
                raise ResourceLimitError(f"{err} (plan step {len(split_ranks)})") from None
            ax = [xl.index(lab) for lab in shared]
            ay = [yl.index(lab) for lab in shared]
            W = np.tensordot(X, Y, axes=(ax, ay))
            wl = [lab for lab in xl if lab not in shared] + [lab for lab in yl if lab not in shared]
        else:
            W = [s for s, lab in zip(X, xl) if lab not in yl] + [s for s, lab in zip(Y, yl) if lab not in xl]
            wl = [lab for lab in xl if lab not in yl] + [lab for lab in yl if lab not in xl]
        keep = groups.merge(x, y)
        live[keep] = (W, wl)
    (W, wl), = live.values()
    (final,) = live.keys()
    root = final if final not in tree and len(groups.members[final]) == 1 else next_id
    tree[root] = (W, wl)
    return tree, split_ranks, root


def _absorb(tree: dict, with_factors: bool) -> dict:
    """Merge open-less vertices with fewer than three tree legs into a neighbour."""
    tree = dict(tree)
    changed = True
    while changed and len(tree) > 1:
        changed = False
        for v in sorted(tree):
            arr, labs = tree[v]
            if any(lab[0] == "o" for lab in labs) or len(labs) >= 3:
                continue
            nbrs = sorted(u for u in tree if u != v and any(lab in tree[u][1] for lab in labs))
            if not nbrs:
                continue
            u = nbrs[0]
            ua, ul = tree.pop(u)
            tree.pop(v)
            shared = [lab for lab in labs if lab in ul]
            if with_factors:
                Z = np.tensordot(ua, arr, axes=([ul.index(s) for s in shared], [labs.index(s) for s in shared]))
            else:
                Z = [s for s, lab in zip(ua, ul) if lab not in shared] + \
                    [s for s, lab in zip(arr, labs) if lab not in shared]
            zl = [lab for lab in ul if lab not in shared] + [lab for lab in labs if lab not in shared]
            tree[u] = (Z, zl)
            changed = True
            break
    return tree


def _to_tree_network(tree: dict, G: GeneralNetwork, with_factors: bool) -> TreeNetwork:
    # relabel tree legs ("t", id) as edge keys between the two vertices that carry them
    carriers = {}
    for v, (_, labs) in tree.items():
        for lab in labs:
            if lab[0] == "t":
                carriers.setdefault(lab, []).append(v)
    adj = {v: [] for v in tree}
    for lab, ends in carriers.items():
        if len(ends) != 2:
            raise InvalidStateError(f"tree leg {lab} has {len(ends)} endpoints")
        a, b = ends
        adj[a].append(b)
        adj[b].append(a)
    open_dims, modes = {}, {}
    inv = {m: v for v, m in G.modes.items()}
    relabeled = {}
    for v, (arr, labs) in tree.items():
        new = []
        for lab in labs:
            if lab[0] == "t":
                a, b = carriers[lab]
                new.append(edge_key(a, b))
            else:
                new.append(lab)
                open_dims[v] = G.open_dims[inv[lab[1]]]
                modes[v] = lab[1]
        relabeled[v] = (arr, new)
    root = centroid(adj) if len(adj) > 1 else next(iter(adj))
    parent = _bfs_parents(adj, root)
    if with_factors:
        return TreeNetwork.from_labeled(parent, open_dims, modes, relabeled)
    return TreeNetwork(parent, open_dims, modes)


def contract_to_tree(G: GeneralNetwork, plan: ContractionPlan | None = None) -> TreeNetwork:
    """Exact compilation of a factored general network into a tree network.

    Follows the plan; before each merge, both endpoints split their
    non-graph legs off by an exact rank factorization, so the tree's
    contraction equals the network's. ``out.info['splits']`` lists each split
    rank next to the product of the graph legs it separates.
    """
    if G.factors is None:
        raise InvalidStateError("network has no factors")
    plan = plan or plan_contraction(G)
    if len(G.vertices) == 1:
        (v,) = G.vertices
        arr, labs = trace_repeated(G.factors[v], G.leg_labels(v))
        tree = {v: (arr, labs)}
        splits = []
    else:
        tree, splits, _ = _compile(G, plan, True)
        tree = _absorb(tree, True)
    out = _to_tree_network(tree, G, True)
    out.info = {"plan": plan.to_dict(), "splits": splits}
    return out


def compiled_shape(G: GeneralNetwork, plan: ContractionPlan | None = None) -> TreeNetwork:
    """Topology of ``contract_to_tree`` without factors."""
    plan = plan or plan_contraction(G)
    if len(G.vertices) == 1:
        (v,) = G.vertices
        return TreeNetwork({v: None}, G.open_dims, G.modes)
    tree, _, _ = _compile(G, plan, False)
    return _to_tree_network(_absorb(tree, False), G, False)


def approx_by_tree(A, G: GeneralNetwork, k: int, params: SketchParams, seed: int = 0,
                   max_rank: int | None = None) -> TreeNetwork:
    """Plan on the shape, compile its topology, then run the tree decomposition at rank k^t_deg."""
    A = as_sparse(A)
    if list(A.dims) != G.dims:
        raise InvalidArgumentError(f"tensor dims {list(A.dims)} do not match the network {G.dims}")
    plan = plan_contraction(G)
    shape = compiled_shape(G, plan)
    k_tree = k ** plan.t_deg
    cap = max_rank if max_rank is not None else math.prod(A.dims)
    k_tree = max(1, min(k_tree, cap))
    out = tree_bicriteria(A, shape, k_tree, params.with_(k=k_tree), seed=seed)
    out.info.update({"plan": plan.to_dict(), "k_tree": k_tree})
    return out
