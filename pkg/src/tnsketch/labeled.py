"""Contraction of networks whose tensors carry hashable leg labels.

A label shared by two tensors is a bond; a label repeated inside one tensor
is a self-loop and gets traced; every other label is an open leg.
"""

from collections import Counter

import numpy as np

from .errors import InvalidArgumentError
from .tensor import check_dense


def trace_repeated(arr: np.ndarray, labels: list) -> tuple[np.ndarray, list]:
    labels = list(labels)
    while True:
        seen = {}
        pair = None
        for i, lab in enumerate(labels):
            if lab in seen:
                pair = (seen[lab], i)
                break
            seen[lab] = i
        if pair is None:
            return arr, labels
        i, j = pair
        arr = np.trace(arr, axis1=i, axis2=j)
        labels = [lab for m, lab in enumerate(labels) if m not in pair]


def contract_pair(X, xl, Y, yl):
    shared = [lab for lab in xl if lab in yl]
    ax = [xl.index(lab) for lab in shared]
    ay = [yl.index(lab) for lab in shared]
    for a, b in zip(ax, ay):
        if X.shape[a] != Y.shape[b]:
            raise InvalidArgumentError(f"bond {shared[ax.index(a)]!r} has sizes {X.shape[a]} and {Y.shape[b]}")
    rest_x = [lab for lab in xl if lab not in shared]
    rest_y = [lab for lab in yl if lab not in shared]
    shape = [X.shape[i] for i, lab in enumerate(xl) if lab not in shared]
    shape += [Y.shape[i] for i, lab in enumerate(yl) if lab not in shared]
    check_dense(shape, "intermediate contraction")
    return np.tensordot(X, Y, axes=(ax, ay)), rest_x + rest_y


def contract_labeled(items: dict, order=None, out_labels=None) -> tuple[np.ndarray, list]:
    """Contract ``{key: (array, labels)}`` bond by bond in ``order`` (default: sorted bonds).

    Returns the result and its labels; when ``out_labels`` is given the
    result is transposed to that order.
    """
    blobs = {}
    for key, (arr, labels) in items.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != len(labels):
            raise InvalidArgumentError(f"tensor {key!r} has {arr.ndim} modes but {len(labels)} labels")
        blobs[key] = trace_repeated(arr, labels)
    counts = Counter(lab for _, labs in blobs.values() for lab in set(labs))
    bonds = sorted((lab for lab, c in counts.items() if c >= 2), key=repr)
    if order is None:
        order = bonds
    owner = {key: key for key in blobs}

    def find(key):
        while owner[key] != key:
            key = owner[key]
        return key

    where = {}
    for key, (_, labs) in blobs.items():
        for lab in labs:
            where.setdefault(lab, []).append(key)

    for lab in list(order) + bonds:
        ends = where.get(lab, [])
        if len(ends) != 2:
            if len(ends) > 2:
                raise InvalidArgumentError(f"label {lab!r} appears on more than two tensors")
            continue
        a, b = find(ends[0]), find(ends[1])
        if a == b:
            continue
        X, xl = blobs.pop(a)
        Y, yl = blobs.pop(b)
        Z, zl = contract_pair(X, xl, Y, yl)
        blobs[a] = (Z, zl)
        owner[b] = a

    keys = sorted(blobs, key=repr)
    Z, zl = blobs[keys[0]]
    for key in keys[1:]:
        Y, yl = blobs[key]
        Z, zl = contract_pair(Z, zl, Y, yl)
    if out_labels is not None:
        out_labels = list(out_labels)
        if sorted(map(repr, out_labels)) != sorted(map(repr, zl)):
            raise InvalidArgumentError(f"open legs {zl} do not match requested {out_labels}")
        Z = np.transpose(Z, [zl.index(lab) for lab in out_labels])
        zl = out_labels
    if Z.ndim == 0:
        Z = Z.reshape(1)
    return Z, zl
