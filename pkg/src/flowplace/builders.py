"""Sharded dataflow graph builders.

Each matrix is blocked into a shard_grid x shard_grid grid. A matrix multiply
over blocked operands expands into shard_grid**3 submatrix multiplies plus
shard_grid**2 * (shard_grid - 1) partial-sum additions, grouped into one
meta-op whose shard_ops are the multiplies and whose reduce_ops are the
additions. Elementwise and reduction stages shard into one vertex per block.

With shard_grid=2 a single multiply expands into 8 submatrix multiplies and
4 additions; the natural device target for a builder is shard_grid**3, the
size of its largest shard_ops group.

Vertex counts are fixed by this construction and recorded as golden values in
the test suite; they are what the builders produce, not an external target.
"""

from __future__ import annotations

from .graph import DataflowGraph, MetaOp, OpKind, Vertex

DTYPE_BYTES = 4

# Grid of vertex ids for a blocked matrix: grid[(i, j)] -> vertex id.
_Grid = dict[tuple[int, int], int]


class _ShardedBuilder:
    """Accumulates vertices/edges/meta-ops for a blocked tensor computation."""

    def __init__(self, shard_grid: int):
        if shard_grid < 1:
            raise ValueError(f"shard_grid must be >= 1, got {shard_grid}")
        self.g = shard_grid
        self.vertices: list[Vertex] = []
        self.edges: list[tuple[int, int]] = []
        self.metas: list[MetaOp] = []

    def _vertex(self, kind: OpKind, flops: int, out_bytes: int, label: str) -> int:
        vid = len(self.vertices)
        self.vertices.append(Vertex(vid, kind, int(flops), int(out_bytes), label))
        return vid

    def _edge(self, src: int, dst: int) -> None:
        self.edges.append((src, dst))

    def _meta(self, shard: list[int], reduce: list[int]) -> None:
        self.metas.append(MetaOp(len(self.metas), tuple(shard), tuple(reduce)))

    def _block(self, dim: int, axis_name: str) -> int:
        if dim % self.g != 0:
            raise ValueError(f"{axis_name}={dim} is not divisible by shard_grid={self.g}")
        return dim // self.g

    def input_matrix(self, name: str, rows: int, cols: int) -> _Grid:
        br, bc = self._block(rows, "rows"), self._block(cols, "cols")
        return {
            (i, j): self._vertex(OpKind.INPUT, 0, br * bc * DTYPE_BYTES, f"{name}[{i},{j}]")
            for i in range(self.g)
            for j in range(self.g)
        }

    def input_vector(self, name: str, size: int) -> dict[int, int]:
        bs = self._block(size, "size")
        return {
            j: self._vertex(OpKind.INPUT, 0, bs * DTYPE_BYTES, f"{name}[{j}]")
            for j in range(self.g)
        }

    def matmul(self, name: str, a: _Grid, a_dims: tuple[int, int],
               b: _Grid, b_dims: tuple[int, int]) -> tuple[_Grid, tuple[int, int]]:
        if a_dims[1] != b_dims[0]:
            raise ValueError(f"non-conformable dims: {a_dims} x {b_dims}")
        g = self.g
        br = a_dims[0] // g
        bk = a_dims[1] // g
        bc = self._block(b_dims[1], "cols")
        self._block(a_dims[0], "rows")
        self._block(a_dims[1], "inner")
        mm_flops = 2 * br * bk * bc
        out_bytes = br * bc * DTYPE_BYTES

        partials: dict[tuple[int, int], list[int]] = {}
        shard: list[int] = []
        for i in range(g):
            for j in range(g):
                for k in range(g):
                    p = self._vertex(OpKind.MATMUL, mm_flops, out_bytes,
                                     f"{name}.p[{i},{j},{k}]")
                    self._edge(a[(i, k)], p)
                    self._edge(b[(k, j)], p)
                    partials.setdefault((i, j), []).append(p)
                    shard.append(p)
        out: _Grid = {}
        reduce: list[int] = []
        for i in range(g):
            for j in range(g):
                acc = partials[(i, j)][0]
                for step, p in enumerate(partials[(i, j)][1:]):
                    s = self._vertex(OpKind.ADD, br * bc, out_bytes,
                                     f"{name}.s[{i},{j}]#{step}")
                    self._edge(acc, s)
                    self._edge(p, s)
                    reduce.append(s)
                    acc = s
                out[(i, j)] = acc
        self._meta(shard, reduce)
        return out, (a_dims[0], b_dims[1])

    def add_grids(self, name: str, a: _Grid, b: _Grid, dims: tuple[int, int]) -> _Grid:
        g = self.g
        br, bc = dims[0] // g, dims[1] // g
        out: _Grid = {}
        shard: list[int] = []
        for i in range(g):
            for j in range(g):
                s = self._vertex(OpKind.ADD, br * bc, br * bc * DTYPE_BYTES,
                                 f"{name}[{i},{j}]")
                self._edge(a[(i, j)], s)
                self._edge(b[(i, j)], s)
                out[(i, j)] = s
                shard.append(s)
        self._meta(shard, [])
        return out

    def bias_add(self, name: str, a: _Grid, bias: dict[int, int],
                 dims: tuple[int, int]) -> _Grid:
        g = self.g
        br, bc = dims[0] // g, dims[1] // g
        out: _Grid = {}
        shard: list[int] = []
        for i in range(g):
            for j in range(g):
                s = self._vertex(OpKind.ELEMWISE, br * bc, br * bc * DTYPE_BYTES,
                                 f"{name}[{i},{j}]")
                self._edge(a[(i, j)], s)
                self._edge(bias[j], s)
                out[(i, j)] = s
                shard.append(s)
        self._meta(shard, [])
        return out

    def elemwise(self, name: str, a: _Grid, dims: tuple[int, int]) -> _Grid:
        g = self.g
        br, bc = dims[0] // g, dims[1] // g
        out: _Grid = {}
        shard: list[int] = []
        for i in range(g):
            for j in range(g):
                s = self._vertex(OpKind.ELEMWISE, br * bc, br * bc * DTYPE_BYTES,
                                 f"{name}[{i},{j}]")
                self._edge(a[(i, j)], s)
                out[(i, j)] = s
                shard.append(s)
        self._meta(shard, [])
        return out

    def softmax_rows(self, name: str, a: _Grid, dims: tuple[int, int]) -> _Grid:
        """Row softmax over a blocked matrix: max, exp, sum, divide stages.

        Per row-block: one max reduction and one sum reduction across the g
        column blocks; exp and divide are per-block broadcast elemwise ops.
        """
        g = self.g
        br, bc = dims[0] // g, dims[1] // g
        red_flops = g * br * bc
        vec_bytes = br * DTYPE_BYTES
        blk_bytes = br * bc * DTYPE_BYTES

        rmax: dict[int, int] = {}
        shard = []
        for i in range(g):
            m = self._vertex(OpKind.REDUCTION, red_flops, vec_bytes, f"{name}.max[{i}]")
            for j in range(g):
                self._edge(a[(i, j)], m)
            rmax[i] = m
            shard.append(m)
        self._meta(shard, [])

        exp: _Grid = {}
        shard = []
        for i in range(g):
            for j in range(g):
                e = self._vertex(OpKind.ELEMWISE, br * bc, blk_bytes, f"{name}.exp[{i},{j}]")
                self._edge(a[(i, j)], e)
                self._edge(rmax[i], e)
                exp[(i, j)] = e
                shard.append(e)
        self._meta(shard, [])

        rsum: dict[int, int] = {}
        shard = []
        for i in range(g):
            s = self._vertex(OpKind.REDUCTION, red_flops, vec_bytes, f"{name}.sum[{i}]")
            for j in range(g):
                self._edge(exp[(i, j)], s)
            rsum[i] = s
            shard.append(s)
        self._meta(shard, [])

        out: _Grid = {}
        shard = []
        for i in range(g):
            for j in range(g):
                d = self._vertex(OpKind.ELEMWISE, br * bc, blk_bytes, f"{name}.div[{i},{j}]")
                self._edge(exp[(i, j)], d)
                self._edge(rsum[i], d)
                out[(i, j)] = d
                shard.append(d)
        self._meta(shard, [])
        return out

    def finish(self) -> DataflowGraph:
        return DataflowGraph(tuple(self.vertices), tuple(self.edges), tuple(self.metas))


def explode_matmul_chain(matrix_dims: list[tuple[int, int]], shard_grid: int,
                         devices: int) -> DataflowGraph:
    """Explode a chain M1 x M2 x ... into a blocked dataflow graph.

    matrix_dims lists (rows, cols) per chain operand; adjacent dims must
    conform. Every multiply becomes one meta-op; shard_grid**3 must not
    exceed the targeted device count.
    """
    if len(matrix_dims) < 2:
        raise ValueError("need at least two matrices to form a chain")
    if shard_grid ** 3 > devices:
        raise ValueError(
            f"shard_grid={shard_grid} yields {shard_grid ** 3} shard ops per multiply, "
            f"more than {devices} devices"
        )
    for (_, c), (r, _) in zip(matrix_dims, matrix_dims[1:]):
        if c != r:
            raise ValueError(f"non-conformable dims: {matrix_dims}")
    b = _ShardedBuilder(shard_grid)
    names = [chr(ord("A") + i) for i in range(len(matrix_dims))]
    grids = [b.input_matrix(names[i], *matrix_dims[i]) for i in range(len(matrix_dims))]
    acc, acc_dims = grids[0], matrix_dims[0]
    for i in range(1, len(matrix_dims)):
        acc, acc_dims = b.matmul(f"mm{i - 1}", acc, acc_dims, grids[i], matrix_dims[i])
    return b.finish()


def build_chainmm(n: int, shard_grid: int) -> DataflowGraph:
    """Graph computing (A x B) + (C x (D x E)) with all five inputs n x n."""
    if n < shard_grid:
        raise ValueError(f"matrix dim {n} smaller than shard_grid {shard_grid}")
    b = _ShardedBuilder(shard_grid)
    dims = (n, n)
    a = b.input_matrix("A", n, n)
    bb = b.input_matrix("B", n, n)
    c = b.input_matrix("C", n, n)
    d = b.input_matrix("D", n, n)
    e = b.input_matrix("E", n, n)
    ab, _ = b.matmul("AB", a, dims, bb, dims)
    de, _ = b.matmul("DE", d, dims, e, dims)
    cde, _ = b.matmul("CDE", c, dims, de, dims)
    b.add_grids("OUT", ab, cde, dims)
    return b.finish()


def build_ffnn(batch: int, d_in: int, d_hidden: int, d_out: int,
               shard_grid: int) -> DataflowGraph:
    """Graph computing Softmax(ReLU(X*W1 + b1) * W2 + b2) with blocked matmuls."""
    for name, dim in (("batch", batch), ("d_in", d_in),
                      ("d_hidden", d_hidden), ("d_out", d_out)):
        if dim < 1:
            raise ValueError(f"{name} must be positive, got {dim}")
    b = _ShardedBuilder(shard_grid)
    x = b.input_matrix("X", batch, d_in)
    w1 = b.input_matrix("W1", d_in, d_hidden)
    b1 = b.input_vector("b1", d_hidden)
    w2 = b.input_matrix("W2", d_hidden, d_out)
    b2 = b.input_vector("b2", d_out)

    h0, h_dims = b.matmul("mm1", x, (batch, d_in), w1, (d_in, d_hidden))
    h1 = b.bias_add("badd1", h0, b1, h_dims)
    h2 = b.elemwise("relu", h1, h_dims)
    y0, y_dims = b.matmul("mm2", h2, h_dims, w2, (d_hidden, d_out))
    y1 = b.bias_add("badd2", y0, b2, y_dims)
    b.softmax_rows("smax", y1, y_dims)
    return b.finish()
