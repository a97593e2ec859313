"""Vertex-coloured cycle (``av``) and chain (``iso``) graphs, Ward markings and power counting.

A graph is a tuple of components, each a tuple of colours read along the edge
direction.  For ``av`` graphs a component is a cycle listed from the vertex after
its wiggly edge, so the wiggly edge runs from the last vertex back to the first
(a single vertex carries a wiggly self-loop).  For ``iso`` graphs a component is
a chain with an initial edge into its first vertex and a final edge out of its last.
"""

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ComplexityLimit, InvalidArgument, InvariantViolation

MODES = ("av", "iso")
P_MAX, R_MAX = 4, 4
WORK_CAP = 5_000_000


@dataclass(frozen=True)
class ColoredGraph:
    mode: str
    components: tuple
    uncolored: int = 0  # fixed extra vertices, ignored by the counting
    conjugated: tuple = ()  # stored decoration, ignored by the counting

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown graph mode {self.mode!r}")
        object.__setattr__(self, "components", tuple(tuple(c) for c in self.components))

    @property
    def p(self):
        return len(self.components)

    def vertices(self):
        """``(vertex id, component, position, colour)`` in reading order."""
        out, vid = [], 0
        for k, comp in enumerate(self.components):
            for j, c in enumerate(comp):
                out.append((vid, k, j, c))
                vid += 1
        return out

    def color_sizes(self):
        return Counter(c for comp in self.components for c in comp)

    def component_ids(self):
        ids, vid = [], 0
        for comp in self.components:
            ids.append(list(range(vid, vid + len(comp))))
            vid += len(comp)
        return ids


# --- rules and canonical form ---------------------------------------------------------

def rule_errors(graph, R=None):
    """Rule violations of ``graph`` (empty when valid).  Both modes share the same rules."""
    errs = []
    comps = graph.components
    if any(len(c) == 0 for c in comps):
        errs.append("empty component")
        return errs
    sizes = graph.color_sizes()
    firsts = {c[0] for c in comps}
    for colour, n in sizes.items():
        if n < 2:
            errs.append(f"colour {colour} used once")
        if R is not None and n > R:
            errs.append(f"colour {colour} used {n} > R times")
        if n == 2 and sum(colour in c for c in comps) < 2:
            errs.append(f"colour {colour} twice in one component")
        if colour not in firsts:
            errs.append(f"colour {colour} never starts a component")
    return errs


def is_valid(graph, R=None):
    return not rule_errors(graph, R)


def _relabel(comps):
    """Rename colours by first occurrence in reading order."""
    names = {}
    return tuple(tuple(names.setdefault(c, len(names)) for c in comp) for comp in comps)


def canonical_form(components):
    """Least relabelled form over all orderings of the components."""
    return min(_relabel(perm) for perm in itertools.permutations(components))


def canonical_graph(graph):
    return ColoredGraph(graph.mode, canonical_form(graph.components), graph.uncolored, graph.conjugated)


# --- enumeration ----------------------------------------------------------------------

def compositions(n, p):
    """Ordered ``p``-tuples of positive integers summing to ``n``."""
    for cuts in itertools.combinations(range(1, n), p - 1):
        bounds = (0,) + cuts + (n,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(p))


def restricted_growth(n, max_blocks, R):
    """Restricted growth strings of length ``n`` whose blocks have size in ``[2, R]``."""
    word = [0] * n
    counts = []

    def rec(i):
        if i == n:
            if all(c >= 2 for c in counts):
                yield tuple(word)
            return
        short = sum(max(0, 2 - c) for c in counts)
        if short > n - i:
            return
        for c in range(min(len(counts) + 1, max_blocks)):
            if c == len(counts):
                counts.append(0)
            if counts[c] < R:
                counts[c] += 1
                word[i] = c
                yield from rec(i + 1)
                counts[c] -= 1
            if counts[c] == 0:
                counts.pop()

    yield from rec(0)


def _partition_counts(n, max_blocks, R):
    """Set partitions of ``[n]`` into at most ``max_blocks`` blocks of size ``2..R``."""
    # f[m][k]: partitions of m labelled points into k blocks; new block holds the last point
    f = [[0] * (max_blocks + 1) for _ in range(n + 1)]
    f[0][0] = 1
    for m in range(1, n + 1):
        for k in range(1, max_blocks + 1):
            f[m][k] = sum(math.comb(m - 1, s - 1) * f[m - s][k - 1] for s in range(2, min(R, m) + 1))
    return sum(f[n][1:])


def enumeration_work(p, R):
    return sum(_partition_counts(n, p, R) * math.comb(n - 1, p - 1) for n in range(max(p, 2), p * R + 1))


def _check_caps(p, R):
    if p < 1 or R < 2:
        raise InvalidArgument("need p >= 1 and R >= 2")
    if p > P_MAX or R > R_MAX:
        raise ComplexityLimit(f"(p, R) = ({p}, {R}) exceeds the cap ({P_MAX}, {R_MAX})")
    work = enumeration_work(p, R)
    if work > WORK_CAP:
        raise ComplexityLimit(f"(p, R) = ({p}, {R}) needs {work} candidates, cap is {WORK_CAP}")


@dataclass
class Enumeration:
    mode: str
    p: int
    R: int
    graphs: list
    labeled_count: int


def enumerate_graphs(mode, p, R):
    """Canonical representatives of all rule-valid graphs, sorted.

    ``labeled_count`` counts valid graphs with ordered components (colours up to renaming).
    """
    if mode not in MODES:
        raise InvalidArgument(f"unknown graph mode {mode!r}")
    _check_caps(p, R)
    canon, labeled = set(), 0
    for n in range(max(p, 2), p * R + 1):
        words = list(restricted_growth(n, p, R))
        for sizes in compositions(n, p):
            for word in words:
                comps, i = [], 0
                for s in sizes:
                    comps.append(word[i:i + s])
                    i += s
                if _valid_fast(comps):
                    labeled += 1
                    canon.add(canonical_form(comps))
    graphs = [ColoredGraph(mode, c) for c in sorted(canon)]
    return Enumeration(mode, p, R, graphs, labeled)


def _valid_fast(comps):
    firsts = {c[0] for c in comps}
    colours = set().union(*map(set, comps))
    if firsts != colours:
        return False
    for colour in colours:
        hits = [comp.count(colour) for comp in comps]
        if sum(hits) == 2 and max(hits) == 2:
            return False
    return True


def brute_force_graphs(mode, p, R):
    """Generate-and-filter oracle: every colouring of every composition, canonicalized
    under component and colour permutations."""
    if p > 3 or R > 3:
        raise ComplexityLimit("the brute-force oracle is limited to p, R <= 3")
    found = set()
    for n in range(p, p * R + 1):
        maps = []
        for colouring in itertools.product(range(p), repeat=n):
            counts = Counter(colouring)
            if all(2 <= v <= R for v in counts.values()):
                maps.append(colouring)
        for sizes in compositions(n, p):
            starts = list(itertools.accumulate((0,) + sizes[:-1]))
            for colouring in maps:
                comps = [colouring[s:s + k] for s, k in zip(starts, sizes)]
                if _oracle_rules(comps, R):
                    found.add(_oracle_canonical(comps, p))
    return sorted(found)


def _oracle_rules(comps, R):
    for colour in set(itertools.chain.from_iterable(comps)):
        where = [k for k, comp in enumerate(comps) for c in comp if c == colour]
        if not 2 <= len(where) <= R:
            return False
        if len(where) == 2 and where[0] == where[1]:
            return False
        if not any(comp[0] == colour for comp in comps):
            return False
    return True


def _oracle_canonical(comps, p):
    best = None
    for order in itertools.permutations(comps):
        for perm in itertools.permutations(range(p)):
            cand = tuple(tuple(perm[c] for c in comp) for comp in order)
            if best is None or cand < best:
                best = cand
    # compress colour names to 0..k-1 in first-occurrence order
    return _relabel(best)


# --- edges and markings ---------------------------------------------------------------

@dataclass
class Edge:
    tail: object  # vertex id, or None for an initial edge
    head: object  # vertex id, or None for a final edge
    kind: str = "plain"  # plain | wiggle | initial | final
    marks: list = field(default_factory=list)  # vertex ids of Ward marks
    grey: bool = False  # summed initial edge, counted as unmarked

    @property
    def special(self):
        return self.kind in ("initial", "final")


def build_edges(graph):
    """Edges plus the out- and in-edge index of every vertex."""
    edges, out_e, in_e = [], {}, {}
    for ids in graph.component_ids():
        if graph.mode == "av":
            for j, v in enumerate(ids):
                w = ids[(j + 1) % len(ids)]
                out_e[v] = in_e[w] = len(edges)
                edges.append(Edge(v, w, "wiggle" if j == len(ids) - 1 else "plain"))
        else:
            in_e[ids[0]] = len(edges)
            edges.append(Edge(None, ids[0], "initial"))
            for v, w in zip(ids, ids[1:]):
                out_e[v] = in_e[w] = len(edges)
                edges.append(Edge(v, w))
            out_e[ids[-1]] = len(edges)
            edges.append(Edge(ids[-1], None, "final"))
    return edges, out_e, in_e


def _runs(ids, colours, colour, cyclic):
    """Maximal consecutive runs of ``colour`` in one component, as vertex-id lists."""
    L = len(ids)
    hit = [colours[v] == colour for v in ids]
    if not any(hit):
        return []
    if cyclic and all(hit):
        return [list(ids)]
    start = 0
    if cyclic:
        # begin scanning right after a vertex of another colour
        start = next(j for j in range(L) if not hit[j - 1])
    runs, cur = [], []
    order = [(start + k) % L for k in range(L)] if cyclic else range(L)
    for j in order:
        if hit[j]:
            cur.append(ids[j])
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


class _Marker:
    def __init__(self, graph):
        self.graph = graph
        self.edges, self.out_e, self.in_e = build_edges(graph)
        self.colour = {v: c for v, _, _, c in graph.vertices()}
        self.comp_ids = graph.component_ids()

    def runs(self, colour):
        cyclic = self.graph.mode == "av"
        out = []
        for ids in self.comp_ids:
            for run in _runs(ids, self.colour, colour, cyclic):
                closed = cyclic and len(run) == len(ids)
                out.append((run, closed))
        return out

    def mark(self, e, v):
        self.edges[e].marks.append(v)

    def mark_both(self, v):
        self.mark(self.in_e[v], v)
        if self.out_e[v] != self.in_e[v]:
            self.mark(self.out_e[v], v)


def _mark_av_three(mk, colour):
    runs = mk.runs(colour)
    for run, closed in runs:
        if closed and len(run) == 3:
            mk.mark(mk.out_e[run[1]], run[1])
            return
    for run, closed in runs:
        if not closed and len(run) == 3:
            mk.mark(mk.in_e[run[0]], run[0])
            mk.mark(mk.out_e[run[2]], run[2])
            return
    # candidate Ward vertices in priority order
    singles_open = [run[0] for run, closed in runs if len(run) == 1 and not closed]
    loops = [run[0] for run, closed in runs if len(run) == 1 and closed]
    pairs_open = [run for run, closed in runs if len(run) == 2 and not closed]
    picks = [("both", v) for v in singles_open] + [("both", v) for v in loops]
    picks += [("out", run[1]) for run in pairs_open] + [("in", run[0]) for run in pairs_open]
    for how, v in picks[:2]:
        if how == "both":
            mk.mark_both(v)
        elif how == "out":
            mk.mark(mk.out_e[v], v)
        else:
            mk.mark(mk.in_e[v], v)


def _effective_av(edge, colour, sizes):
    if not edge.marks:
        return False
    if len(edge.marks) > 1 or edge.tail == edge.head:
        return True
    ca, cb = colour[edge.tail], colour[edge.head]
    return ca == cb or sizes[ca] > 3 or sizes[cb] > 3


def _effective_iso(edge, colour):
    if not edge.marks:
        return False
    if edge.special or len(edge.marks) > 1:
        return True
    return colour[edge.tail] == colour[edge.head]


@dataclass
class MarkedGraph:
    graph: ColoredGraph
    edges: list
    effective: int
    ineffective: int
    variant: dict = field(default_factory=dict)  # iso: colour -> (start vertex, "c" | "d")


def _mark_av(graph):
    mk = _Marker(graph)
    sizes = graph.color_sizes()
    for colour in sorted(sizes):
        if sizes[colour] == 2:
            for v in (u for u, c in mk.colour.items() if c == colour):
                mk.mark_both(v)
        elif sizes[colour] == 3:
            _mark_av_three(mk, colour)
    eff = sum(_effective_av(e, mk.colour, sizes) for e in mk.edges)
    marked = sum(bool(e.marks) for e in mk.edges)
    return MarkedGraph(graph, mk.edges, eff, marked - eff)


def _iso_three(mk, colour):
    starts = [ids[0] for ids in mk.comp_ids if mk.colour[ids[0]] == colour]
    s = starts[0]
    mk.edges[mk.in_e[s]].grey = True
    runs = [run for run, _ in mk.runs(colour)]
    first = next(run for run in runs if run[0] == s)
    rest = [run for run in runs if run is not first]
    if len(first) == 3:
        mk.mark(mk.out_e[first[2]], first[2])
    elif len(first) == 2:
        mk.mark_both(rest[0][0])
    elif len(rest) == 1:
        mk.mark(mk.out_e[s], s)
        mk.mark(mk.in_e[rest[0][0]], rest[0][0])
    else:
        mk.mark(mk.out_e[s], s)
        mk.mark_both(rest[0][0])


def _iso_many(mk, colour):
    vs = [v for v in sorted(mk.colour) if mk.colour[v] == colour]
    internal = [i for i, e in enumerate(mk.edges)
                if not e.special and mk.colour[e.tail] == colour and mk.colour[e.head] == colour]
    if len(internal) >= 2:
        for i in internal[:2]:
            mk.mark(i, mk.edges[i].tail)
    elif not internal:
        mk.mark_both(vs[0])
        mk.mark_both(vs[1])
    else:
        run_start = mk.edges[internal[0]].tail
        mk.mark(mk.in_e[run_start], run_start)
        lone = next(v for v in vs if v not in (run_start, mk.edges[internal[0]].head))
        mk.mark_both(lone)


def _iso_two_options(graph, colour):
    ids = [v for v, _, _, c in graph.vertices() if c == colour]
    first_ids = {ids_[0] for ids_ in graph.component_ids()}
    opts = []
    for s in ids:
        if s in first_ids:
            t = ids[1] if s == ids[0] else ids[0]
            opts += [(s, t, "c"), (s, t, "d")]
    return opts


def _mark_iso_once(graph, choice):
    mk = _Marker(graph)
    sizes = graph.color_sizes()
    for colour in sorted(sizes):
        n = sizes[colour]
        if n == 2:
            s, t, var = choice[colour]
            mk.edges[mk.in_e[s]].grey = True
            mk.mark(mk.out_e[s], s)
            mk.mark(mk.in_e[t] if var == "c" else mk.out_e[t], t)
        elif n == 3:
            _iso_three(mk, colour)
        else:
            _iso_many(mk, colour)
    eff = sum(_effective_iso(e, mk.colour) for e in mk.edges)
    marked = sum(bool(e.marks) for e in mk.edges)
    variant = {c: (s, v) for c, (s, _, v) in choice.items()}
    return MarkedGraph(graph, mk.edges, eff, marked - eff, variant)


def _mark_iso(graph):
    """Worst case over the summation variants of twice-used colours (and the summed start)."""
    sizes = graph.color_sizes()
    twice = [c for c in sorted(sizes) if sizes[c] == 2]
    options = [_iso_two_options(graph, c) for c in twice]
    worst = None
    for combo in itertools.product(*options):
        marked = _mark_iso_once(graph, dict(zip(twice, combo)))
        if worst is None or marked.effective < worst.effective:
            worst = marked
    return worst


def mark_and_count(graph):
    """Apply the per-colour marking procedure and classify the marks."""
    if not is_valid(graph):
        raise InvalidArgument(f"graph violates the rules: {rule_errors(graph)}")
    return _mark_av(graph) if graph.mode == "av" else _mark_iso(graph)


def required_marks(graph):
    """Guaranteed lower bound on the effective marks."""
    sizes = graph.color_sizes().values()
    if graph.mode == "av":
        return sum(4 - n for n in sizes if n <= 3)
    return graph.p + sum(4 - n for n in sizes if n >= 4)


# --- power counting -------------------------------------------------------------------

@dataclass
class PowerCount:
    N_exp: Fraction
    psi_exp: Fraction
    q: Fraction  # av only: half the Ward gains owed by the twice/thrice colours
    effective: int

    def as_json(self):
        return {"N_exp": str(self.N_exp), "psi_exp": str(self.psi_exp), "q": str(self.q),
                "effective": self.effective}


def power_count(marked):
    """``Val <~ N^N_exp psi^psi_exp`` in units of ``log N`` and ``log psi``."""
    g = marked.graph
    sizes = g.color_sizes().values()
    half = Fraction(1, 2)
    eff = marked.effective
    if g.mode == "av":
        q = sum((2 - n * half for n in sizes if n <= 3), Fraction(0))
        n_exp = sum((2 - n * half for n in sizes if n > 3), Fraction(0))
        return PowerCount(n_exp, Fraction(eff) + 2 * (g.p - q), q, eff)
    n_exp = sum((2 - n * half for n in sizes if n >= 4), Fraction(0))
    return PowerCount(n_exp, Fraction(eff), Fraction(0), eff)


def graph_violations(marked, pc):
    g = marked.graph
    out = []
    if marked.effective < required_marks(g):
        out.append(f"{marked.effective} effective marks < {required_marks(g)}")
    if g.mode == "av":
        if pc.q > g.p:
            out.append(f"q = {pc.q} > p")
        if pc.N_exp > 0:
            out.append(f"N_exp = {pc.N_exp} > 0")
        if pc.psi_exp < 2 * g.p:
            out.append(f"psi_exp = {pc.psi_exp} < 2p")
    elif 2 * pc.N_exp + max(0, g.p - pc.psi_exp) > 0:
        out.append(f"2 N_exp + (p - psi_exp)+ = {2 * pc.N_exp + max(0, g.p - pc.psi_exp)} > 0")
    return out


@dataclass
class CheckReport:
    mode: str
    p: int
    R: int
    graph_count: int
    labeled_count: int
    violations: list  # (graph json, messages)

    @property
    def max_violations(self):
        return max((len(m) for _, m in self.violations), default=0)

    def summary_row(self):
        return f"{self.p},{self.R},{self.mode},{self.graph_count},{self.max_violations}"


def bound_invariant_check(p, R, mode="av", strict=True):
    """Mark, power count and check every enumerated graph.

    With ``strict`` any violation raises ``InvariantViolation`` carrying the offending graphs.
    """
    enum = enumerate_graphs(mode, p, R)
    bad = []
    for g in enum.graphs:
        marked = mark_and_count(g)
        pc = power_count(marked)
        msgs = graph_violations(marked, pc)
        if msgs:
            bad.append((graph_json(marked, pc), msgs))
    report = CheckReport(mode, p, R, len(enum.graphs), enum.labeled_count, bad)
    if bad and strict:
        raise InvariantViolation(json.dumps([b[0] for b in bad]))
    return report


SUMMARY_HEADER = "p,R,mode,graph_count,max_violations"


def summary_table(reports):
    return "\n".join([SUMMARY_HEADER] + [r.summary_row() for r in reports]) + "\n"


# --- serialization --------------------------------------------------------------------

def graph_json(marked, pc=None):
    """Plain-data form of a marked graph."""
    if isinstance(marked, ColoredGraph):
        marked = mark_and_count(marked)
    g = marked.graph
    pc = pc or power_count(marked)
    colours = {str(v): c for v, _, _, c in g.vertices()}
    colour_of = {v: c for v, _, _, c in g.vertices()}
    sizes = g.color_sizes()
    special, marks = [], []
    for e in marked.edges:
        pair = [e.tail, e.head]
        if e.kind != "plain":
            special.append({"kind": e.kind, "edge": pair})
        if e.marks or e.grey:
            eff = (_effective_av(e, colour_of, sizes) if g.mode == "av" else _effective_iso(e, colour_of))
            marks.append({"edge": pair, "by": list(e.marks), "grey": e.grey, "effective": bool(eff)})
    return {"mode": g.mode, "components": g.component_ids(), "colors": colours,
            "special_edges": special, "marks": marks, "exponents": pc.as_json(),
            "uncolored": g.uncolored, "conjugated": list(g.conjugated)}


def graph_from_json(data):
    colours = data["colors"]
    comps = [tuple(colours[str(v)] for v in ids) for ids in data["components"]]
    return ColoredGraph(data["mode"], tuple(comps), data.get("uncolored", 0),
                        tuple(data.get("conjugated", ())))
