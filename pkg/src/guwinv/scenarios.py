"""Plate scenarios: parameterized defect models built from super elements.

All three defect families live in a 5 mm steel plate driven by a 5 mm
traction patch at x = 0 and observed at a single surface point at
x = 100 mm.  Both plate ends carry absorbing half-infinite elements, so the
only reflections reaching the sensor come from the defect itself.

Geometry conventions: the plate occupies y in [-2.5, 2.5] mm; x runs along
the guide.  Defect parameters arrive as the scaled vector q in [1, 2]^d and
map affinely onto physical values.  All internal lengths are meters.
"""

import logging
import warnings

import numpy as np

from .assembly import ElementBlock, ModelGraph
from .crosssection import (CrossSectionMesh, MaterialIso,
                           gauss_lobatto_basis)
from .dual import dual_array, is_dual, value
from .elements import (PolygonElement, PolygonMesh, PrismaticElement,
                       polygon_stiffness, prismatic_stiffness)
from .errors import GeometryInvalid

__all__ = ["DefectTemplate", "CRACK", "DELAMINATION", "CORROSION",
           "TEMPLATES", "OutOfRangeWarning", "scale_params", "build_model",
           "build_pristine_model", "PLATE", "HALF_THICKNESS", "SENSOR_X",
           "PATCH_LEN", "DEGREE", "CS_ELEMS", "LEFT_LABELS"]

log = logging.getLogger(__name__)

PLATE = MaterialIso(E=200e9, nu=0.3, rho=7850.0)
HALF_THICKNESS = 2.5e-3
SENSOR_X = 100e-3
PATCH_LEN = 5e-3          # traction patch = width of the source box
DEGREE = 4
CS_ELEMS = 3              # full-thickness cross-section: 3 elements, 13 nodes
BOX_HALF = 1.25e-3        # half width of the crack box
DELAM_BOX = 5e-3          # width of each delamination box
NOTCH_PAD = 2.5e-3        # corner-box overhang into full-thickness plate
NOTCH_LIP = 1.25e-3       # corner-box overhang into the thinned section

# elements whose geometry never depends on q (everything up to the sensor)
LEFT_LABELS = frozenset({"absorber-left", "source-box", "lead-in"})


class OutOfRangeWarning(UserWarning):
    """A scaled parameter left [1, 2] and was clamped."""


class DefectTemplate:
    """Defect family: scaled-parameter ranges plus the excitation mode."""

    def __init__(self, kind, ranges, excitation):
        self.kind = kind
        self.ranges = tuple(tuple(r) for r in ranges)
        self.excitation = excitation

    @property
    def n_params(self):
        return len(self.ranges)

    def __repr__(self):
        return f"DefectTemplate({self.kind!r}, d={self.n_params})"

    def __hash__(self):
        return hash((self.kind, self.ranges, self.excitation))

    def __eq__(self, other):
        return (isinstance(other, DefectTemplate)
                and (self.kind, self.ranges, self.excitation)
                == (other.kind, other.ranges, other.excitation))


CRACK = DefectTemplate(
    "crack",
    ranges=((200e-3, 2200e-3),       # box position along the guide
            (-0.5e-3, 0.5e-3),       # tip x offset from the box center
            (-2.25e-3, 0.0)),        # tip y (mouth sits on the bottom face)
    excitation="S0")

DELAMINATION = DefectTemplate(
    "delamination",
    ranges=((200e-3, 2200e-3),       # seam center
            (2.5e-3, 7.5e-3)),       # seam length at mid thickness
    excitation="A0")

CORROSION = DefectTemplate(
    "corrosion",
    ranges=((200e-3, 2200e-3),       # notch center
            (7.5e-3, 57.5e-3),       # notch length on the top surface
            (0.25e-3, 1.0e-3)),      # notch depth
    excitation="S0")

TEMPLATES = {t.kind: t for t in (CRACK, DELAMINATION, CORROSION)}


def scale_params(template, q):
    """Map scaled parameters from [1, 2]^d onto physical values (meters).

    Components outside [1, 2] are clamped with an OutOfRangeWarning; the
    tangents of Dual input pass through the affine map untouched, so line
    searches stay differentiable right up to the box boundary.
    """
    d = template.n_params
    qv = value(q)
    qv = np.asarray(qv, dtype=float)
    if qv.shape != (d,):
        raise ValueError(f"expected {d} parameters, got shape {qv.shape}")
    if np.any(qv < 1.0) or np.any(qv > 2.0):
        warnings.warn(f"parameters {qv} clamped to [1, 2]", OutOfRangeWarning,
                      stacklevel=2)
        qc = np.clip(qv, 1.0, 2.0)
        q = type(q)(qc, q.tan) if is_dual(q) else qc
    phys = []
    for i, (lo, hi) in enumerate(template.ranges):
        phys.append(lo + (q[i] - 1.0) * (hi - lo))
    return phys if is_dual(q) else np.array(phys)


# -- mesh scaffolding ---------------------------------------------------------------


def _line(a, b, n_el, degree=DEGREE):
    """Gauss-Lobatto chain coordinates from a to b (1d, endpoints included)."""
    return CrossSectionMesh.uniform(a, b, n_el, degree).node_y


class _Frame:
    """Global node allocator with coordinates kept for bookkeeping."""

    def __init__(self):
        self.xy = []

    def alloc(self, pts):
        start = len(self.xy)
        self.xy.extend([(float(value(x)), float(value(y))) for x, y in pts])
        return np.arange(start, start + len(pts))

    @property
    def n_nodes(self):
        return len(self.xy)


def _dofs(node_ids):
    ids = np.asarray(node_ids)
    return np.stack([2 * ids, 2 * ids + 1], axis=1).ravel()


def _chain(*legs):
    """Concatenate walking legs, dropping each junction's repeated node.

    Every leg is a (points, global_ids) pair; consecutive legs share their
    junction node, which is kept once.  Returns (points, ids) lists.
    """
    pts, ids = [], []
    for leg_pts, leg_ids in legs:
        s = 1 if pts else 0
        pts.extend(leg_pts[s:])
        ids.extend(list(leg_ids)[s:])
    return pts, ids


def _chain_elements(n_el, degree, closed):
    p = degree
    n = n_el * p if closed else n_el * p + 1
    return np.array([[(e * p + i) % n for i in range(p + 1)]
                     for e in range(n_el)])


def _patch_load(frame, edge_ids, traction, weights, half_len):
    """Scatter consistent nodal loads of a constant traction on one edge."""
    f = np.zeros(2 * frame.n_nodes)
    for nid, w in zip(edge_ids, weights):
        f[2 * nid] += w * half_len * traction[0]
        f[2 * nid + 1] += w * half_len * traction[1]
    return f


def _naive_prism(block_elem):
    return lambda omegas: prismatic_stiffness(block_elem, omegas)


def _naive_polygon(block_elem):
    return lambda omegas: polygon_stiffness(block_elem, omegas)


# -- shared left part ---------------------------------------------------------------


def _left_region(frame, cs, excitation):
    """Absorber, source box and lead-in prism; returns (blocks, load, refs).

    Node 0..12 are the sensor interface at x = 100 mm so that reduced
    systems inherit the sensor at a fixed position.
    """
    h = HALF_THICKNESS
    ys = cs.node_y
    if_sens = frame.alloc([(SENSOR_X, y) for y in ys])
    if_zero = frame.alloc([(0.0, y) for y in ys])
    if_box = frame.alloc([(PATCH_LEN, y) for y in ys])

    xs_edge = _line(0.0, PATCH_LEN, 1)
    bot_int = frame.alloc([(x, -h) for x in xs_edge[1:-1]])
    top_int = frame.alloc([(x, +h) for x in xs_edge[1:-1]])

    # source box boundary, counterclockwise from the bottom-left corner
    pts, ids = _chain(
        ([(x, -h) for x in xs_edge],
         [if_zero[0], *bot_int, if_box[0]]),
        ([(PATCH_LEN, y) for y in ys], if_box),
        ([(x, +h) for x in xs_edge[::-1]],
         [if_box[-1], *top_int[::-1], if_zero[-1]]),
        ([(0.0, y) for y in ys[::-1]], if_zero[::-1]),
    )
    pts, ids = pts[:-1], ids[:-1]   # closed chain wraps onto its first node
    box_mesh = PolygonMesh(dual_array(pts),
                           _chain_elements(2 * (1 + CS_ELEMS), DEGREE, True),
                           DEGREE)
    box = PolygonElement(box_mesh, (PATCH_LEN / 2.0, 0.0), PLATE)

    absorber = PrismaticElement(cs, PLATE, None, direction=-1)
    lead_in = PrismaticElement(cs, PLATE, SENSOR_X - PATCH_LEN)

    blocks = [
        ElementBlock(_naive_prism(absorber), _dofs(if_zero),
                     "absorber-left", absorber),
        ElementBlock(_naive_polygon(box), _dofs(ids), "source-box", box),
        ElementBlock(_naive_prism(lead_in),
                     _dofs(np.concatenate([if_box, if_sens])),
                     "lead-in", lead_in),
    ]

    w = gauss_lobatto_basis(DEGREE).weights
    bot_edge = [if_zero[0], *bot_int, if_box[0]]
    top_edge = [if_zero[-1], *top_int, if_box[-1]]
    t_top = (0.0, -1.0)
    t_bot = (0.0, +1.0) if excitation == "S0" else (0.0, -1.0)
    sens_node = if_sens[-1]
    return blocks, (bot_edge, top_edge, t_bot, t_top, w), if_sens, sens_node


def _finish(frame, blocks, load_spec, sens_node):
    bot_edge, top_edge, t_bot, t_top, w = load_spec
    load = (_patch_load(frame, top_edge, t_top, w, PATCH_LEN / 2.0)
            + _patch_load(frame, bot_edge, t_bot, w, PATCH_LEN / 2.0))
    return ModelGraph(blocks, 2 * frame.n_nodes, load,
                      sensor=2 * sens_node + 1,
                      node_xy=np.array(frame.xy))


def build_pristine_model():
    """Defect-free guide: source box between two absorbers, sensor at 100 mm."""
    frame = _Frame()
    cs = CrossSectionMesh.uniform(-HALF_THICKNESS, HALF_THICKNESS,
                                  CS_ELEMS, DEGREE)
    blocks, load_spec, if_sens, sens_node = _left_region(frame, cs, "S0")
    absorber = PrismaticElement(cs, PLATE, None, direction=1)
    blocks.append(ElementBlock(_naive_prism(absorber), _dofs(if_sens),
                               "absorber-right", absorber))
    return _finish(frame, blocks, load_spec, sens_node)


# -- defect scenarios ---------------------------------------------------------------


def build_model(template, phys):
    """Instantiate the scenario mesh for one physical parameter set.

    Parameter-dependent geometry is confined to the approach prism (whose
    length tracks the defect position) and the defect boxes themselves, so
    tangents seeded on `phys` reach the response through exactly those
    element matrices.
    """
    if template.kind == "crack":
        return _crack_model(*phys)
    if template.kind == "delamination":
        return _delamination_model(*phys)
    if template.kind == "corrosion":
        return _corrosion_model(*phys)
    raise ValueError(f"unknown template kind {template.kind!r}")


def _check_range(template, phys):
    for (lo, hi), p in zip(template.ranges, phys):
        pv = float(value(p))
        pad = 1e-9 * (hi - lo)
        if not lo - pad <= pv <= hi + pad:
            raise GeometryInvalid(
                f"{template.kind} parameter {pv} outside [{lo}, {hi}]")


def _crack_model(x_pos, tip_dx, tip_dy):
    """Through-width crack: box with a seam from the bottom-face mouth."""
    _check_range(CRACK, (x_pos, tip_dx, tip_dy))
    h = HALF_THICKNESS
    frame = _Frame()
    cs = CrossSectionMesh.uniform(-h, h, CS_ELEMS, DEGREE)
    ys = cs.node_y
    blocks, load_spec, if_sens, sens_node = _left_region(frame, cs, "S0")

    xv = float(value(x_pos))
    if_l = frame.alloc([(xv - BOX_HALF, y) for y in ys])
    if_r = frame.alloc([(xv + BOX_HALF, y) for y in ys])

    # box boundary in defect-local coordinates (independent of x_pos)
    xs_half = _line(0.0, BOX_HALF, 2)
    xs_top = _line(-BOX_HALF, BOX_HALF, 1)
    mouth_b = frame.alloc([(xv + x, -h) for x in xs_half[:-1]])
    top_int = frame.alloc([(xv + x, h) for x in xs_top[1:-1]])
    left_int = frame.alloc([(xv + x - BOX_HALF, -h) for x in xs_half[1:-1]])
    mouth_a = frame.alloc([(xv, -h)])
    # walking order: right half of the bottom face, up, across, down, back
    pts, ids = _chain(
        ([(x, -h) for x in xs_half],
         [*mouth_b, if_r[0]]),
        ([(BOX_HALF, y) for y in ys], if_r),
        ([(x, h) for x in xs_top[::-1]],
         [if_r[-1], *top_int[::-1], if_l[-1]]),
        ([(-BOX_HALF, y) for y in ys[::-1]], if_l[::-1]),
        ([(x - BOX_HALF, -h) for x in xs_half],
         [if_l[0], *left_int, mouth_a[0]]),
    )
    mesh = PolygonMesh(dual_array(pts),
                       _chain_elements(2 + CS_ELEMS + 1 + CS_ELEMS + 2,
                                       DEGREE, False),
                       DEGREE, closed=False,
                       double_nodes=[(0, len(pts) - 1)])
    crack_box = PolygonElement(mesh, (tip_dx, tip_dy), PLATE)

    approach = PrismaticElement(cs, PLATE, x_pos - BOX_HALF - SENSOR_X)
    absorber = PrismaticElement(cs, PLATE, None, direction=1)

    blocks += [
        ElementBlock(_naive_prism(approach),
                     _dofs(np.concatenate([if_sens, if_l])),
                     "approach", approach),
        ElementBlock(_naive_polygon(crack_box), _dofs(ids),
                     "crack-box", crack_box),
        ElementBlock(_naive_prism(absorber), _dofs(if_r),
                     "absorber-right", absorber),
    ]
    return _finish(frame, blocks, load_spec, sens_node)


def _delamination_model(x_pos, length):
    """Mid-plane seam of the given length centered at x_pos."""
    _check_range(DELAMINATION, (x_pos, length))
    h = HALF_THICKNESS
    half = DELAM_BOX
    frame = _Frame()
    cs = CrossSectionMesh.uniform(-h, h, CS_ELEMS, DEGREE)
    ys = cs.node_y
    blocks, load_spec, if_sens, sens_node = _left_region(frame, cs, "A0")

    xv = float(value(x_pos))
    if_l = frame.alloc([(xv - half, y) for y in ys])
    if_r = frame.alloc([(xv + half, y) for y in ys])

    # interface under the seam: four elements, node duplicated at y = 0
    cs_mid = CrossSectionMesh.uniform(-h, h, 4, DEGREE, split_at=[0.0])
    ym = cs_mid.node_y
    mid_node, dup_node = cs_mid.double_nodes[0]
    if_mid = frame.alloc([(xv, y) for y in ym])
    lower = if_mid[: mid_node + 1]            # y in [-h, 0], original node
    upper = np.concatenate([[if_mid[dup_node]],
                            if_mid[mid_node + 1: dup_node]])

    xs_box = _line(-half, 0.0, 2)
    l_top = frame.alloc([(xv + x, h) for x in xs_box[1:-1]])
    l_bot = frame.alloc([(xv + x, -h) for x in xs_box[1:-1]])
    xs_box_r = _line(0.0, half, 2)
    r_top = frame.alloc([(xv + x, h) for x in xs_box_r[1:-1]])
    xs_bot_r = _line(0.0, half, 1)
    r_bot = frame.alloc([(xv + x, -h) for x in xs_bot_r[1:-1]])

    ym_up = [ym[dup_node], *ym[mid_node + 1: dup_node]]
    # left box: counterclockwise, seam faces meet at the duplicated node
    pts_l, ids_l = _chain(
        ([(0.0, y) for y in ym_up], upper),
        ([(x, h) for x in xs_box[::-1]],
         [upper[-1], *l_top[::-1], if_l[-1]]),
        ([(-half, y) for y in ys[::-1]], if_l[::-1]),
        ([(x, -h) for x in xs_box],
         [if_l[0], *l_bot, lower[0]]),
        ([(0.0, y) for y in ym[: mid_node + 1]], lower),
    )
    mesh_l = PolygonMesh(dual_array(pts_l),
                         _chain_elements(11, DEGREE, False), DEGREE,
                         closed=False, double_nodes=[(0, len(pts_l) - 1)])
    box_l = PolygonElement(mesh_l, (-length / 2.0, 0.0), PLATE)

    # right box: counterclockwise, walking down the split interface first
    pts_r, ids_r = _chain(
        ([(0.0, y) for y in ym[: mid_node + 1][::-1]], lower[::-1]),
        ([(x, -h) for x in xs_bot_r],
         [lower[0], *r_bot, if_r[0]]),
        ([(half, y) for y in ys], if_r),
        ([(x, h) for x in xs_box_r[::-1]],
         [if_r[-1], *r_top[::-1], upper[-1]]),
        ([(0.0, y) for y in ym_up[::-1]], upper[::-1]),
    )
    mesh_r = PolygonMesh(dual_array(pts_r),
                         _chain_elements(10, DEGREE, False), DEGREE,
                         closed=False, double_nodes=[(0, len(pts_r) - 1)])
    box_r = PolygonElement(mesh_r, (length / 2.0, 0.0), PLATE)

    approach = PrismaticElement(cs, PLATE, x_pos - half - SENSOR_X)
    absorber = PrismaticElement(cs, PLATE, None, direction=1)

    blocks += [
        ElementBlock(_naive_prism(approach),
                     _dofs(np.concatenate([if_sens, if_l])),
                     "approach", approach),
        ElementBlock(_naive_polygon(box_l), _dofs(ids_l),
                     "delam-left-box", box_l),
        ElementBlock(_naive_polygon(box_r), _dofs(ids_r),
                     "delam-right-box", box_r),
        ElementBlock(_naive_prism(absorber), _dofs(if_r),
                     "absorber-right", absorber),
    ]
    return _finish(frame, blocks, load_spec, sens_node)


def _corrosion_model(x_pos, length, depth):
    """Rectangular thickness loss on the top face, corners at scaling centers."""
    _check_range(CORROSION, (x_pos, length, depth))
    h = HALF_THICKNESS
    lip, pad = NOTCH_LIP, NOTCH_PAD
    frame = _Frame()
    cs = CrossSectionMesh.uniform(-h, h, CS_ELEMS, DEGREE)
    ys = cs.node_y
    blocks, load_spec, if_sens, sens_node = _left_region(frame, cs, "S0")

    cs_thin = CrossSectionMesh.uniform(-h, h - depth, 1, DEGREE)
    yt = cs_thin.node_y

    x_s = x_pos - length / 2.0      # left notch wall
    x_e = x_pos + length / 2.0
    xsv, xev = float(value(x_s)), float(value(x_e))

    if_a = frame.alloc([(xsv - pad, y) for y in ys])
    if_b = frame.alloc([(xsv + lip, y) for y in yt])
    if_b2 = frame.alloc([(xsv + 2 * lip, y) for y in yt])
    if_c2 = frame.alloc([(xev - 2 * lip, y) for y in yt])
    if_c = frame.alloc([(xev - lip, y) for y in yt])
    if_d = frame.alloc([(xev + pad, y) for y in ys])

    # left corner box, local to the notch wall at x_s
    xs_top = _line(-pad, 0.0, 1)
    xs_bot = _line(-pad, lip, 1)
    wall_l = frame.alloc([(xsv, h)])
    top_l = frame.alloc([(xsv + x, h) for x in xs_top[1:-1]])
    bot_l = frame.alloc([(xsv + x, -h) for x in xs_bot[1:-1]])
    pts_l, ids_l = _chain(
        ([(x, h) for x in xs_top[::-1]],
         [wall_l[0], *top_l[::-1], if_a[-1]]),
        ([(-pad, y) for y in ys[::-1]], if_a[::-1]),
        ([(x, -h) for x in xs_bot],
         [if_a[0], *bot_l, if_b[0]]),
        ([(lip, y) for y in yt], if_b),
    )
    mesh_l = PolygonMesh(dual_array(pts_l),
                         _chain_elements(6, DEGREE, False), DEGREE,
                         closed=False)
    corner_l = PolygonElement(mesh_l, (0.0, h - depth), PLATE)

    # right corner box, local to x_e; mirrored walking order stays ccw
    xs_top_r = _line(0.0, pad, 1)
    xs_bot_r = _line(-lip, pad, 1)
    wall_r = frame.alloc([(xev, h)])
    top_r = frame.alloc([(xev + x, h) for x in xs_top_r[1:-1]])
    bot_r = frame.alloc([(xev + x, -h) for x in xs_bot_r[1:-1]])
    pts_r, ids_r = _chain(
        ([(-lip, y) for y in yt[::-1]], if_c[::-1]),
        ([(x, -h) for x in xs_bot_r],
         [if_c[0], *bot_r, if_d[0]]),
        ([(pad, y) for y in ys], if_d),
        ([(x, h) for x in xs_top_r[::-1]],
         [if_d[-1], *top_r[::-1], wall_r[0]]),
    )
    mesh_r = PolygonMesh(dual_array(pts_r),
                         _chain_elements(6, DEGREE, False), DEGREE,
                         closed=False)
    corner_r = PolygonElement(mesh_r, (0.0, h - depth), PLATE)

    approach = PrismaticElement(cs, PLATE, x_s - pad - SENSOR_X)
    thin_in = PrismaticElement(cs_thin, PLATE, lip)
    thin_mid = PrismaticElement(cs_thin, PLATE, length - 4.0 * lip)
    thin_out = PrismaticElement(cs_thin, PLATE, lip)
    absorber = PrismaticElement(cs, PLATE, None, direction=1)

    blocks += [
        ElementBlock(_naive_prism(approach),
                     _dofs(np.concatenate([if_sens, if_a])),
                     "approach", approach),
        ElementBlock(_naive_polygon(corner_l), _dofs(ids_l),
                     "notch-left-box", corner_l),
        ElementBlock(_naive_prism(thin_in),
                     _dofs(np.concatenate([if_b, if_b2])),
                     "thin-lead", thin_in),
        ElementBlock(_naive_prism(thin_mid),
                     _dofs(np.concatenate([if_b2, if_c2])),
                     "thin-mid", thin_mid),
        ElementBlock(_naive_prism(thin_out),
                     _dofs(np.concatenate([if_c2, if_c])),
                     "thin-tail", thin_out),
        ElementBlock(_naive_polygon(corner_r), _dofs(ids_r),
                     "notch-right-box", corner_r),
        ElementBlock(_naive_prism(absorber), _dofs(if_d),
                     "absorber-right", absorber),
    ]
    return _finish(frame, blocks, load_spec, sens_node)
