"""Observation -> network input vector.

Layout (``FEATURE_NAMES``): scenario one-hot, ego route-relative state, then
one block per other vehicle (ado, lead). A block is all zeros when that car
is not visible, or when it is more than a car length behind the ego and
moving away from it: the experts ignore such cars, and dropping them keeps a
clone's input in familiar territory after a threat has been passed. The
scalar path (used in closed-loop rollouts) and the batch path (used for
training sets) compute the same quantities and agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .experts import PURSUIT_LOOKAHEAD
from .scenarios import ALL_SCENARIOS, Catalog, Route, ScenarioId
from .sim import OBS_FIELDS, Observation

_OTHER = ("visible", "fwd", "lat", "x", "y", "speed", "sin_dh", "cos_dh", "ds", "dl", "conflict_dist")
FEATURE_NAMES = tuple(
    [f"scenario_{s.value}" for s in ALL_SCENARIOS]
    + ["ego_s", "ego_l", "sin_bearing", "cos_bearing", "ego_speed", "stop_dist"]
    + [f"{who}_{f}" for who in ("ado", "lead") for f in _OTHER]
)
FEATURE_DIM = len(FEATURE_NAMES)
_N_SCEN = len(ALL_SCENARIOS)
_EGO0 = _N_SCEN
_BLOCK0 = _N_SCEN + 6
_BLOCK = len(_OTHER)
_COL = {f: i for i, f in enumerate(OBS_FIELDS)}
BEHIND_DISTANCE = 4.4  # one car length


def receding_behind(dx, dy, ch, sh, rvx, rvy):
    """Other car behind the ego by more than a car length, with the gap opening."""
    return (dx * ch + dy * sh < -BEHIND_DISTANCE) & (dx * rvx + dy * rvy > 0.0)


def obs_features(obs: Observation, sid: ScenarioId, route: Route) -> np.ndarray:
    out = [0.0] * FEATURE_DIM
    out[sid.index] = 1.0
    s, l, _ = route.project(obs.ego_x, obs.ego_y)
    tx, ty, _ = route.point_at(s + PURSUIT_LOOKAHEAD)
    alpha = kernels.wrap_angle(math.atan2(ty - obs.ego_y, tx - obs.ego_x) - obs.ego_heading)
    c0 = route.conflicts[0] if route.conflicts else None
    out[_EGO0:_EGO0 + 6] = [s / 100.0, l / 4.0, math.sin(alpha), math.cos(alpha), obs.ego_speed / 10.0,
                            min(max((c0.stop_s - s) / 30.0, -1.0), 2.0) if c0 is not None else 0.0]
    ch, sh = math.cos(obs.ego_heading), math.sin(obs.ego_heading)
    for k, (vis, ox, oy, ov, oh) in enumerate((
            (obs.ado_visible, obs.ado_x, obs.ado_y, obs.ado_speed, obs.ado_heading),
            (obs.lead_visible, obs.lead_x, obs.lead_y, obs.lead_speed, obs.lead_heading))):
        if not vis:
            continue
        dx, dy = ox - obs.ego_x, oy - obs.ego_y
        if receding_behind(dx, dy, ch, sh, ov * math.cos(oh) - obs.ego_speed * ch,
                           ov * math.sin(oh) - obs.ego_speed * sh):
            continue
        so, lo, _ = route.project(ox, oy)
        dh = oh - obs.ego_heading
        b = _BLOCK0 + k * _BLOCK
        out[b:b + _BLOCK] = [1.0, (dx * ch + dy * sh) / 30.0, (-dx * sh + dy * ch) / 30.0, ox / 50.0, oy / 50.0,
                             ov / 10.0, math.sin(dh), math.cos(dh), (so - s) / 30.0, lo / 4.0,
                             c0.ado_distance(ox, oy) / 30.0 if c0 is not None else 0.0]
    return np.array(out)


def batch_features(obs: np.ndarray, scenario_idx: np.ndarray, catalog: Catalog) -> np.ndarray:
    """Vectorised ``obs_features`` over dataset rows (float64 result)."""
    obs = np.asarray(obs, dtype=np.float64)
    scenario_idx = np.asarray(scenario_idx)
    K = obs.shape[0]
    X = np.zeros((K, FEATURE_DIM))
    for sid in ALL_SCENARIOS:
        rows = np.nonzero(scenario_idx == sid.index)[0]
        if rows.size == 0:
            continue
        o = obs[rows]
        route = catalog[sid].route
        Xs = np.zeros((rows.size, FEATURE_DIM))
        Xs[:, sid.index] = 1.0
        ex, ey, eh, ev = (o[:, _COL[f]] for f in ("ego_x", "ego_y", "ego_heading", "ego_speed"))
        s, l, _ = kernels.project_polyline_batch(ex, ey, route.points, route.cum)
        look = s + PURSUIT_LOOKAHEAD
        i = np.clip(np.searchsorted(route.cum, look, side="right") - 1, 0, len(route.cum) - 2)
        p0, p1 = route.points[i], route.points[i + 1]
        seg = (route.cum[i + 1] - route.cum[i])[:, None]
        hv = (p1 - p0) / seg
        tgt = p0 + hv * (look - route.cum[i])[:, None]
        alpha = np.arctan2(tgt[:, 1] - ey, tgt[:, 0] - ex) - eh
        alpha = np.mod(alpha + np.pi, 2 * np.pi) - np.pi
        c0 = route.conflicts[0] if route.conflicts else None
        Xs[:, _EGO0] = s / 100.0
        Xs[:, _EGO0 + 1] = l / 4.0
        Xs[:, _EGO0 + 2] = np.sin(alpha)
        Xs[:, _EGO0 + 3] = np.cos(alpha)
        Xs[:, _EGO0 + 4] = ev / 10.0
        if c0 is not None:
            Xs[:, _EGO0 + 5] = np.clip((c0.stop_s - s) / 30.0, -1.0, 2.0)
        ch, sh = np.cos(eh), np.sin(eh)
        for k, who in enumerate(("ado", "lead")):
            vis = o[:, _COL[f"{who}_visible"]] != 0
            if not vis.any():
                continue
            ox, oy, ov, oh = (o[:, _COL[f"{who}_{f}"]] for f in ("x", "y", "speed", "heading"))
            dx, dy = ox - ex, oy - ey
            vis &= ~receding_behind(dx, dy, ch, sh, ov * np.cos(oh) - ev * ch, ov * np.sin(oh) - ev * sh)
            so, lo, _ = kernels.project_polyline_batch(ox, oy, route.points, route.cum)
            dh = oh - eh
            cols = [np.ones(rows.size), (dx * ch + dy * sh) / 30.0, (-dx * sh + dy * ch) / 30.0, ox / 50.0,
                    oy / 50.0, ov / 10.0, np.sin(dh), np.cos(dh), (so - s) / 30.0, lo / 4.0,
                    ((c0.x - ox) * math.cos(c0.lane_heading) + (c0.y - oy) * math.sin(c0.lane_heading)) / 30.0
                    if c0 is not None else np.zeros(rows.size)]
            b = _BLOCK0 + k * _BLOCK
            block = np.stack(cols, axis=1)
            block[~vis] = 0.0
            Xs[:, b:b + _BLOCK] = block
        X[rows] = Xs
    return X
