"""PPO training with the composite shaped reward and joint goal loss.

The runner steps a batch of worker environments synchronously in one
process: raycasts, map integration and descriptor extraction are vectorized
across workers, so "parallel" rollout collection stays fully deterministic.
Episodes auto-reset mid-rollout; the GRU state is zeroed at episode starts
and detached at rollout boundaries.

Each update replays full rollout sequences in worker minibatches,
backpropagating through all recurrent steps, with the clipped surrogate,
a value loss, an entropy bonus and the squared goal-prediction error
(weighted by lambda_goal) in one objective. Learning rate and clip range
decay linearly over the configured number of updates.

The expert used for the imitation reward indicator follows the goal-rooted
shortest-path field (recomputing A* from the agent cell every step gives the
same optimal costs; descending the precomputed field is just faster), so
"matches the expert" means: STOP inside the success radius, otherwise face
the next waypoint of a shortest path and move along it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import explore as EX
from . import goalpred as GP
from . import nn
from . import policy as PL
from . import raydesc as RD
from .autodiff import Tensor
from .config import GaeConfig, PpoConfig, RewardConfig, RunConfig
from .dataset import Dataset, LoadedEpisode
from .grid import Action, AgentPose, OccupancyGrid, cast_rays_batched, \
    distance_field, ray_angles, wrap_angle
from .metrics import EpisodeRecord, aggregate, write_results

RANDOM_POLICY = "random"
FULL_POLICY = "policy"


# -- reward ---------------------------------------------------------------------

def shaped_reward(closer: bool, matched_expert: bool, success: bool,
                  cfg: RewardConfig) -> float:
    """Weighted sum of the three event indicators."""
    return (cfg.r_d if closer else 0.0) + (cfg.r_i if matched_expert else 0.0) \
        + (cfg.r_s if success else 0.0)


# -- GAE -----------------------------------------------------------------------

def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: np.ndarray, cfg: GaeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Standard backward recursion over (T, B) arrays.

    delta_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t;
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    nxt = np.zeros(rewards.shape[1:], dtype=np.float64)
    v_next = np.asarray(bootstrap, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + cfg.gamma * v_next * not_done - values[t]
        nxt = delta + cfg.gamma * cfg.lam * not_done * nxt
        adv[t] = nxt
        v_next = values[t]
    return adv, adv + values


# -- expert ---------------------------------------------------------------------

_NEIGHBORS = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


def expert_action(grid_cells: np.ndarray, field_m: np.ndarray, pose: AgentPose,
                  goal: tuple[float, float], resolution: float,
                  forward_step: float, turn_angle: float,
                  success_radius: float) -> Action:
    """Shortest-path-following action from the goal-rooted distance field."""
    if math.hypot(pose.x - goal[0], pose.y - goal[1]) <= success_radius:
        return Action.STOP
    h, w = field_m.shape
    r = int(pose.y / resolution)
    c = int(pose.x / resolution)
    cur = (r, c)
    for _ in range(4):
        best, best_d = cur, field_m[cur]
        rr, cc = cur
        for dr, dc in _NEIGHBORS:
            nr, nc = rr + dr, cc + dc
            if not (0 <= nr < h and 0 <= nc < w) or grid_cells[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (grid_cells[rr + dr, cc] or grid_cells[rr, cc + dc]):
                continue
            if field_m[nr, nc] < best_d - 1e-12:
                best, best_d = (nr, nc), field_m[nr, nc]
        if best == cur:
            break
        cur = best
    if cur == (r, c):
        tx, ty = goal
    else:
        tx = (cur[1] + 0.5) * resolution
        ty = (cur[0] + 0.5) * resolution
    desired = math.atan2(ty - pose.y, tx - pose.x)
    err = math.remainder(desired - pose.heading, 2 * math.pi)
    if abs(err) <= 0.6 * turn_angle:
        return Action.MOVE_FORWARD
    return Action.TURN_LEFT if err < 0 else Action.TURN_RIGHT


def expert_action_for(assets: "EpisodeAssets", pose: AgentPose) -> Action:
    """Expert action from an episode's cached planning field."""
    spec = assets.ep.spec
    return expert_action(assets.expert_cells, assets.expert_field, pose, spec.goal,
                         spec.grid.resolution, spec.actions.forward_step,
                         spec.actions.turn_angle, spec.success_radius)


# -- vectorized episode runner -----------------------------------------------------


class EpisodeAssets:
    """Per-episode derived data, cached across resets."""

    def __init__(self, ep: LoadedEpisode, run_cfg: RunConfig):
        self.ep = ep
        grid = ep.spec.grid
        goal_cell = grid.cell_of(*ep.spec.goal)
        self.field = distance_field(grid, goal_cell)
        # the expert plans on a one-cell-inflated grid so its descent keeps
        # clearance from walls (the forward stride spans several cells);
        # falls back to the true field when inflation blocks the route
        from .worldgen import dilate
        inflated_cells = dilate(grid.cells, 1.0)
        inflated_cells[goal_cell] = False
        inflated = OccupancyGrid(inflated_cells, grid.resolution)
        expert_field = distance_field(inflated, goal_cell)
        start_cell = grid.cell_of(ep.spec.start.x, ep.spec.start.y)
        if np.isfinite(expert_field[start_cell]):
            self.expert_field = expert_field
            self.expert_cells = inflated_cells
        else:
            self.expert_field = self.field
            self.expert_cells = grid.cells
        self.sketch_pooled = PL.pool_raster(ep.sketch.pixels, run_cfg.model.pool)
        desc = RD.extract(ep.sketch.pixels, run_cfg.model.m1, run_cfg.model.m2,
                          run_cfg.model.n_dirs, run_cfg.pipeline.ink_threshold,
                          RD.SKETCH)
        self.rows_s = desc.keypoint_rows().astype(np.float32)
        size = ep.sketch.pixels.shape[1]
        marker = (ep.sketch.goal_marker[0] / size, ep.sketch.goal_marker[1] / size)
        self.i_star = GP.nearest_keypoint(marker, desc.coords)
        gx, gy = EX.world_to_raster_px(ep.spec.goal[0], ep.spec.goal[1],
                                       ep.sketch, ep.spec.start)
        self.gstar = np.array([gx / size, gy / size], dtype=np.float32)
        self.coords = desc.coords.astype(np.float32)


@dataclass
class FinishedEpisode:
    record: EpisodeRecord
    reward_sum: float
    goal_errors: list[float]


class VecRunner:
    """Synchronous batch of environments sharing one policy."""

    def __init__(self, episodes: list[LoadedEpisode], run_cfg: RunConfig,
                 store: nn.ParameterStore, n_workers: int, seed: int,
                 mode: str = PL.SAMPLE, policy_kind: str = FULL_POLICY,
                 auto_reset: bool = True, collect_traces: bool = False):
        if not episodes:
            raise ValueError("runner needs at least one episode")
        self.run_cfg = run_cfg
        self.store = store
        self.mode = mode
        self.policy_kind = policy_kind
        self.auto_reset = auto_reset
        self.collect_traces = collect_traces
        self.n_workers = min(n_workers, len(episodes)) if not auto_reset else n_workers
        self.rng = np.random.default_rng(seed)
        self.expert_eps = run_cfg.ppo.expert_eps
        self.assets_cache: dict[str, EpisodeAssets] = {}
        self.episodes = episodes
        order = self.rng.permutation(len(episodes))
        self.queue = [episodes[i] for i in order]
        self.next_idx = 0

        grids = {}
        for ep in episodes:
            grids.setdefault(ep.entry.world_id, ep.spec.grid)
        self.world_ids = list(grids)
        h_max = max(g.height for g in grids.values())
        w_max = max(g.width for g in grids.values())
        self.grid_stack = np.ones((len(grids), h_max, w_max), dtype=bool)
        for i, wid in enumerate(self.world_ids):
            g = grids[wid]
            self.grid_stack[i, :g.height, :g.width] = g.cells
        self.world_slot = {wid: i for i, wid in enumerate(self.world_ids)}

        b = self.n_workers
        self.emaps = np.zeros((b, h_max, w_max), dtype=np.uint8)
        self.assets: list[EpisodeAssets] = [None] * b
        self.poses: list[AgentPose] = [None] * b
        self.grid_idx = np.zeros(b, dtype=np.intp)
        self.step_index = np.zeros(b, dtype=np.int64)
        self.path_len = np.zeros(b)
        self.reward_sum = np.zeros(b)
        self.best_geo = np.zeros(b)
        self.active = np.ones(b, dtype=bool)
        self.obs_rays = np.zeros((b, run_cfg.sensor.n_rays))
        self.traces: list[dict] = [dict() for _ in range(b)]
        self.hidden = np.zeros((b, run_cfg.model.gru_hidden), dtype=store.dtype)
        self.sketch_feat_cache: dict[str, np.ndarray] = {}
        self.finished: list[FinishedEpisode] = []
        self.env_steps = 0
        for w in range(b):
            self._reset_worker(w)

    # -- episode lifecycle ------------------------------------------------------
    def _next_episode(self) -> LoadedEpisode:
        ep = self.queue[self.next_idx % len(self.queue)]
        self.next_idx += 1
        return ep

    def _assets(self, ep: LoadedEpisode) -> EpisodeAssets:
        key = ep.episode_id + ":" + ep.abstraction
        if key not in self.assets_cache:
            self.assets_cache[key] = EpisodeAssets(ep, self.run_cfg)
        return self.assets_cache[key]

    def _reset_worker(self, w: int) -> None:
        ep = self._next_episode()
        assets = self._assets(ep)
        self.assets[w] = assets
        self.poses[w] = ep.spec.start
        self.grid_idx[w] = self.world_slot[ep.entry.world_id]
        self.emaps[w] = EX.UNKNOWN
        self.step_index[w] = 0
        self.path_len[w] = 0.0
        self.reward_sum[w] = 0.0
        start_cell = ep.spec.grid.cell_of(ep.spec.start.x, ep.spec.start.y)
        self.best_geo[w] = assets.field[start_cell]
        self.hidden[w] = 0.0
        self.traces[w] = {"poses": [(ep.spec.start.x, ep.spec.start.y,
                                     ep.spec.start.heading)],
                          "actions": [], "goals": []}
        self._sense(np.array([w]))

    def _sense(self, workers: np.ndarray) -> None:
        """Render depth for the given workers and fold it into their maps."""
        cfg = self.run_cfg.sensor
        res = self.run_cfg.world.resolution
        n = cfg.n_rays
        all_angles = []
        xs, ys, gidx, midx = [], [], [], []
        for w in workers:
            pose = self.poses[w]
            all_angles.append(ray_angles(pose.heading, n, cfg.fov))
            xs.append(np.full(n, pose.x / res))
            ys.append(np.full(n, pose.y / res))
            gidx.append(np.full(n, self.grid_idx[w], dtype=np.intp))
            midx.append(np.full(n, w, dtype=np.intp))
        angles = np.concatenate(all_angles)
        xs = np.concatenate(xs)
        ys = np.concatenate(ys)
        dists = cast_rays_batched(self.grid_stack, np.concatenate(gidx),
                                  xs, ys, angles, cfg.max_range / res)
        EX.mark_rays(self.emaps, np.concatenate(midx), xs, ys, angles, dists,
                     cfg.max_range / res)
        for i, w in enumerate(workers):
            self.obs_rays[w] = dists[i * n:(i + 1) * n] * res

    # -- model inputs -------------------------------------------------------------
    def _sketch_feat(self, w: int) -> np.ndarray:
        key = self.assets[w].ep.episode_id + ":" + self.assets[w].ep.abstraction
        if key not in self.sketch_feat_cache:
            with ad.no_grad():
                t = PL.sketch_feature(self.assets[w].sketch_pooled, self.store,
                                      self.run_cfg.model)
            self.sketch_feat_cache[key] = t.data[0]
        return self.sketch_feat_cache[key]

    def observation_arrays(self) -> dict:
        """Everything the policy needs for the current state of every worker."""
        mcfg = self.run_cfg.model
        b = self.n_workers
        size = mcfg.raster_size
        depth = self.obs_rays / self.run_cfg.sensor.max_range
        epooled = np.zeros((b, mcfg.enc_size, mcfg.enc_size), dtype=np.float32)
        rows_e = np.zeros((b, mcfg.m1 * mcfg.m2, mcfg.n_dirs + 2), dtype=np.float32)
        pose_vec = np.zeros((b, 4), dtype=np.float32)
        sfeat = np.zeros((b, mcfg.feat_dim), dtype=np.float32)
        rasters = np.zeros((b, size, size), dtype=np.uint8)
        for w in range(b):
            assets = self.assets[w]
            ep = assets.ep
            emap = EX.ExplorationMap(states=self.emaps[w], resolution=ep.spec.grid.resolution)
            raster = EX.to_raster(emap, ep.sketch, ep.spec.start)
            rasters[w] = raster
            epooled[w] = PL.pool_raster(raster, mcfg.pool)
            px, py = EX.world_to_raster_px(self.poses[w].x, self.poses[w].y,
                                           ep.sketch, ep.spec.start)
            pose_vec[w] = PL.pose_vector(px, py, self.poses[w].heading, size)
            sfeat[w] = self._sketch_feat(w)
        if mcfg.use_goal_predictor:
            descs = RD.extract_batch(rasters, mcfg.m1, mcfg.m2, mcfg.n_dirs,
                                     self.run_cfg.pipeline.ink_threshold,
                                     RD.EXPLORATION)
            for w in range(b):
                rows_e[w] = descs[w].keypoint_rows()
        rows_s = np.stack([self.assets[w].rows_s for w in range(b)])
        onehot = np.zeros((b, mcfg.m1 * mcfg.m2, 1), dtype=np.float32)
        for w in range(b):
            onehot[w, self.assets[w].i_star, 0] = 1.0
        gstar = np.stack([self.assets[w].gstar for w in range(b)])
        return dict(depth=depth.astype(np.float32), epooled=epooled,
                    rows_e=rows_e, rows_s=rows_s, onehot=onehot,
                    pose_vec=pose_vec, sketch_feat=sfeat, gstar=gstar)

    def policy_forward(self, obs: dict) -> dict:
        """No-grad forward: goal prediction, logits, value for every worker."""
        mcfg = self.run_cfg.model
        dt = self.store.dtype
        with ad.no_grad():
            if mcfg.use_goal_predictor:
                _, goal_t = GP.predict_t(
                    Tensor(obs["rows_s"].astype(dt)), Tensor(obs["onehot"].astype(dt)),
                    Tensor(obs["rows_e"].astype(dt)),
                    Tensor(self.assets[0].coords.astype(dt)),
                    self.store, mcfg.goal_cfg)
                goal = goal_t.data
            else:
                goal = np.zeros((self.n_workers, 2), dtype=dt)
            bundle = PL.encode(obs["depth"], obs["epooled"], goal, self.store, mcfg,
                               Tensor(obs["sketch_feat"].astype(dt)), obs["pose_vec"])
            h, logits, value = PL.step_policy(Tensor(self.hidden.copy()), bundle,
                                              self.store, mcfg)
        return dict(goal=goal, logits=logits.data, value=value.data, hidden=h.data)

    def act(self, fwd: dict) -> tuple[np.ndarray, np.ndarray]:
        """Actions plus their log-probability under the behavior policy.

        Training rollouts draw from a mixture of the policy, a uniform
        floor, and the shortest-path expert: the floor keeps every action
        alive, the expert injects the rare decisive events (above all,
        stopping inside the success radius) that on-policy sampling starves
        PPO of. The recorded behavior density is the mixture's, so the
        importance ratios in the update stay exact.
        """
        b = self.n_workers
        sampling = self.mode == PL.SAMPLE and self.policy_kind == FULL_POLICY
        eps_u = self.run_cfg.ppo.explore_eps if sampling else 0.0
        eps_x = self.expert_eps if sampling else 0.0
        logits = fwd["logits"]
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        behavior = (1.0 - eps_u - eps_x) * p + eps_u / PL.N_ACTIONS
        self._expert_now = np.full(b, -1, dtype=np.int64)
        if self.policy_kind == FULL_POLICY:
            for w in range(b):
                if self.active[w]:
                    self._expert_now[w] = int(expert_action_for(self.assets[w],
                                                                self.poses[w]))
        if eps_x > 0:
            for w in range(b):
                if self._expert_now[w] >= 0:
                    behavior[w, self._expert_now[w]] += eps_x
        actions = np.zeros(b, dtype=np.int64)
        for w in range(b):
            if not self.active[w]:
                actions[w] = int(Action.STOP)
            elif self.policy_kind == RANDOM_POLICY:
                actions[w] = int(self.rng.integers(PL.N_ACTIONS))
            elif self.mode == PL.GREEDY:
                actions[w] = PL.sample_action(logits[w], PL.GREEDY)
            else:
                bw = behavior[w] / behavior[w].sum()
                actions[w] = int(self.rng.choice(PL.N_ACTIONS, p=bw))
        logp = np.log(np.maximum(behavior[np.arange(b), actions], 1e-30))
        return actions, logp

    def step(self, actions: np.ndarray, fwd: dict) -> dict:
        """Advance every active worker one action; returns the transition batch."""
        run = self.run_cfg
        res = run.world.resolution
        b = self.n_workers
        rewards = np.zeros(b)
        dones = np.zeros(b, dtype=bool)
        successes = np.zeros(b, dtype=bool)
        expert_match = np.zeros(b, dtype=bool)
        closer = np.zeros(b, dtype=bool)

        # forward-collision rays for all movers in one batched cast
        movers = [w for w in range(b)
                  if self.active[w] and actions[w] == int(Action.MOVE_FORWARD)]
        hits = {}
        if movers:
            xs = np.array([self.poses[w].x / res for w in movers])
            ys = np.array([self.poses[w].y / res for w in movers])
            angs = np.array([self.poses[w].heading for w in movers])
            gidx = self.grid_idx[movers]
            d = cast_rays_batched(self.grid_stack, gidx, xs, ys, angs,
                                  (run.actions.forward_step + res) / res) * res
            hits = dict(zip(movers, d))

        sensed = []
        for w in range(b):
            if not self.active[w]:
                continue
            assets = self.assets[w]
            spec = assets.ep.spec
            pose = self.poses[w]
            cell_before = spec.grid.cell_of(pose.x, pose.y)
            cached = getattr(self, "_expert_now", None)
            exp = Action(int(cached[w])) if cached is not None and cached[w] >= 0 \
                else expert_action_for(assets, pose)
            act = Action(int(actions[w]))
            new_pose = pose
            if act == Action.TURN_LEFT:
                new_pose = AgentPose(pose.x, pose.y,
                                     wrap_angle(pose.heading - run.actions.turn_angle))
            elif act == Action.TURN_RIGHT:
                new_pose = AgentPose(pose.x, pose.y,
                                     wrap_angle(pose.heading + run.actions.turn_angle))
            elif act == Action.MOVE_FORWARD:
                if hits[w] > run.actions.forward_step:
                    dx, dy = pose.direction()
                    cand = AgentPose(pose.x + run.actions.forward_step * dx,
                                     pose.y + run.actions.forward_step * dy,
                                     pose.heading)
                    # same rounding guard as grid.step
                    if spec.grid.is_free_point(cand.x, cand.y):
                        new_pose = cand
            done = False
            success = False
            if act == Action.STOP:
                done = True
                success = (math.hypot(pose.x - spec.goal[0], pose.y - spec.goal[1])
                           <= spec.success_radius)
            self.step_index[w] += 1
            if self.step_index[w] >= spec.max_steps:
                done = True
            self.path_len[w] += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
            cell_after = spec.grid.cell_of(new_pose.x, new_pose.y)
            # progress is credited against the episode's best geodesic so far
            # (a ratchet): a literal step-to-step comparison lets a policy farm
            # the progress reward forever by oscillating toward and away
            closer[w] = assets.field[cell_after] < self.best_geo[w] - 1e-9
            self.best_geo[w] = min(self.best_geo[w], float(assets.field[cell_after]))
            expert_match[w] = act == exp
            successes[w] = success
            rewards[w] = shaped_reward(bool(closer[w]), bool(expert_match[w]),
                                       success, run.reward)
            self.reward_sum[w] += rewards[w]
            self.poses[w] = new_pose
            dones[w] = done
            self.env_steps += 1
            if self.collect_traces:
                tr = self.traces[w]
                tr["poses"].append((new_pose.x, new_pose.y, new_pose.heading))
                tr["actions"].append(int(act))
                tr["goals"].append((float(fwd["goal"][w][0]), float(fwd["goal"][w][1])))
            if not done and new_pose != pose:
                sensed.append(w)
            elif not done:
                # turns still refresh the depth fan (heading changed)
                sensed.append(w)
        self.hidden = fwd["hidden"].copy()
        if sensed:
            self._sense(np.array(sensed))

        for w in range(b):
            if self.active[w] and dones[w]:
                self._finish_episode(w, bool(successes[w]))
                if self.auto_reset:
                    self._reset_worker(w)
                else:
                    self.active[w] = False
        return dict(rewards=rewards, dones=dones.astype(np.float64),
                    successes=successes, closer=closer, expert_match=expert_match)

    def _finish_episode(self, w: int, success: bool) -> None:
        assets = self.assets[w]
        spec = assets.ep.spec
        pose = self.poses[w]
        cell = spec.grid.cell_of(pose.x, pose.y)
        start_cell = spec.grid.cell_of(spec.start.x, spec.start.y)
        d0 = float(assets.field[start_cell])
        dT = float(assets.field[cell])
        tr = self.traces[w]
        goal_errors = [float(np.hypot(g[0] - assets.gstar[0], g[1] - assets.gstar[1]))
                       for g in tr.get("goals", [])]
        record = EpisodeRecord(
            episode_id=assets.ep.episode_id,
            split=assets.ep.entry.split,
            success=success,
            path_length=float(self.path_len[w]),
            shortest_length=d0,
            initial_geodesic=d0,
            final_geodesic=dT,
            steps=int(self.step_index[w]),
            poses=tr.get("poses", []) if self.collect_traces else [],
            actions=tr.get("actions", []) if self.collect_traces else [],
            goal_preds=tr.get("goals", []) if self.collect_traces else [],
        )
        self.finished.append(FinishedEpisode(record=record,
                                             reward_sum=float(self.reward_sum[w]),
                                             goal_errors=goal_errors))


# -- rollout buffer ----------------------------------------------------------------


@dataclass
class Rollout:
    depth: np.ndarray           # (T, B, n_rays) f32
    epooled: np.ndarray         # (T, B, s, s) f32
    rows_e: np.ndarray          # (T, B, M, N+2) f32
    rows_s: np.ndarray          # (T, B, M, N+2) f32
    onehot: np.ndarray          # (T, B, M, 1) f32
    pose_vec: np.ndarray        # (T, B, 4) f32
    sketch_key: np.ndarray      # (T, B) int32 into sketch_pool
    sketch_pool: np.ndarray     # (K, s, s) f32
    gstar: np.ndarray           # (T, B, 2) f32
    goals: np.ndarray           # (T, B, 2) f32 behavior-time goal estimates
    actions: np.ndarray         # (T, B) i64
    expert: np.ndarray          # (T, B) i64 expert action at each state
    logp: np.ndarray            # (T, B) f64
    values: np.ndarray          # (T, B) f64
    rewards: np.ndarray         # (T, B) f64
    dones: np.ndarray           # (T, B) f64
    h0: np.ndarray              # (B, H)
    bootstrap: np.ndarray       # (B,)
    coords: np.ndarray          # (M, 2)


def collect_rollout(runner: VecRunner, t_len: int) -> Rollout:
    b = runner.n_workers
    mcfg = runner.run_cfg.model
    h0 = runner.hidden.copy()
    sketch_pool: list[np.ndarray] = []
    sketch_ids: dict[str, int] = {}
    store = {name: [] for name in
             ("depth", "epooled", "rows_e", "rows_s", "onehot", "pose_vec",
              "sketch_key", "gstar", "goals", "actions", "expert", "logp",
              "values", "rewards", "dones")}
    for _ in range(t_len):
        obs = runner.observation_arrays()
        fwd = runner.policy_forward(obs)
        actions, logp_behavior = runner.act(fwd)
        keys = np.zeros(b, dtype=np.int32)
        for w in range(b):
            kid = runner.assets[w].ep.episode_id + ":" + runner.assets[w].ep.abstraction
            if kid not in sketch_ids:
                sketch_ids[kid] = len(sketch_pool)
                sketch_pool.append(runner.assets[w].sketch_pooled.astype(np.float32))
            keys[w] = sketch_ids[kid]
        out = runner.step(actions, fwd)
        store["depth"].append(obs["depth"])
        store["epooled"].append(obs["epooled"])
        store["rows_e"].append(obs["rows_e"])
        store["rows_s"].append(obs["rows_s"])
        store["onehot"].append(obs["onehot"])
        store["pose_vec"].append(obs["pose_vec"])
        store["sketch_key"].append(keys)
        store["gstar"].append(obs["gstar"])
        store["goals"].append(fwd["goal"].astype(np.float32))
        store["actions"].append(actions)
        store["expert"].append(runner._expert_now.copy())
        store["logp"].append(logp_behavior)
        store["values"].append(fwd["value"])
        store["rewards"].append(out["rewards"])
        store["dones"].append(out["dones"])
    obs = runner.observation_arrays()
    fwd = runner.policy_forward(obs)
    return Rollout(
        depth=np.stack(store["depth"]), epooled=np.stack(store["epooled"]),
        rows_e=np.stack(store["rows_e"]), rows_s=np.stack(store["rows_s"]),
        onehot=np.stack(store["onehot"]), pose_vec=np.stack(store["pose_vec"]),
        sketch_key=np.stack(store["sketch_key"]),
        sketch_pool=np.stack(sketch_pool),
        gstar=np.stack(store["gstar"]), goals=np.stack(store["goals"]),
        actions=np.stack(store["actions"]), expert=np.stack(store["expert"]),
        logp=np.stack(store["logp"]).astype(np.float64),
        values=np.stack(store["values"]).astype(np.float64),
        rewards=np.stack(store["rewards"]), dones=np.stack(store["dones"]),
        h0=h0, bootstrap=fwd["value"].astype(np.float64),
        coords=runner.assets[0].coords.astype(np.float32))


# -- PPO update --------------------------------------------------------------------


@dataclass
class LossReport:
    total: float
    policy: float
    value: float
    entropy: float
    goal: float
    grad_norm: float


def ppo_update(rollout: Rollout, store: nn.ParameterStore, opt: nn.AdamW,
               run_cfg: RunConfig, lr: float, clip: float,
               update_rng: np.random.Generator,
               goal_chunk: int = 256, objective: str = "ppo") -> LossReport:
    """One full update: multiple epochs over worker-sequence minibatches.

    Only the GRU is inherently sequential, so everything else (goal
    prediction, the conv encoders, the action/value heads and the loss
    arithmetic) is batched over all timesteps of the minibatch at once in
    time-major order; the recurrent loop reduces to a mask, a row gather and
    one fused GRU node per step.

    objective "ppo" is the clipped-surrogate update; "imitation" replaces
    the surrogate with cross-entropy against the expert's action at each
    stored state (the bootstrap phase), keeping the value and goal terms.
    """
    ppo = run_cfg.ppo
    mcfg = run_cfg.model
    t_len, b = rollout.actions.shape
    adv, returns = compute_gae(rollout.rewards, rollout.values, rollout.dones,
                               rollout.bootstrap, run_cfg.gae)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
    dt = store.dtype
    coords_t = Tensor(rollout.coords.astype(dt))
    totals = dict(total=0.0, policy=0.0, value=0.0, entropy=0.0, goal=0.0,
                  grad_norm=0.0)
    n_batches = 0

    def flat(arr, mb):
        """(T, B, ...) -> (T*len(mb), ...) in time-major order."""
        sub = arr[:, mb]
        return sub.reshape(t_len * len(mb), *arr.shape[2:])

    for _ in range(ppo.epochs_per_update):
        perm = update_rng.permutation(b)
        for start in range(0, b, ppo.minibatch_workers):
            mb = perm[start:start + ppo.minibatch_workers]
            if len(mb) == 0:
                continue
            bm = len(mb)
            n = float(t_len * bm)
            store.zero_grad()

            if mcfg.use_goal_predictor:
                goal_parts = []
                rows_s = flat(rollout.rows_s, mb).astype(dt)
                onehot = flat(rollout.onehot, mb).astype(dt)
                rows_e = flat(rollout.rows_e, mb).astype(dt)
                for c0 in range(0, rows_s.shape[0], goal_chunk):
                    sl = slice(c0, c0 + goal_chunk)
                    _, goal_c = GP.predict_t(Tensor(rows_s[sl]), Tensor(onehot[sl]),
                                             Tensor(rows_e[sl]), coords_t,
                                             store, mcfg.goal_cfg)
                    goal_parts.append(goal_c)
                goal_all = ad.concat(goal_parts, axis=0)         # (T*Bm, 2)
            else:
                goal_all = Tensor(np.zeros((t_len * bm, 2), dtype=dt))

            depth = flat(rollout.depth, mb).astype(dt)
            d_all = nn.conv_encoder(Tensor(depth[:, None, None, :]),
                                    store, "enc.depth", mcfg.depth_encoder())
            epooled = flat(rollout.epooled, mb).astype(dt)
            e_all = nn.conv_encoder(Tensor(epooled[:, None, :, :]),
                                    store, "enc.explored", mcfg.raster_encoder())
            sfeats = nn.conv_encoder(
                Tensor(rollout.sketch_pool[:, None, :, :].astype(dt)),
                store, "enc.sketch", mcfg.raster_encoder())
            s_all = ad.take(sfeats, flat(rollout.sketch_key, mb))
            # the policy replays the goal estimates the behavior actually
            # saw, as data: goal-predictor parameters are supervised by the
            # goal loss alone, so the (much larger) PPO gradients cannot
            # drown that signal out
            parts = [d_all, e_all, s_all, Tensor(flat(rollout.goals, mb).astype(dt))]
            if mcfg.include_pose:
                parts.append(Tensor(flat(rollout.pose_vec, mb).astype(dt)))
            x_all = ad.concat(parts, axis=1)                     # (T*Bm, Din)

            gru = nn.GruParams(w_ih=store["policy.gru.w_ih"],
                               w_hh=store["policy.gru.w_hh"],
                               b_ih=store["policy.gru.b_ih"],
                               b_hh=store["policy.gru.b_hh"])
            h = Tensor(rollout.h0[mb].astype(dt))
            h_steps = []
            for t in range(t_len):
                if t > 0:
                    mask = (1.0 - rollout.dones[t - 1][mb]).astype(dt)[:, None]
                    h = ad.mul(h, mask)
                x_t = ad.take(x_all, slice(t * bm, (t + 1) * bm))
                h = nn.gru_cell(x_t, h, gru)
                h_steps.append(h)
            h_all = ad.concat(h_steps, axis=0)                   # (T*Bm, H)

            logits = nn.linear(h_all, store["policy.action.w"],
                               store["policy.action.b"])
            value = ad.reshape(nn.linear(h_all, store["policy.value.w"],
                                         store["policy.value.b"]), (t_len * bm,))
            logp_all = ad.log_softmax(logits, axis=-1)
            if objective == "imitation":
                labels = flat(rollout.expert, mb)
                valid = (labels >= 0).astype(dt)
                safe = np.maximum(labels, 0)
                logp_lbl = ad.take(logp_all, (np.arange(t_len * bm), safe))
                policy_sum = ad.sum_(ad.mul(logp_lbl, valid))
            else:
                acts = flat(rollout.actions, mb)
                logp_new = ad.take(logp_all, (np.arange(t_len * bm), acts))
                ratio = ad.exp(ad.add(logp_new, -flat(rollout.logp, mb).astype(dt)))
                a_t = flat(adv_n, mb).astype(dt)
                surr1 = ad.mul(ratio, a_t)
                surr2 = ad.mul(ad.clip(ratio, 1.0 - clip, 1.0 + clip), a_t)
                policy_sum = ad.sum_(ad.minimum(surr1, surr2))
            verr = ad.add(value, -flat(returns, mb).astype(dt))
            value_sum = ad.sum_(ad.square(verr))
            p_all = ad.softmax(logits, axis=-1)
            ent_sum = ad.mul(ad.sum_(ad.mul(p_all, logp_all)), -1.0)
            gerr = ad.add(goal_all, -flat(rollout.gstar, mb).astype(dt))
            goal_sum = ad.sum_(ad.square(gerr))

            loss = ad.add(
                ad.add(ad.mul(policy_sum, -1.0 / n),
                       ad.mul(value_sum, ppo.value_coef / n)),
                ad.add(ad.mul(ent_sum, -ppo.entropy_coef / n),
                       ad.mul(goal_sum, ppo.lambda_goal / n)))
            if not np.isfinite(loss.item()):
                raise FloatingPointError("non-finite PPO loss; update aborted")
            loss.backward()
            gnorm = nn.global_grad_norm_clip(store, ppo.grad_clip)
            opt.step(lr=lr)
            totals["total"] += loss.item()
            totals["policy"] += -policy_sum.item() / n
            totals["value"] += value_sum.item() / n
            totals["entropy"] += ent_sum.item() / n
            totals["goal"] += goal_sum.item() / n
            totals["grad_norm"] += gnorm
            n_batches += 1
    k = max(1, n_batches)
    return LossReport(total=totals["total"] / k, policy=totals["policy"] / k,
                      value=totals["value"] / k, entropy=totals["entropy"] / k,
                      goal=totals["goal"] / k, grad_norm=totals["grad_norm"] / k)


# -- evaluation ---------------------------------------------------------------------


def evaluate(episodes: list[LoadedEpisode], run_cfg: RunConfig,
             store: nn.ParameterStore, policy_kind: str = FULL_POLICY,
             seed: int = 0, batch: int = 16,
             collect_traces: bool = True) -> list[EpisodeRecord]:
    """Greedy (or random) rollout of every episode exactly once."""
    records: list[EpisodeRecord] = []
    for i in range(0, len(episodes), batch):
        chunk = episodes[i:i + batch]
        runner = VecRunner(chunk, run_cfg, store, n_workers=len(chunk),
                           seed=seed + i, mode=PL.GREEDY, policy_kind=policy_kind,
                           auto_reset=False, collect_traces=collect_traces)
        runner.queue = list(chunk)   # evaluation covers each episode once, in order
        runner.next_idx = 0
        for w in range(len(chunk)):
            runner._reset_worker(w)
        guard = max(e.spec.max_steps for e in chunk) + 2
        steps = 0
        while runner.active.any() and steps < guard:
            obs = runner.observation_arrays()
            fwd = runner.policy_forward(obs) if policy_kind == FULL_POLICY else \
                dict(goal=np.zeros((len(chunk), 2)), logits=np.zeros((len(chunk), 4)),
                     value=np.zeros(len(chunk)), hidden=runner.hidden)
            actions, _ = runner.act(fwd)
            runner.step(actions, fwd)
            steps += 1
        records.extend(f.record for f in runner.finished)
    return records


# -- training loop ---------------------------------------------------------------------


def train(dataset: Dataset, run_cfg: RunConfig, out_dir: str | Path,
          abstraction: str = "LOW", resume: bool = False,
          time_budget_s: float | None = None) -> Path:
    """Rollout/update loop with periodic evaluation, checkpoints and metrics log.

    Returns the path of the final checkpoint (without suffix).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ppo = run_cfg.ppo
    store = nn.ParameterStore(run_cfg.train_seed, dtype=np.float32)
    PL.make_params(store, run_cfg.model)
    opt = nn.AdamW(store, lr=ppo.learning_rate, weight_decay=ppo.weight_decay)
    start_update = 0
    log_path = out / "metrics.log"
    latest = out / "latest"

    if resume and latest.with_suffix(".manifest").exists():
        extras = nn.restore_store(latest, store)
        _, meta, _ = nn.load_checkpoint(latest)
        start_update = int(meta.get("update", "0"))
        opt.load_state_tensors(extras, t=int(meta.get("adam_t", "0")))
    else:
        if log_path.exists():
            log_path.unlink()
        nn.save_checkpoint(latest, store, extra_tensors=opt.state_tensors(),
                           meta={"update": "0", "adam_t": "0", "env_steps": "0"})

    train_eps = dataset.episodes("train", abstraction)
    eval_eps = train_eps[:ppo.eval_episodes]
    runner = VecRunner(train_eps, run_cfg, store, n_workers=ppo.workers,
                       seed=run_cfg.train_seed + 1000 + start_update,
                       mode=PL.SAMPLE, collect_traces=True)
    last_eval = dict(sr=0.0, spl=0.0, softspl=0.0, dtg=float("nan"))
    t_start = time.monotonic()
    env_steps = start_update * ppo.rollout_length * ppo.workers

    for update in range(start_update, ppo.total_updates):
        warmup = update < ppo.warmup_updates
        if warmup:
            # imitation bootstrap: expert-heavy behavior, constant rate
            runner.expert_eps = ppo.warmup_expert_eps
            lr = ppo.learning_rate
            clip = ppo.clip_range
        else:
            runner.expert_eps = ppo.expert_eps
            span = max(1, ppo.total_updates - ppo.warmup_updates)
            frac = (update - ppo.warmup_updates) / span
            lr = ppo.learning_rate * (1.0 - frac)
            clip = ppo.clip_range * (1.0 - frac)
        rollout = collect_rollout(runner, ppo.rollout_length)
        update_rng = np.random.default_rng(run_cfg.train_seed * 7919 + update)
        report = ppo_update(rollout, store, opt, run_cfg, lr, clip, update_rng,
                            objective="imitation" if warmup else "ppo")
        runner.sketch_feat_cache.clear()    # features depend on updated params
        env_steps += ppo.rollout_length * ppo.workers

        finished = runner.finished
        runner.finished = []
        mean_reward = float(np.mean([f.reward_sum for f in finished])) if finished \
            else 0.0
        goal_errs = [g for f in finished for g in f.goal_errors]
        goal_err = float(np.mean(goal_errs)) if goal_errs else float("nan")

        if (update + 1) % ppo.eval_every == 0 or update + 1 == ppo.total_updates:
            # sketch features depend on the updated parameters
            records = evaluate(eval_eps, run_cfg, store, seed=run_cfg.train_seed,
                               collect_traces=False)
            s = aggregate(records)
            last_eval = dict(sr=s.sr_pct, spl=s.spl_pct, softspl=s.soft_spl,
                             dtg=s.dtg_m)

        line = (f"update={update + 1} steps={env_steps} "
                f"mean_reward={mean_reward:.4f} sr={last_eval['sr']:.1f} "
                f"spl={last_eval['spl']:.1f} goal_err={goal_err:.5f} "
                f"loss={report.total:.5f} policy={report.policy:.5f} "
                f"value={report.value:.5f} entropy={report.entropy:.5f} "
                f"goal_loss={report.goal:.5f} lr={lr:.3e} clip={clip:.4f}")
        with open(log_path, "a") as f:
            f.write(line + "\n")

        meta = {"update": str(update + 1), "adam_t": str(opt.t),
                "env_steps": str(env_steps)}
        nn.save_checkpoint(latest, store, extra_tensors=opt.state_tensors(), meta=meta)
        if time_budget_s is not None and time.monotonic() - t_start > time_budget_s:
            break
    return latest
