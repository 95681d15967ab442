#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metanav/common.hpp"
#include "metanav/dynamics.hpp"

namespace metanav {

// ---------------------------------------------------------------------------
// Geometry of the restaurant world. All safety checks use SQUARED distances so
// thresholds compose as (r_robot + r_obstacle + r_safe)^2 and constraint
// gradients stay smooth.
// ---------------------------------------------------------------------------

inline constexpr double kRobotRadius = 0.25;  // = wheelbase / 2
inline constexpr double kSafeMargin = 0.25;
inline constexpr double kGoalRadius = 0.5;    // eps_g = 2 * robot radius

/// Squared-distance safety threshold for a dynamic obstacle of given radius.
inline double dyn_threshold(double obstacle_radius) {
    return square(kRobotRadius + obstacle_radius + kSafeMargin);
}

/// Squared-distance safety threshold for a static obstacle of given radius.
inline double static_threshold(double obstacle_radius) {
    return square(kRobotRadius + obstacle_radius + kSafeMargin);
}

struct StaticObstacle {
    Vec2 center{0.0, 0.0};
    double radius = 0.5;
};

/// Piecewise-linear waypoint following with constant per-step speed and
/// optional zero-mean Gaussian positional jitter.
struct MotionScript {
    std::vector<Vec2> waypoints;
    double speed = 0.0;       // metres per stage
    double jitter_std = 0.0;  // metres
    bool loop = true;         // cycle waypoints vs. hold at the last one
};

struct DynamicObstacle {
    Vec2 position{0.0, 0.0};  // initial position
    double radius = 0.25;
    MotionScript motion;
};

struct WorldBounds {
    Vec2 min{0.0, 0.0};
    Vec2 max{20.0, 20.0};

    bool contains(const Vec2& p) const {
        return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
    }
    Vec2 clamp_point(const Vec2& p) const {
        return {clamp(p.x(), min.x(), max.x()), clamp(p.y(), min.y(), max.y())};
    }
};

/// One MDP sampled from the task distribution: goal, start pose, obstacle
/// layout and the motion scripts of the moving agents.
struct Task {
    Vec2 goal{0.0, 0.0};
    RobotState start;
    std::vector<StaticObstacle> statics;
    std::vector<DynamicObstacle> dynamics;
    WorldBounds bounds;
    std::uint64_t seed = 0;
};

/// Full environment state at one stage. Robot pose plus current obstacle
/// positions; waypoint cursors are simulator bookkeeping carried along so that
/// stepping is a pure function of (state, action, task, rng).
struct EnvState {
    RobotState robot;
    std::vector<Vec2> dyn_positions;
    std::vector<Vec2> static_positions;
    std::vector<int> dyn_waypoint{};  // per-obstacle current waypoint index
    int stage = 0;
};

enum class EventKind { DynCollision, NearGoal };

struct EventConfig {
    double kappa_trigger = 4.0;       // inflation on the squared dyn threshold
    double goal_trigger_factor = 3.0; // Event-2 radius = factor * eps_g
};

/// Cost weights of the stage cost (Q = diag(q_pos, q_pos, 0), R = r_ctrl * I).
struct CostWeights {
    double q_pos = 1.0;
    double r_ctrl = 0.2;
    double w_goal = 10.0;
    double w_dyn = 20.0;
    double w_static = 20.0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Squared distance between the robot CoG and an obstacle center.
inline double safety_value(const RobotState& robot, const Vec2& obs_center) {
    return (robot.position() - obs_center).squaredNorm();
}

inline bool in_safe_dynamic(const EnvState& s, const Task& task) {
    for (std::size_t i = 0; i < s.dyn_positions.size(); ++i) {
        if (safety_value(s.robot, s.dyn_positions[i]) < dyn_threshold(task.dynamics[i].radius))
            return false;
    }
    return true;
}

inline bool in_safe_static(const EnvState& s, const Task& task) {
    for (std::size_t i = 0; i < task.statics.size(); ++i) {
        if (safety_value(s.robot, task.statics[i].center) < static_threshold(task.statics[i].radius))
            return false;
    }
    return true;
}

inline bool in_goal(const RobotState& robot, const Vec2& goal) {
    return (robot.position() - goal).norm() <= kGoalRadius;
}

/// Stage cost c(s, u) = |x - x_goal|^2_Q + |u|^2_R
///                      + w_d 1{unsafe dyn} + w_s 1{unsafe static} - w_g 1{in goal}.
inline double stage_cost(const EnvState& s, const Action& u, const Task& task,
                         const CostWeights& w = {}) {
    double c = w.q_pos * (s.robot.position() - task.goal).squaredNorm();
    c += w.r_ctrl * (u.v * u.v + u.delta * u.delta);
    if (!in_safe_dynamic(s, task)) c += w.w_dyn;
    if (!in_safe_static(s, task)) c += w.w_static;
    if (in_goal(s.robot, task.goal)) c -= w.w_goal;
    return c;
}

/// Event detection: a proximity alarm around dynamic obstacles (inflated
/// threshold, so it fires before impact) or entering the goal neighbourhood.
inline std::optional<EventKind> detect_event(const EnvState& s, const Task& task,
                                             const EventConfig& cfg = {}) {
    for (std::size_t i = 0; i < s.dyn_positions.size(); ++i) {
        const double thr = dyn_threshold(task.dynamics[i].radius) * cfg.kappa_trigger;
        if (safety_value(s.robot, s.dyn_positions[i]) < thr) return EventKind::DynCollision;
    }
    if ((s.robot.position() - task.goal).norm() <= cfg.goal_trigger_factor * kGoalRadius)
        return EventKind::NearGoal;
    return std::nullopt;
}

struct StepFlags {
    bool dyn_collision = false;
    bool static_collision = false;
    bool at_goal = false;
    bool out_of_bounds = false;
};

struct StepResult {
    EnvState next;
    double cost = 0.0;
    StepFlags flags;
};

namespace detail {

/// Advance a scripted obstacle by one stage, spilling leftover travel across
/// waypoint corners so speed per stage stays constant.
inline Vec2 advance_script(const Vec2& pos, int& waypoint_idx, const MotionScript& m) {
    if (m.waypoints.empty() || m.speed <= 0.0) return pos;
    Vec2 p = pos;
    double remaining = m.speed;
    int guard = 0;
    while (remaining > 1e-12 && guard++ < 8 * static_cast<int>(m.waypoints.size()) + 8) {
        if (waypoint_idx >= static_cast<int>(m.waypoints.size())) {
            if (!m.loop) break;
            waypoint_idx = 0;
        }
        const Vec2 target = m.waypoints[static_cast<std::size_t>(waypoint_idx)];
        const Vec2 d = target - p;
        const double dist = d.norm();
        if (dist <= remaining) {
            p = target;
            remaining -= dist;
            ++waypoint_idx;
            if (waypoint_idx >= static_cast<int>(m.waypoints.size()) && !m.loop) break;
        } else {
            p += d * (remaining / dist);
            remaining = 0.0;
        }
    }
    return p;
}

}  // namespace detail

inline EnvState make_initial_state(const Task& task) {
    EnvState s;
    s.robot = task.start;
    s.dyn_positions.reserve(task.dynamics.size());
    for (const auto& d : task.dynamics) s.dyn_positions.push_back(d.position);
    s.static_positions.reserve(task.statics.size());
    for (const auto& o : task.statics) s.static_positions.push_back(o.center);
    s.dyn_waypoint.assign(task.dynamics.size(), 0);
    s.stage = 0;
    return s;
}

/// MDP transition. Cost and flags are evaluated at (s_t, u_t); the robot then
/// advances through the bicycle model and each obstacle through its script
/// plus jitter. Leaving the world rectangle clamps the position and raises a
/// flag instead of erroring.
inline StepResult env_step(const EnvState& s, const Action& u, const Task& task,
                           RandomStream& rng, const DynParams& p = {},
                           const CostWeights& w = {}) {
    StepResult r;
    r.flags.dyn_collision = !in_safe_dynamic(s, task);
    r.flags.static_collision = !in_safe_static(s, task);
    r.flags.at_goal = in_goal(s.robot, task.goal);
    r.cost = stage_cost(s, u, task, w);

    r.next = s;
    r.next.robot = step(s.robot, u, p);
    const Vec2 pos = r.next.robot.position();
    const Vec2 clamped = task.bounds.clamp_point(pos);
    if (clamped != pos) {
        r.flags.out_of_bounds = true;
        r.next.robot.x = clamped.x();
        r.next.robot.y = clamped.y();
    }
    for (std::size_t i = 0; i < task.dynamics.size(); ++i) {
        const MotionScript& m = task.dynamics[i].motion;
        Vec2 np = detail::advance_script(s.dyn_positions[i], r.next.dyn_waypoint[i], m);
        if (m.jitter_std > 0.0) np += m.jitter_std * rng.normal2();
        r.next.dyn_positions[i] = task.bounds.clamp_point(np);
    }
    r.next.stage = s.stage + 1;
    return r;
}

// ---------------------------------------------------------------------------
// Task sampling
// ---------------------------------------------------------------------------

struct GenerationFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TaskGenConfig {
    int n_static = 6;
    int n_dynamic = 3;
    WorldBounds bounds{{0.0, 0.0}, {20.0, 20.0}};
    double margin = 1.0;           // keep sampled points this far inside bounds
    double static_radius = 0.5;
    double dynamic_radius = 0.25;
    double min_static_gap = 1.0;   // surface-to-surface spacing between tables
    double min_start_goal_dist = 8.0;
    double clearance = 0.25;       // extra clearance of start/goal from tables
    double speed_min = 0.04;       // m per stage (0.8 m/s at Ts = 0.05)
    double speed_max = 0.10;
    double jitter_std = 0.01;
    int waypoints_min = 2;
    int waypoints_max = 4;
    int max_rejects = 5000;
};

inline bool task_valid(const Task& t) {
    auto clear_of_statics = [&](const Vec2& p) {
        for (const auto& o : t.statics) {
            if ((p - o.center).squaredNorm() < static_threshold(o.radius)) return false;
        }
        return true;
    };
    if (!t.bounds.contains(t.goal) || !t.bounds.contains(t.start.position())) return false;
    if (!clear_of_statics(t.goal) || !clear_of_statics(t.start.position())) return false;
    for (const auto& o : t.statics)
        if (o.radius <= 0.0) return false;
    for (const auto& d : t.dynamics) {
        if (d.radius <= 0.0) return false;
        if (d.motion.jitter_std < 0.0 || d.motion.speed < 0.0) return false;
    }
    return true;
}

/// Rejection-sample a feasible task. Deterministic in the stream.
inline Task sample_task(RandomStream& rng, const TaskGenConfig& gen) {
    Task t;
    t.bounds = gen.bounds;
    t.seed = rng.seed();
    const double lo_x = gen.bounds.min.x() + gen.margin;
    const double hi_x = gen.bounds.max.x() - gen.margin;
    const double lo_y = gen.bounds.min.y() + gen.margin;
    const double hi_y = gen.bounds.max.y() - gen.margin;
    if (lo_x >= hi_x || lo_y >= hi_y)
        throw GenerationFailed("world bounds too small for the configured margin");

    auto sample_point = [&]() -> Vec2 {
        return {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    };

    // Tables first, with pairwise spacing.
    int rejects = 0;
    while (static_cast<int>(t.statics.size()) < gen.n_static) {
        const Vec2 c = sample_point();
        bool ok = true;
        for (const auto& o : t.statics) {
            if ((c - o.center).norm() < o.radius + gen.static_radius + gen.min_static_gap) {
                ok = false;
                break;
            }
        }
        if (ok) {
            t.statics.push_back({c, gen.static_radius});
        } else if (++rejects > gen.max_rejects) {
            throw GenerationFailed("could not place static obstacles with the required spacing");
        }
    }

    auto clear_of_statics = [&](const Vec2& p, double extra) {
        for (const auto& o : t.statics) {
            const double need = std::sqrt(static_threshold(o.radius)) + extra;
            if ((p - o.center).norm() < need) return false;
        }
        return true;
    };

    rejects = 0;
    for (;;) {
        const Vec2 g = sample_point();
        if (clear_of_statics(g, gen.clearance)) {
            t.goal = g;
            break;
        }
        if (++rejects > gen.max_rejects) throw GenerationFailed("could not place goal");
    }
    rejects = 0;
    for (;;) {
        const Vec2 p = sample_point();
        if (clear_of_statics(p, gen.clearance) && (p - t.goal).norm() >= gen.min_start_goal_dist) {
            t.start.x = p.x();
            t.start.y = p.y();
            t.start.theta = rng.uniform(-kPi, kPi);
            break;
        }
        if (++rejects > gen.max_rejects) throw GenerationFailed("could not place start pose");
    }

    rejects = 0;
    while (static_cast<int>(t.dynamics.size()) < gen.n_dynamic) {
        const Vec2 p = sample_point();
        if ((p - t.start.position()).norm() < 1.5) {
            if (++rejects > gen.max_rejects) throw GenerationFailed("could not place dynamic obstacle");
            continue;
        }
        DynamicObstacle d;
        d.position = p;
        d.radius = gen.dynamic_radius;
        const int n_wp = gen.waypoints_min +
                         rng.uniform_int(gen.waypoints_max - gen.waypoints_min + 1);
        for (int k = 0; k < n_wp; ++k) d.motion.waypoints.push_back(sample_point());
        d.motion.speed = rng.uniform(gen.speed_min, gen.speed_max);
        d.motion.jitter_std = gen.jitter_std;
        t.dynamics.push_back(std::move(d));
    }

    if (!task_valid(t)) throw GenerationFailed("sampled task failed its own invariant check");
    return t;
}

// ---------------------------------------------------------------------------
// JSON (documented schema: goal, start, statics[], dynamics[], bounds, seed)
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Task& t) {
    j = nlohmann::json::object();
    j["goal"] = {t.goal.x(), t.goal.y()};
    j["start"] = {t.start.x, t.start.y, t.start.theta};
    auto statics = nlohmann::json::array();
    for (const auto& o : t.statics)
        statics.push_back({{"center", {o.center.x(), o.center.y()}}, {"radius", o.radius}});
    j["statics"] = std::move(statics);
    auto dynamics = nlohmann::json::array();
    for (const auto& d : t.dynamics) {
        auto wps = nlohmann::json::array();
        for (const auto& w : d.motion.waypoints) wps.push_back({w.x(), w.y()});
        dynamics.push_back({{"position", {d.position.x(), d.position.y()}},
                            {"radius", d.radius},
                            {"motion",
                             {{"waypoints", std::move(wps)},
                              {"speed", d.motion.speed},
                              {"jitter_std", d.motion.jitter_std},
                              {"loop", d.motion.loop}}}});
    }
    j["dynamics"] = std::move(dynamics);
    j["bounds"] = {{"min", {t.bounds.min.x(), t.bounds.min.y()}},
                   {"max", {t.bounds.max.x(), t.bounds.max.y()}}};
    j["seed"] = t.seed;
}

inline void from_json(const nlohmann::json& j, Task& t) {
    auto vec2 = [](const nlohmann::json& a) -> Vec2 {
        return {a.at(0).get<double>(), a.at(1).get<double>()};
    };
    t.goal = vec2(j.at("goal"));
    const auto& s = j.at("start");
    t.start = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    t.statics.clear();
    for (const auto& o : j.at("statics"))
        t.statics.push_back({vec2(o.at("center")), o.at("radius").get<double>()});
    t.dynamics.clear();
    for (const auto& d : j.at("dynamics")) {
        DynamicObstacle ob;
        ob.position = vec2(d.at("position"));
        ob.radius = d.at("radius").get<double>();
        const auto& m = d.at("motion");
        for (const auto& w : m.at("waypoints")) ob.motion.waypoints.push_back(vec2(w));
        ob.motion.speed = m.at("speed").get<double>();
        ob.motion.jitter_std = m.at("jitter_std").get<double>();
        ob.motion.loop = m.value("loop", true);
        t.dynamics.push_back(std::move(ob));
    }
    t.bounds.min = vec2(j.at("bounds").at("min"));
    t.bounds.max = vec2(j.at("bounds").at("max"));
    t.seed = j.value("seed", std::uint64_t{0});
}

inline void to_json(nlohmann::json& j, const TaskGenConfig& g) {
    j = {{"n_static", g.n_static},
         {"n_dynamic", g.n_dynamic},
         {"bounds", {{"min", {g.bounds.min.x(), g.bounds.min.y()}},
                     {"max", {g.bounds.max.x(), g.bounds.max.y()}}}},
         {"margin", g.margin},
         {"static_radius", g.static_radius},
         {"dynamic_radius", g.dynamic_radius},
         {"min_static_gap", g.min_static_gap},
         {"min_start_goal_dist", g.min_start_goal_dist},
         {"clearance", g.clearance},
         {"speed_min", g.speed_min},
         {"speed_max", g.speed_max},
         {"jitter_std", g.jitter_std},
         {"waypoints_min", g.waypoints_min},
         {"waypoints_max", g.waypoints_max},
         {"max_rejects", g.max_rejects}};
}

inline void from_json(const nlohmann::json& j, TaskGenConfig& g) {
    g.n_static = j.value("n_static", g.n_static);
    g.n_dynamic = j.value("n_dynamic", g.n_dynamic);
    if (j.contains("bounds")) {
        const auto& b = j.at("bounds");
        g.bounds.min = {b.at("min").at(0).get<double>(), b.at("min").at(1).get<double>()};
        g.bounds.max = {b.at("max").at(0).get<double>(), b.at("max").at(1).get<double>()};
    }
    g.margin = j.value("margin", g.margin);
    g.static_radius = j.value("static_radius", g.static_radius);
    g.dynamic_radius = j.value("dynamic_radius", g.dynamic_radius);
    g.min_static_gap = j.value("min_static_gap", g.min_static_gap);
    g.min_start_goal_dist = j.value("min_start_goal_dist", g.min_start_goal_dist);
    g.clearance = j.value("clearance", g.clearance);
    g.speed_min = j.value("speed_min", g.speed_min);
    g.speed_max = j.value("speed_max", g.speed_max);
    g.jitter_std = j.value("jitter_std", g.jitter_std);
    g.waypoints_min = j.value("waypoints_min", g.waypoints_min);
    g.waypoints_max = j.value("waypoints_max", g.waypoints_max);
    g.max_rejects = j.value("max_rejects", g.max_rejects);
}

}  // namespace metanav
