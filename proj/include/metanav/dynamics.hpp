#pragma once

#include <cmath>

#include <Eigen/Core>

#include "metanav/common.hpp"

namespace metanav {

/// Planar pose of the car-like robot: CoG position plus heading.
struct RobotState {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;  // wrapped to (-pi, pi]

    Vec2 position() const { return {x, y}; }
};

/// Control input: forward speed and front-wheel steering angle.
struct Action {
    double v = 0.0;      // m/s
    double delta = 0.0;  // rad
};

inline constexpr double kVMin = 0.0;
inline constexpr double kVMax = 7.0;
inline constexpr double kDeltaMax = kPi / 2.0;

inline Action clamp_action(const Action& u) {
    return {clamp(u.v, kVMin, kVMax), clamp(u.delta, -kDeltaMax, kDeltaMax)};
}

struct DynParams {
    double ts = 0.05;        // sample time, s
    double wheelbase = 0.5;  // front-to-rear axle distance, m
};

// tan() is singular at |delta| = pi/2; inputs are clamped just inside.
inline constexpr double kDeltaSingularityPad = 1e-6;

inline double clamped_steer(double delta) {
    return clamp(delta, -kDeltaMax + kDeltaSingularityPad, kDeltaMax - kDeltaSingularityPad);
}

/// Slip angle beta = atan(tan(delta) / 2) of the bicycle model.
inline double slip_angle(double delta) {
    return std::atan(std::tan(clamped_steer(delta)) * 0.5);
}

/// One forward-Euler step of the kinematic bicycle model.
inline RobotState step(const RobotState& s, const Action& u, const DynParams& p) {
    const double d = clamped_steer(u.delta);
    const double beta = slip_angle(d);
    RobotState n;
    n.x = s.x + p.ts * u.v * std::cos(s.theta + beta);
    n.y = s.y + p.ts * u.v * std::sin(s.theta + beta);
    n.theta = wrap_angle(s.theta + p.ts * (u.v * std::cos(beta) / p.wheelbase) * std::tan(d));
    return n;
}

/// Jacobians of `step` w.r.t. state and input (analytic, used by the MPC).
struct StepJacobians {
    Eigen::Matrix3d a;              // d(next state)/d(state)
    Eigen::Matrix<double, 3, 2> b;  // d(next state)/d(v, delta)
};

inline StepJacobians step_jacobians(const RobotState& s, const Action& u, const DynParams& p) {
    const double d = clamped_steer(u.delta);
    const double t = std::tan(d);
    const double beta = std::atan(t * 0.5);
    const double h = s.theta + beta;
    const double ch = std::cos(h), sh = std::sin(h);
    const double cb = std::cos(beta), sb = std::sin(beta);
    // beta = atan(tan(d)/2):  dbeta/dd = 2 (1 + tan^2 d) / (4 + tan^2 d)
    const double dbeta_dd = 2.0 * (1.0 + t * t) / (4.0 + t * t);

    StepJacobians j;
    j.a.setIdentity();
    j.a(0, 2) = -p.ts * u.v * sh;
    j.a(1, 2) = p.ts * u.v * ch;

    j.b(0, 0) = p.ts * ch;
    j.b(1, 0) = p.ts * sh;
    j.b(2, 0) = p.ts * cb * t / p.wheelbase;
    j.b(0, 1) = -p.ts * u.v * sh * dbeta_dd;
    j.b(1, 1) = p.ts * u.v * ch * dbeta_dd;
    j.b(2, 1) = p.ts * (u.v / p.wheelbase) * (cb * (1.0 + t * t) - sb * dbeta_dd * t);
    return j;
}

}  // namespace metanav
