// Vehicle models: continuous-time airplane dynamics under a flat-plate
// airfoil, zero-order-hold RK4 discretization, finite-difference Jacobians,
// and the state -> SE(3) configuration map. Linear test plants (double
// integrator, pure translation) share the same interface so the estimation
// pipeline can be validated against closed-form results.
#pragma once

#include "cpais/common.hpp"

#include <Eigen/Geometry>

#include <memory>
#include <string>

namespace cpais {

// Thrown when dynamics leave the model's domain (v <= 0, |gamma| >= pi/2).
// Rollouts catch this and record a domain exit; it is data, not a bug.
class SingularStateError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Pose {
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
};

struct AirplaneParams {
    double gravity = 9.81;        // m/s^2
    double air_density = 1.225;   // kg/m^3
    double wing_area = 0.3;       // m^2
    double mass = 1.0;            // kg
    double drag_coeff0 = 0.03;    // zero-lift drag coefficient
    double induced_drag = 0.05;   // induced drag factor
    double alpha0 = 0.0;          // level-flight angle of attack, rad
    double dt = 0.129;            // s

    void validate() const {
        require(gravity > 0 && air_density > 0 && wing_area > 0 && mass > 0 &&
                    drag_coeff0 > 0 && induced_drag > 0 && dt > 0,
                "AirplaneParams: physical constants and dt must be positive");
    }

    // Angle of attack for straight and level flight at airspeed v:
    // lift pi*rho*A*v^2*alpha balances weight m*g.
    double trim_alpha(double v) const {
        return mass * gravity / (M_PI * air_density * wing_area * v * v);
    }

    // Thrust acceleration holding airspeed at level trim.
    double trim_accel(double v, double alpha) const {
        return air_density * wing_area * v * v *
               (drag_coeff0 + 4.0 * M_PI * M_PI * induced_drag * alpha * alpha) / mass;
    }
};

// (x, y, z, v, psi, gamma, phi, alpha)
struct AirplaneState {
    double x = 0, y = 0, z = 0;
    double v = 0;      // airspeed, m/s
    double psi = 0;    // course angle
    double gamma = 0;  // flight path angle
    double phi = 0;    // roll angle
    double alpha = 0;  // angle of attack

    static constexpr int kDim = 8;

    static AirplaneState from_vector(const Vector& s) {
        require(s.size() == kDim, "AirplaneState: expected an 8-vector");
        return {s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]};
    }
    Vector to_vector() const {
        Vector s(kDim);
        s << x, y, z, v, psi, gamma, phi, alpha;
        return s;
    }

    void check_domain() const {
        if (!(v > 0.0)) throw SingularStateError("airplane model singular: airspeed v <= 0");
        if (!(std::abs(gamma) < M_PI / 2.0))
            throw SingularStateError("airplane model singular: |gamma| >= pi/2");
    }
};

// (u_a, u_phidot, u_alphadot): thrust acceleration, roll rate, pitch rate.
struct AirplaneControl {
    double accel = 0;
    double roll_rate = 0;
    double pitch_rate = 0;

    static constexpr int kDim = 3;

    static AirplaneControl from_vector(const Vector& u) {
        require(u.size() == kDim, "AirplaneControl: expected a 3-vector");
        return {u[0], u[1], u[2]};
    }
    Vector to_vector() const {
        Vector u(kDim);
        u << accel, roll_rate, pitch_rate;
        return u;
    }
};

inline double lift_force(const AirplaneParams& p, double v, double alpha) {
    return M_PI * p.air_density * p.wing_area * v * v * alpha;
}

inline double drag_force(const AirplaneParams& p, double v, double alpha) {
    return p.air_density * p.wing_area * v * v *
           (p.drag_coeff0 + 4.0 * M_PI * M_PI * p.induced_drag * alpha * alpha);
}

inline Vector continuous_derivative(const AirplaneParams& p, const AirplaneState& s,
                                    const AirplaneControl& u) {
    s.check_domain();
    const double lift = lift_force(p, s.v, s.alpha);
    const double drag = drag_force(p, s.v, s.alpha);
    const double cg = std::cos(s.gamma);
    Vector d(AirplaneState::kDim);
    d[0] = s.v * std::cos(s.psi) * cg;
    d[1] = s.v * std::sin(s.psi) * cg;
    d[2] = s.v * std::sin(s.gamma);
    d[3] = u.accel - drag / p.mass - p.gravity * std::sin(s.gamma);
    d[4] = -lift * std::sin(s.phi) / (p.mass * s.v * cg);
    d[5] = lift * std::cos(s.phi) / (p.mass * s.v) - p.gravity * cg / s.v;
    d[6] = u.roll_rate;
    d[7] = u.pitch_rate;
    return d;
}

// Classical RK4 over one step of length p.dt with the control held constant.
inline AirplaneState step_nominal(const AirplaneParams& p, const AirplaneState& s,
                                  const AirplaneControl& u) {
    const Vector s0 = s.to_vector();
    auto deriv = [&](const Vector& sv) {
        return continuous_derivative(p, AirplaneState::from_vector(sv), u);
    };
    const double h = p.dt;
    const Vector k1 = deriv(s0);
    const Vector k2 = deriv(s0 + 0.5 * h * k1);
    const Vector k3 = deriv(s0 + 0.5 * h * k2);
    const Vector k4 = deriv(s0 + h * k3);
    AirplaneState out = AirplaneState::from_vector(s0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4));
    out.check_domain();
    return out;
}

inline Eigen::Quaterniond euler_zyx_quaternion(double yaw, double pitch, double roll) {
    return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                              Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                              Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()));
}

// q(x) = (x, y, z, yaw = psi, pitch = alpha0 - alpha - gamma, roll = phi).
inline Pose configuration(const AirplaneParams& p, const AirplaneState& s) {
    Pose pose;
    pose.translation = Eigen::Vector3d(s.x, s.y, s.z);
    pose.rotation = euler_zyx_quaternion(s.psi, p.alpha0 - s.alpha - s.gamma, s.phi).normalized();
    return pose;
}

// Discrete-time plant interface. step() is the map f in
//   x_t = f(x_{t-1}, u_{t-1} + v^u_t) + v^x_t,
// and the observation is full state (h(x) = x, H = I) for every plant here.
class Plant {
  public:
    virtual ~Plant() = default;

    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual int control_dim() const = 0;
    int measurement_dim() const { return state_dim(); }

    virtual Vector step(const Vector& x, const Vector& u) const = 0;
    virtual Pose configuration(const Vector& x) const = 0;

    Vector observe(const Vector& x) const { return x; }

    // Central finite differences of the discrete step map with
    // h_i = 1e-6 * max(1, |coordinate|).
    virtual std::pair<Matrix, Matrix> jacobians(const Vector& x, const Vector& u) const {
        const int dx = state_dim();
        const int du = control_dim();
        Matrix A(dx, dx), B(dx, du);
        for (int i = 0; i < dx; ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
            Vector xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            A.col(i) = (step(xp, u) - step(xm, u)) / (2.0 * h);
        }
        for (int i = 0; i < du; ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(u[i]));
            Vector up = u, um = u;
            up[i] += h;
            um[i] -= h;
            B.col(i) = (step(x, up) - step(x, um)) / (2.0 * h);
        }
        return {A, B};
    }
};

class AirplanePlant : public Plant {
  public:
    explicit AirplanePlant(AirplaneParams params) : params_(params) { params_.validate(); }

    std::string name() const override { return "airplane"; }
    int state_dim() const override { return AirplaneState::kDim; }
    int control_dim() const override { return AirplaneControl::kDim; }

    const AirplaneParams& params() const { return params_; }

    Vector step(const Vector& x, const Vector& u) const override {
        return step_nominal(params_, AirplaneState::from_vector(x), AirplaneControl::from_vector(u))
            .to_vector();
    }

    Pose configuration(const Vector& x) const override {
        return cpais::configuration(params_, AirplaneState::from_vector(x));
    }

  private:
    AirplaneParams params_;
};

// Planar double integrator: state (px, py, vx, vy), control (ax, ay).
// Exactly linear, so the closed-loop rollout matches the linearized
// recursion and ground truth is computable.
class DoubleIntegratorPlant : public Plant {
  public:
    explicit DoubleIntegratorPlant(double dt, double body_z = 0.0) : dt_(dt), body_z_(body_z) {
        require(dt > 0, "DoubleIntegratorPlant: dt must be positive");
    }

    std::string name() const override { return "double_integrator"; }
    int state_dim() const override { return 4; }
    int control_dim() const override { return 2; }
    double dt() const { return dt_; }

    Vector step(const Vector& x, const Vector& u) const override {
        require(x.size() == 4 && u.size() == 2, "DoubleIntegratorPlant: dimension mismatch");
        Vector out(4);
        out[0] = x[0] + dt_ * x[2] + 0.5 * dt_ * dt_ * u[0];
        out[1] = x[1] + dt_ * x[3] + 0.5 * dt_ * dt_ * u[1];
        out[2] = x[2] + dt_ * u[0];
        out[3] = x[3] + dt_ * u[1];
        return out;
    }

    Pose configuration(const Vector& x) const override {
        Pose pose;
        pose.translation = Eigen::Vector3d(x[0], x[1], body_z_);
        return pose;
    }

  private:
    double dt_;
    double body_z_;
};

// State is a workspace position moved at commanded velocity; used by
// geometry and close-point tests where the state/configuration coupling
// should be trivial.
class TranslationPlant : public Plant {
  public:
    explicit TranslationPlant(double dt = 1.0) : dt_(dt) {}

    std::string name() const override { return "translation"; }
    int state_dim() const override { return 3; }
    int control_dim() const override { return 3; }

    Vector step(const Vector& x, const Vector& u) const override { return x + dt_ * u; }

    Pose configuration(const Vector& x) const override {
        Pose pose;
        pose.translation = Eigen::Vector3d(x[0], x[1], x[2]);
        return pose;
    }

  private:
    double dt_;
};

}  // namespace cpais
