#include "metadagger/expert.hpp"

#include <algorithm>

#include "metadagger/errors.hpp"

namespace metadagger {

void PidGains::validate() const {
    if (!(kp >= 0.0) || !(ki >= 0.0) || !(kd >= 0.0) || !(kh >= 0.0))
        throw InvariantError("PID gains must be non-negative");
    if (!(integral_clamp > 0.0)) throw InvariantError("integral_clamp must be positive");
}

PidOutput pid_action(const PidGains& gains, const PidState& state, double offset, double heading_error,
                     double dt) {
    PidOutput out;
    out.state.integral = std::clamp(state.integral + offset * dt, -gains.integral_clamp, gains.integral_clamp);
    const double derivative = state.initialized ? (offset - state.prev_error) / dt : 0.0;
    out.state.prev_error = offset;
    out.state.initialized = true;
    const double u = -(gains.kp * offset + gains.ki * out.state.integral + gains.kd * derivative +
                       gains.kh * heading_error);
    out.steering = std::clamp(u, -1.0, 1.0);
    return out;
}

PidState reset(const PidGains& /*gains*/) { return PidState{}; }

}  // namespace metadagger
