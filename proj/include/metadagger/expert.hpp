#pragma once

#include "metadagger/track_world.hpp"

namespace metadagger {

/// Gains act on the lateral offset in meters and the heading error in radians.
struct PidGains {
    double kp = 0.8;
    double ki = 0.0;
    double kd = 0.3;
    double kh = 1.2;
    double integral_clamp = 5.0;  // m*s

    void validate() const;
};

struct PidState {
    double integral = 0.0;
    double prev_error = 0.0;
    bool initialized = false;

    friend bool operator==(const PidState&, const PidState&) = default;
};

struct PidOutput {
    double steering = 0.0;  // in [-1, 1]
    PidState state;
};

/// u = -(kp*e + ki*I + kd*de/dt + kh*heading_error), clamped to [-1, 1].
/// The derivative term is zero on the first call after reset.
PidOutput pid_action(const PidGains& gains, const PidState& state, double offset, double heading_error,
                     double dt);

PidState reset(const PidGains& gains);

/// The reference demonstrator. Reads the privileged lane offset from the track.
class Expert {
public:
    explicit Expert(PidGains gains) : gains_(gains), state_(reset(gains_)) {}

    void reset_episode() { state_ = reset(gains_); }

    /// a_ref for the current car state; advances the controller memory.
    double act(const Track& track, const CarState& car, double dt) {
        const LaneOffset lo = lateral_offset(track, car);
        const PidOutput out = pid_action(gains_, state_, lo.offset, lo.heading_error, dt);
        state_ = out.state;
        return out.steering;
    }

    const PidGains& gains() const noexcept { return gains_; }
    const PidState& state() const noexcept { return state_; }

private:
    PidGains gains_;
    PidState state_;
};

}  // namespace metadagger
