#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "metadagger/errors.hpp"
#include "metadagger/expert.hpp"
#include "metadagger/random.hpp"
#include "metadagger/track_world.hpp"
#include "test_support.hpp"

using namespace metadagger;
using testing::boundary_distance;
using testing::brute_offset;
using testing::circle_track;
using testing::rectangle_track;

namespace {

void check_invariants(const Track& t, double kappa_max) {
    const auto& c = t.centerline();
    REQUIRE(c.size() >= 4);
    CHECK(std::hypot(c.front().x - c.back().x, c.front().y - c.back().y) < 1e-6);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
        const double d = std::hypot(c[i + 1].x - c[i].x, c[i + 1].y - c[i].y);
        CHECK(d >= 0.01);
        CHECK(d <= 2.0);
        sum += d;
    }
    CHECK(std::abs(sum - t.total_length()) <= 1e-9 * sum);
    CHECK(t.half_width() > 0.0);
    CHECK(t.max_abs_curvature() <= kappa_max);
}

std::vector<Track> default_tracks() {
    std::vector<Track> out;
    for (std::uint64_t s = 1; s <= 19; ++s) out.push_back(generate_track(s, TrackGenParams{}));
    return out;
}

/// March along the ray by the distance to the nearest boundary segment.
/// Never skips a crossing, and uses neither the grid nor segment intersection.
double sphere_march(const Track& t, Point2 o, double angle, double max_range) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    double s = 0.0;
    for (int it = 0; it < 200000 && s < max_range; ++it) {
        const double d = boundary_distance(t, {o.x + s * dx, o.y + s * dy});
        if (d < 1e-5) return s;
        s += d;
    }
    return std::min(s, max_range);
}

CarState pose(double x, double y, double heading) {
    CarState s;
    s.x = x;
    s.y = y;
    s.heading = heading;
    s.speed = 10.0;
    return s;
}

}  // namespace

TEST_CASE("circle track length matches circumference") {
    TrackGenParams p;
    p.radius_mean = 50.0;
    p.radius_jitter = 0.0;
    p.resample_spacing = 1.0;
    p.target_length = 0.0;
    const Track t = generate_track(7, p);
    CHECK(std::abs(t.total_length() - 2.0 * std::numbers::pi * 50.0) < 0.005 * 2.0 * std::numbers::pi * 50.0);
    check_invariants(t, p.kappa_max);
}

TEST_CASE("generation is deterministic in seed and params") {
    const Track a = generate_track(7, TrackGenParams{});
    const Track b = generate_track(7, TrackGenParams{});
    CHECK(a == b);
    std::ostringstream sa, sb;
    write_track(sa, a);
    write_track(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK_FALSE(a == generate_track(8, TrackGenParams{}));
}

TEST_CASE("default tracks satisfy invariants and the lap calibration") {
    const SimConfig sim;
    for (const Track& t : default_tracks()) {
        check_invariants(t, TrackGenParams{}.kappa_max);
        CHECK(std::ceil(t.total_length() / (sim.speed * sim.dt)) == 1000.0);
    }
}

TEST_CASE("infeasible curvature bound fails after the retry budget") {
    TrackGenParams p;
    p.kappa_max = 1e-4;
    CHECK_THROWS_AS(generate_track(3, p), GenerationError);
}

TEST_CASE("invalid generator params are rejected") {
    TrackGenParams p;
    p.radius_jitter = p.radius_mean;
    CHECK_THROWS(generate_track(1, p));
    p = TrackGenParams{};
    p.n_control_points = 5;
    CHECK_THROWS(generate_track(1, p));
}

TEST_CASE("step: straight motion and yaw law") {
    const Track t = rectangle_track(200, 40, 4.0);
    SimConfig sim;
    sim.dt = 0.1;
    CarState s = pose(0.0, 0.0, 0.0);
    CarState n = step(t, s, 0.0, sim);
    CHECK(n.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n.y == 0.0);
    CHECK(n.heading == 0.0);
    CHECK(n.step_index == 1);

    sim.omega_max = 0.5;
    n = step(t, s, 1.0, sim);
    CHECK(n.heading == doctest::Approx(0.05).epsilon(1e-15));
    // steering is clamped
    CHECK(step(t, s, 3.0, sim).heading == n.heading);
}

TEST_CASE("heading stays normalized and progress is monotone and capped") {
    const Track t = circle_track(30.0, 200, 4.0);
    const SimConfig sim;
    CarState s = initial_state(t, sim.speed);
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        const CarState n = step(t, s, rng.uniform(-1.0, 1.0), sim);
        CHECK(n.heading > -std::numbers::pi);
        CHECK(n.heading <= std::numbers::pi);
        CHECK(n.progress >= s.progress);
        CHECK(n.progress - s.progress <= 1.5 * sim.speed * sim.dt + 1e-12);
        s = n;
    }
    CHECK(normalize_angle(std::numbers::pi) == std::numbers::pi);
    CHECK(normalize_angle(-std::numbers::pi) == std::numbers::pi);
}

TEST_CASE("expert closed loop on a circle accumulates progress at speed") {
    const Track t = circle_track(50.0, 400, 4.0);
    const SimConfig sim;
    Expert expert{PidGains{}};
    CarState s = initial_state(t, sim.speed);
    const int n = 400;
    for (int i = 0; i < n; ++i) s = step(t, s, expert.act(t, s, sim.dt), sim);
    const double expected = n * sim.speed * sim.dt;
    CHECK(std::abs(s.progress - expected) <= 0.02 * expected);
}

TEST_CASE("step is deterministic") {
    const Track t = generate_track(2, TrackGenParams{});
    const CarState s = initial_state(t, 10.0);
    CHECK(step(t, s, 0.3, SimConfig{}) == step(t, s, 0.3, SimConfig{}));
}

TEST_CASE("lateral offset: on centerline, left normal, brute-force oracle") {
    const Track t = generate_track(4, TrackGenParams{});
    const auto& c = t.centerline();
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
        const double tangent = std::atan2(c[i + 1].y - c[i].y, c[i + 1].x - c[i].x);
        const LaneOffset on = lateral_offset(t, pose(c[i].x, c[i].y, tangent));
        CHECK(std::abs(on.offset) < 1e-9);
        CHECK(std::abs(on.heading_error) < 1e-9);
    }

    // 1 m along the left normal at the middle of a segment
    const std::size_t k = 100;
    const double tx = c[k + 1].x - c[k].x, ty = c[k + 1].y - c[k].y;
    const double len = std::hypot(tx, ty);
    const double mx = 0.5 * (c[k].x + c[k + 1].x), my = 0.5 * (c[k].y + c[k + 1].y);
    const LaneOffset left = lateral_offset(t, pose(mx - ty / len, my + tx / len, 0.0));
    CHECK(left.offset == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const auto idx = static_cast<std::size_t>(rng.below(c.size() - 1));
        const double x = c[idx].x + rng.uniform(-6.0, 6.0);
        const double y = c[idx].y + rng.uniform(-6.0, 6.0);
        const double h = rng.uniform(-3.0, 3.0);
        const LaneOffset lo = lateral_offset(t, pose(x, y, h));
        CHECK(std::abs(lo.offset - brute_offset(t, {x, y})) < 1e-9);
        CHECK(lo.heading_error > -std::numbers::pi);
        CHECK(lo.heading_error <= std::numbers::pi);
    }
}

TEST_CASE("rays on a long straight: symmetry and side rays") {
    const Track t = rectangle_track(200, 40, 4.0);
    const ObservationConfig cfg;
    const Observation obs = observe(t, pose(100.0, 0.0, 0.0), cfg);
    REQUIRE(obs.rays.size() == 19u);
    CHECK(obs.raster.empty());
    for (int i = 0; i < 19; ++i) CHECK(std::abs(obs.rays[i] - obs.rays[18 - i]) < 1e-6);
    CHECK(std::abs(obs.rays.front() - 4.0) < 1e-6);
    CHECK(std::abs(obs.rays.back() - 4.0) < 1e-6);
    CHECK(obs.rays[9] == cfg.ray_max);
    CHECK(ray_angle(0, 19) == doctest::Approx(-std::numbers::pi / 2));
    CHECK(ray_angle(18, 19) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("rays agree with a sphere-march oracle on random poses") {
    const Track t = generate_track(9, TrackGenParams{});
    const ObservationConfig cfg;
    const auto& c = t.centerline();
    Rng rng(21);
    for (int trial = 0; trial < 12; ++trial) {
        const auto idx = static_cast<std::size_t>(rng.below(c.size() - 1));
        const double tangent = std::atan2(c[idx + 1].y - c[idx].y, c[idx + 1].x - c[idx].x);
        const double off = rng.uniform(-0.8, 0.8) * t.half_width();
        const double x = c[idx].x - std::sin(tangent) * off;
        const double y = c[idx].y + std::cos(tangent) * off;
        const CarState s = pose(x, y, tangent + rng.uniform(-0.3, 0.3));
        const Observation obs = observe(t, s, cfg);
        for (int i = 0; i < cfg.n_rays; ++i) {
            const double oracle = sphere_march(t, {x, y}, s.heading + ray_angle(i, cfg.n_rays), cfg.ray_max);
            CHECK(std::abs(obs.rays[i] - oracle) < 2e-3);
            CHECK(obs.rays[i] >= 0.0);
            CHECK(obs.rays[i] <= cfg.ray_max);
        }
        const double side = std::min(obs.rays.front(), obs.rays.back());
        CHECK(side <= t.half_width() + std::abs(lateral_offset(t, s).offset) + 1e-3);
    }
}

TEST_CASE("raster observation has G x G binary entries") {
    const Track t = rectangle_track(200, 40, 4.0);
    ObservationConfig cfg;
    cfg.raster = true;
    const Observation obs = observe(t, pose(100.0, 0.0, 0.0), cfg);
    REQUIRE(obs.raster.size() == static_cast<std::size_t>(cfg.raster_size * cfg.raster_size));
    double sum = 0.0;
    for (double v : obs.raster) {
        CHECK((v == 0.0 || v == 1.0));
        sum += v;
    }
    CHECK(sum > 0.0);
    CHECK(feature_dim(cfg) == cfg.raster_size * cfg.raster_size);
    CHECK(features(obs, cfg).size() == obs.raster.size());
    // the lane is symmetric about the heading
    const int g = cfg.raster_size;
    for (int r = 0; r < g; ++r)
        for (int col = 0; col < g; ++col) CHECK(obs.raster[r * g + col] == obs.raster[r * g + (g - 1 - col)]);
}

TEST_CASE("ray features are scaled to [0, 1]") {
    const Track t = rectangle_track(200, 40, 4.0);
    const ObservationConfig cfg;
    const Observation obs = observe(t, pose(100.0, 0.0, 0.0), cfg);
    const auto f = features(obs, cfg);
    REQUIRE(static_cast<int>(f.size()) == feature_dim(cfg));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == obs.rays[i] / cfg.ray_max);
}

TEST_CASE("termination verdicts and precedence") {
    const Track t = rectangle_track(200, 40, 4.0);
    CarState s = pose(100.0, 4.01, 0.0);
    CHECK(is_terminated(t, s, 1000) == Termination::OutOfLane);
    s.progress = t.total_length();
    s.step_index = 1000;
    CHECK(is_terminated(t, s, 1000) == Termination::OutOfLane);

    s = pose(100.0, 0.0, 0.0);
    s.progress = t.total_length();
    CHECK(is_terminated(t, s, 1000) == Termination::LapComplete);
    s.step_index = 1000;
    CHECK(is_terminated(t, s, 1000) == Termination::LapComplete);

    s = pose(100.0, 0.0, 0.0);
    s.step_index = 1000;
    CHECK(is_terminated(t, s, 1000) == Termination::StepLimit);
    s.step_index = 999;
    CHECK(is_terminated(t, s, 1000) == Termination::Running);

    for (auto v : {Termination::Running, Termination::OutOfLane, Termination::LapComplete, Termination::StepLimit})
        CHECK(termination_from_string(to_string(v)) == v);
}

TEST_CASE("track file round trip") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Track t = generate_track(seed, TrackGenParams{}, "track-x");
        std::stringstream ss;
        write_track(ss, t);
        const Track back = read_track(ss);
        CHECK(back == t);
        CHECK(back.centerline() == t.centerline());
    }
}

TEST_CASE("track file errors") {
    std::istringstream two("track-v1 t 4 0\n0 0\n1 0\n");
    CHECK_THROWS_AS(read_track(two), InvariantError);
    std::istringstream version("track-v9 t 4 0\n0 0\n1 0\n1 1\n0 1\n0 0\n");
    CHECK_THROWS_AS(read_track(version), VersionError);
    std::istringstream garbage("track-v1 t 4 0\n0 0\n1 zero\n");
    CHECK_THROWS_AS(read_track(garbage), FormatError);
    std::istringstream open_ring("track-v1 t 4 0\n0 0\n1 0\n1 1\n0 1\n");
    CHECK_THROWS_AS(read_track(open_ring), InvariantError);
}

TEST_CASE("hand-written square file") {
    std::istringstream sq("track-v1 square 0.25 0\n0 0\n1 0\n1 1\n0 1\n0 0\n");
    const Track t = read_track(sq);
    CHECK(t.total_length() == 4.0);
    CHECK(t.segment_count() == 4u);
}
