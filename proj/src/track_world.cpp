#include "metadagger/track_world.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "metadagger/errors.hpp"
#include "metadagger/io.hpp"
#include "metadagger/random.hpp"

namespace metadagger {

namespace {

constexpr double kPi = std::numbers::pi;

double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
Point2 sub(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
Point2 add(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
Point2 scale(Point2 a, double s) { return {a.x * s, a.y * s}; }
double dist(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double polyline_length(const std::vector<Point2>& pts) {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) total += dist(pts[i], pts[i + 1]);
    return total;
}

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
    const Point2 d = sub(b, a);
    const double len2 = dot(d, d);
    double t = len2 > 0.0 ? dot(sub(p, a), d) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return dist(p, add(a, scale(d, t)));
}

// Ray parameter of the hit with segment [a, b], or +inf.
double ray_segment_hit(Point2 o, Point2 dir, Point2 a, Point2 b) {
    const Point2 e = sub(b, a);
    const double denom = cross(dir, e);
    if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
    const Point2 w = sub(a, o);
    const double t = cross(w, e) / denom;
    const double u = cross(w, dir) / denom;
    if (t < 0.0 || u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
    return t;
}

bool valid_id(const std::string& id) {
    if (id.empty()) return false;
    return std::none_of(id.begin(), id.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

// Closed periodic cubic spline through the control points, densely sampled.
std::vector<Point2> periodic_spline(const std::vector<Point2>& ctrl, int samples_per_span) {
    const int n = static_cast<int>(ctrl.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs(n, 2);
    for (int i = 0; i < n; ++i) {
        const int prev = (i + n - 1) % n;
        const int next = (i + 1) % n;
        a(i, prev) += 1.0;
        a(i, i) += 4.0;
        a(i, next) += 1.0;
        rhs(i, 0) = 6.0 * (ctrl[next].x - 2.0 * ctrl[i].x + ctrl[prev].x);
        rhs(i, 1) = 6.0 * (ctrl[next].y - 2.0 * ctrl[i].y + ctrl[prev].y);
    }
    const Eigen::MatrixXd m = a.partialPivLu().solve(rhs);

    std::vector<Point2> out;
    out.reserve(static_cast<std::size_t>(n * samples_per_span + 1));
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        for (int k = 0; k < samples_per_span; ++k) {
            const double t = static_cast<double>(k) / samples_per_span;
            const double s = 1.0 - t;
            const double cs = (s * s * s - s) / 6.0;
            const double ct = (t * t * t - t) / 6.0;
            out.push_back({s * ctrl[i].x + t * ctrl[j].x + cs * m(i, 0) + ct * m(j, 0),
                           s * ctrl[i].y + t * ctrl[j].y + cs * m(i, 1) + ct * m(j, 1)});
        }
    }
    out.push_back(out.front());
    return out;
}

// Uniform arc-length resampling of a closed polyline to n distinct points (plus closure).
std::vector<Point2> resample_closed(const std::vector<Point2>& dense, std::size_t n) {
    std::vector<double> cum(dense.size(), 0.0);
    for (std::size_t i = 1; i < dense.size(); ++i) cum[i] = cum[i - 1] + dist(dense[i - 1], dense[i]);
    const double total = cum.back();
    std::vector<Point2> out;
    out.reserve(n + 1);
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double s = total * static_cast<double>(k) / static_cast<double>(n);
        while (seg + 2 < dense.size() && cum[seg + 1] < s) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double t = len > 0.0 ? (s - cum[seg]) / len : 0.0;
        out.push_back(add(dense[seg], scale(sub(dense[seg + 1], dense[seg]), t)));
    }
    out.push_back(out.front());
    return out;
}

std::vector<Point2> scaled_rounded(const std::vector<Point2>& pts, double factor) {
    std::vector<Point2> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back({round9(p.x * factor), round9(p.y * factor)});
    return out;
}

}  // namespace

void TrackGenParams::validate() const {
    if (n_control_points < 6) throw InvariantError("n_control_points must be >= 6");
    if (!(radius_mean > 0.0)) throw InvariantError("radius_mean must be positive");
    if (!(radius_jitter >= 0.0) || !(radius_jitter < radius_mean))
        throw InvariantError("radius_jitter must be in [0, radius_mean)");
    if (!(half_width > 0.0)) throw InvariantError("half_width must be positive");
    if (!(kappa_max > 0.0)) throw InvariantError("kappa_max must be positive");
    if (!(resample_spacing > 0.0)) throw InvariantError("resample_spacing must be positive");
    if (!(target_length >= 0.0)) throw InvariantError("target_length must be non-negative");
}

Track Track::from_centerline(std::string id, std::vector<Point2> centerline, double half_width,
                             std::uint64_t seed) {
    if (!valid_id(id)) throw InvariantError("track id must be non-empty without whitespace");
    if (centerline.size() < 4)
        throw InvariantError("track needs at least 3 distinct centerline points, got " +
                             std::to_string(centerline.size()) + " points");
    if (!(half_width > 0.0) || !std::isfinite(half_width))
        throw InvariantError("half_width must be positive");
    for (const auto& p : centerline)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvariantError("non-finite centerline point");
    if (!(dist(centerline.front(), centerline.back()) < 1e-6))
        throw InvariantError("centerline is not closed");
    for (std::size_t i = 0; i + 1 < centerline.size(); ++i) {
        const double d = dist(centerline[i], centerline[i + 1]);
        if (d < 0.01 || d > 2.0)
            throw InvariantError("centerline spacing " + std::to_string(d) + " m at index " +
                                 std::to_string(i) + " outside [0.01, 2.0]");
    }
    Track t;
    t.id_ = std::move(id);
    t.centerline_ = std::move(centerline);
    t.half_width_ = half_width;
    t.seed_ = seed;
    t.build_derived();
    return t;
}

void Track::build_derived() {
    const std::size_t n = segment_count();
    cumulative_.assign(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        cumulative_[i + 1] = cumulative_[i] + dist(centerline_[i], centerline_[i + 1]);
    total_length_ = polyline_length(centerline_);

    // Mitered offsets keep every boundary segment exactly half_width from its centerline segment.
    std::vector<Point2> normals(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 d = sub(centerline_[i + 1], centerline_[i]);
        const double len = std::hypot(d.x, d.y);
        normals[i] = {-d.y / len, d.x / len};
    }
    left_.assign(n + 1, {});
    right_.assign(n + 1, {});
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 np = normals[(i + n - 1) % n];
        const Point2 nc = normals[i];
        Point2 m = add(np, nc);
        const double mlen = std::hypot(m.x, m.y);
        m = mlen > 1e-12 ? scale(m, 1.0 / mlen) : nc;
        const double k = half_width_ / std::max(dot(m, nc), 0.1);
        left_[i] = add(centerline_[i], scale(m, k));
        right_[i] = sub(centerline_[i], scale(m, k));
    }
    left_[n] = left_[0];
    right_[n] = right_[0];

    boundary_segments_.clear();
    boundary_segments_.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) boundary_segments_.push_back({left_[i], left_[i + 1]});
    for (std::size_t i = 0; i < n; ++i) boundary_segments_.push_back({right_[i], right_[i + 1]});

    double minx = std::numeric_limits<double>::infinity(), miny = minx;
    double maxx = -minx, maxy = -minx;
    for (const auto& s : boundary_segments_) {
        for (const auto& p : {s.a, s.b}) {
            minx = std::min(minx, p.x);
            miny = std::min(miny, p.y);
            maxx = std::max(maxx, p.x);
            maxy = std::max(maxy, p.y);
        }
    }
    grid_origin_ = {minx - 1.0, miny - 1.0};
    grid_nx_ = static_cast<int>(std::ceil((maxx - minx + 2.0) / kGridCell)) + 1;
    grid_ny_ = static_cast<int>(std::ceil((maxy - miny + 2.0) / kGridCell)) + 1;
    grid_.assign(static_cast<std::size_t>(grid_nx_ * grid_ny_), {});
    for (std::uint32_t idx = 0; idx < boundary_segments_.size(); ++idx) {
        const auto& s = boundary_segments_[idx];
        const int x0 = static_cast<int>(std::floor((std::min(s.a.x, s.b.x) - grid_origin_.x) / kGridCell));
        const int x1 = static_cast<int>(std::floor((std::max(s.a.x, s.b.x) - grid_origin_.x) / kGridCell));
        const int y0 = static_cast<int>(std::floor((std::min(s.a.y, s.b.y) - grid_origin_.y) / kGridCell));
        const int y1 = static_cast<int>(std::floor((std::max(s.a.y, s.b.y) - grid_origin_.y) / kGridCell));
        for (int gx = x0; gx <= x1; ++gx)
            for (int gy = y0; gy <= y1; ++gy) grid_[static_cast<std::size_t>(gy * grid_nx_ + gx)].push_back(idx);
    }
}

double Track::max_abs_curvature() const {
    const std::size_t n = segment_count();
    double kmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = centerline_[(i + n - 1) % n];
        const Point2 b = centerline_[i];
        const Point2 c = centerline_[i + 1];
        const double denom = dist(a, b) * dist(b, c) * dist(a, c);
        if (denom <= 0.0) return std::numeric_limits<double>::infinity();
        kmax = std::max(kmax, std::abs(2.0 * cross(sub(b, a), sub(c, b)) / denom));
    }
    return kmax;
}

Projection Track::project(Point2 p) const {
    const std::size_t n = segment_count();
    Projection best;
    best.distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = centerline_[i];
        const Point2 d = sub(centerline_[i + 1], a);
        const double t = std::clamp(dot(sub(p, a), d) / dot(d, d), 0.0, 1.0);
        const double dd = dist(p, add(a, scale(d, t)));
        if (dd < best.distance) {
            best.segment = i;
            best.t = t;
            best.distance = dd;
        }
    }
    if (best.t == 1.0) {
        best.segment = (best.segment + 1) % n;
        best.t = 0.0;
    }
    const Point2 a = centerline_[best.segment];
    const Point2 d = sub(centerline_[best.segment + 1], a);
    const Point2 q = add(a, scale(d, best.t));
    const double side = cross(d, sub(p, q));
    best.offset = side > 0.0 ? best.distance : (side < 0.0 ? -best.distance : 0.0);
    best.arc = cumulative_[best.segment] + best.t * (cumulative_[best.segment + 1] - cumulative_[best.segment]);
    if (best.arc >= total_length_) best.arc -= total_length_;
    best.tangent_angle = std::atan2(d.y, d.x);
    return best;
}

double Track::cast_ray(Point2 origin, double angle, double max_range) const {
    const Point2 dir{std::cos(angle), std::sin(angle)};
    double best = max_range;

    int ix = static_cast<int>(std::floor((origin.x - grid_origin_.x) / kGridCell));
    int iy = static_cast<int>(std::floor((origin.y - grid_origin_.y) / kGridCell));
    if (ix < 0 || iy < 0 || ix >= grid_nx_ || iy >= grid_ny_) {
        for (const auto& s : boundary_segments_) best = std::min(best, ray_segment_hit(origin, dir, s.a, s.b));
        return best;
    }

    const double inf = std::numeric_limits<double>::infinity();
    const int step_x = dir.x > 0.0 ? 1 : -1;
    const int step_y = dir.y > 0.0 ? 1 : -1;
    double t_max_x = dir.x != 0.0
                         ? ((ix + (step_x > 0 ? 1 : 0)) * kGridCell + grid_origin_.x - origin.x) / dir.x
                         : inf;
    double t_max_y = dir.y != 0.0
                         ? ((iy + (step_y > 0 ? 1 : 0)) * kGridCell + grid_origin_.y - origin.y) / dir.y
                         : inf;
    const double t_delta_x = dir.x != 0.0 ? kGridCell / std::abs(dir.x) : inf;
    const double t_delta_y = dir.y != 0.0 ? kGridCell / std::abs(dir.y) : inf;

    while (true) {
        for (std::uint32_t idx : grid_[static_cast<std::size_t>(iy * grid_nx_ + ix)]) {
            const auto& s = boundary_segments_[idx];
            best = std::min(best, ray_segment_hit(origin, dir, s.a, s.b));
        }
        const double t_exit = std::min(t_max_x, t_max_y);
        if (best <= t_exit || t_exit > max_range) break;
        if (t_max_x < t_max_y) {
            ix += step_x;
            t_max_x += t_delta_x;
        } else {
            iy += step_y;
            t_max_y += t_delta_y;
        }
        if (ix < 0 || iy < 0 || ix >= grid_nx_ || iy >= grid_ny_) break;
    }
    return best;
}

bool Track::near_boundary(Point2 p, double radius) const {
    const int ix = static_cast<int>(std::floor((p.x - grid_origin_.x) / kGridCell));
    const int iy = static_cast<int>(std::floor((p.y - grid_origin_.y) / kGridCell));
    for (int gx = ix - 1; gx <= ix + 1; ++gx) {
        for (int gy = iy - 1; gy <= iy + 1; ++gy) {
            if (gx < 0 || gy < 0 || gx >= grid_nx_ || gy >= grid_ny_) continue;
            for (std::uint32_t idx : grid_[static_cast<std::size_t>(gy * grid_nx_ + gx)]) {
                const auto& s = boundary_segments_[idx];
                if (point_segment_distance(p, s.a, s.b) <= radius) return true;
            }
        }
    }
    return false;
}

Track generate_track(std::uint64_t seed, const TrackGenParams& params, std::string id) {
    params.validate();
    if (id.empty()) id = "track-" + std::to_string(seed);
    Rng rng(seed);
    const int n = params.n_control_points;
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<Point2> ctrl;
        ctrl.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double theta = 2.0 * kPi * i / n;
            const double r = params.radius_mean + rng.uniform(-params.radius_jitter, params.radius_jitter);
            ctrl.push_back({r * std::cos(theta), r * std::sin(theta)});
        }
        const auto dense = periodic_spline(ctrl, 256);
        const double dense_len = polyline_length(dense);
        const double target = params.target_length > 0.0 ? params.target_length : dense_len;
        const auto count = static_cast<std::size_t>(std::max(4L, std::lround(target / params.resample_spacing)));
        const auto resampled = resample_closed(dense, count);

        std::vector<Point2> pts;
        if (params.target_length > 0.0) {
            // Land at or just under the target so a lap never needs an extra step.
            const double raw = polyline_length(resampled);
            double goal = params.target_length;
            for (int k = 0; k < 1000; ++k) {
                pts = scaled_rounded(resampled, goal / raw);
                if (polyline_length(pts) <= params.target_length) break;
                goal -= 1e-6;
            }
        } else {
            pts = scaled_rounded(resampled, 1.0);
        }

        try {
            Track t = Track::from_centerline(id, std::move(pts), round9(params.half_width), seed);
            if (t.max_abs_curvature() <= params.kappa_max) return t;
        } catch (const InvariantError&) {
            // spacing out of range for this draw; retry
        }
    }
    throw GenerationError("track generation failed after 100 retries (seed " + std::to_string(seed) +
                          "); kappa_max or spacing infeasible for these parameters");
}

double normalize_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

CarState initial_state(const Track& track, double speed) {
    const auto& c = track.centerline();
    CarState s;
    s.x = c[0].x;
    s.y = c[0].y;
    s.heading = normalize_angle(std::atan2(c[1].y - c[0].y, c[1].x - c[0].x));
    s.speed = speed;
    return s;
}

CarState step(const Track& track, const CarState& state, double steering, const SimConfig& sim) {
    const double u = std::clamp(steering, -1.0, 1.0);
    CarState next = state;
    next.heading = normalize_angle(state.heading + u * sim.omega_max * sim.dt);
    next.x = state.x + state.speed * std::cos(next.heading) * sim.dt;
    next.y = state.y + state.speed * std::sin(next.heading) * sim.dt;

    const double length = track.total_length();
    const Projection proj = track.project({next.x, next.y});
    double prev = std::fmod(state.arc_position, length);
    if (prev < 0.0) prev += length;
    double delta = proj.arc - prev;
    if (delta > 0.5 * length) {
        delta -= length;
    } else if (delta <= -0.5 * length) {
        delta += length;
    }
    const double cap = state.speed * sim.dt * 1.5;
    delta = std::clamp(delta, -cap, cap);
    next.arc_position = state.arc_position + delta;
    next.progress = std::max(state.progress, next.arc_position);
    next.step_index = state.step_index + 1;
    return next;
}

LaneOffset lateral_offset(const Track& track, const CarState& state) {
    const Projection p = track.project({state.x, state.y});
    return {p.offset, normalize_angle(state.heading - p.tangent_angle)};
}

double ray_angle(int i, int n_rays) {
    if (n_rays == 1) return 0.0;
    return -0.5 * kPi + kPi * static_cast<double>(i) / static_cast<double>(n_rays - 1);
}

Observation observe(const Track& track, const CarState& state, const ObservationConfig& cfg) {
    Observation obs;
    obs.rays.resize(static_cast<std::size_t>(cfg.n_rays));
    const Point2 origin{state.x, state.y};
    for (int i = 0; i < cfg.n_rays; ++i) {
        const double d = track.cast_ray(origin, state.heading + ray_angle(i, cfg.n_rays), cfg.ray_max);
        obs.rays[static_cast<std::size_t>(i)] = std::clamp(d, 0.0, cfg.ray_max);
    }
    if (cfg.raster) {
        const int g = cfg.raster_size;
        const double cell = cfg.raster_extent / g;
        const double radius = cell * std::numbers::sqrt2 / 2.0;
        const Point2 fwd{std::cos(state.heading), std::sin(state.heading)};
        const Point2 left{-fwd.y, fwd.x};
        obs.raster.assign(static_cast<std::size_t>(g * g), 0.0);
        for (int r = 0; r < g; ++r) {
            for (int c = 0; c < g; ++c) {
                const double f = (r + 0.5) * cell;
                const double l = 0.5 * cfg.raster_extent - (c + 0.5) * cell;
                const Point2 p = add(origin, add(scale(fwd, f), scale(left, l)));
                if (track.near_boundary(p, radius)) obs.raster[static_cast<std::size_t>(r * g + c)] = 1.0;
            }
        }
    }
    return obs;
}

std::vector<double> features(const Observation& obs, const ObservationConfig& cfg) {
    if (cfg.raster) return obs.raster;
    std::vector<double> f(obs.rays.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = obs.rays[i] / cfg.ray_max;
    return f;
}

int feature_dim(const ObservationConfig& cfg) {
    return cfg.raster ? cfg.raster_size * cfg.raster_size : cfg.n_rays;
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::Running: return "running";
        case Termination::OutOfLane: return "out_of_lane";
        case Termination::LapComplete: return "lap_complete";
        case Termination::StepLimit: return "step_limit";
    }
    return "unknown";
}

Termination termination_from_string(const std::string& s) {
    for (auto t : {Termination::Running, Termination::OutOfLane, Termination::LapComplete, Termination::StepLimit})
        if (s == to_string(t)) return t;
    throw FormatError("unknown termination: " + s);
}

Termination is_terminated(const Track& track, const CarState& state, int max_steps) {
    const Projection p = track.project({state.x, state.y});
    if (std::abs(p.offset) > track.half_width()) return Termination::OutOfLane;
    if (state.progress >= track.total_length()) return Termination::LapComplete;
    if (state.step_index >= max_steps) return Termination::StepLimit;
    return Termination::Running;
}

void write_track(std::ostream& os, const Track& track) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.9g", track.half_width());
    os << "track-v1 " << track.id() << ' ' << buf << ' ' << track.seed() << '\n';
    for (const auto& p : track.centerline()) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g\n", p.x, p.y);
        os << buf;
    }
}

Track read_track(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty track file");
    std::istringstream header(line);
    std::string version, id, hw_text, seed_text, extra;
    header >> version;
    if (version != "track-v1") throw VersionError("unsupported track file version: '" + version + "'");
    if (!(header >> id >> hw_text >> seed_text) || (header >> extra))
        throw FormatError("malformed track header: '" + line + "'");
    double half_width = 0.0;
    std::uint64_t seed = 0;
    try {
        std::size_t pos = 0;
        half_width = std::stod(hw_text, &pos);
        if (pos != hw_text.size()) throw FormatError("bad half_width");
        if (seed_text.empty() || seed_text[0] == '-') throw FormatError("bad seed");
        seed = std::stoull(seed_text, &pos);
        if (pos != seed_text.size()) throw FormatError("bad seed");
    } catch (const std::logic_error&) {
        throw FormatError("malformed track header: '" + line + "'");
    }

    std::vector<Point2> pts;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        Point2 p;
        if (!(row >> p.x >> p.y) || (row >> extra))
            throw FormatError("malformed track point at line " + std::to_string(line_no));
        pts.push_back(p);
    }
    return Track::from_centerline(std::move(id), std::move(pts), half_width, seed);
}

void save_track(const std::filesystem::path& path, const Track& track) {
    std::ostringstream os;
    write_track(os, track);
    atomic_write(path, os.str());
}

Track load_track(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open track file: " + path.string());
    return read_track(in);
}

}  // namespace metadagger
