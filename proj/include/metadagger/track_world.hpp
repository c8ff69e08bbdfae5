#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace metadagger {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

struct TrackGenParams {
    int n_control_points = 10;
    double radius_mean = 80.0;
    double radius_jitter = 25.0;
    double half_width = 4.0;
    double kappa_max = 0.055;
    double resample_spacing = 1.0;
    /// Centerline length the track is scaled to after generation; 0 disables scaling.
    double target_length = 500.0;

    void validate() const;
};

/// Result of projecting a point onto the centerline.
struct Projection {
    std::size_t segment = 0;
    double t = 0.0;         // position along the segment in [0, 1]
    double distance = 0.0;  // unsigned distance to the closest point
    double offset = 0.0;    // signed, positive = left of travel direction
    double arc = 0.0;       // centerline arc length of the closest point, in [0, total_length)
    double tangent_angle = 0.0;
};

/// Closed centerline with a constant lane half-width. Immutable once built;
/// the boundary polylines and a uniform-grid index over them are derived at
/// construction and never serialized.
class Track {
public:
    /// Validates the invariants and builds derived geometry. The centerline
    /// must be closed (last point equal to the first).
    static Track from_centerline(std::string id, std::vector<Point2> centerline, double half_width,
                                 std::uint64_t seed);

    const std::string& id() const noexcept { return id_; }
    const std::vector<Point2>& centerline() const noexcept { return centerline_; }
    double half_width() const noexcept { return half_width_; }
    double total_length() const noexcept { return total_length_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t segment_count() const noexcept { return centerline_.size() - 1; }

    /// Arc length at the start of segment i.
    double arc_at(std::size_t i) const { return cumulative_[i]; }

    /// Maximum absolute discrete (Menger) curvature over all vertices, cyclic.
    double max_abs_curvature() const;

    /// Nearest point on the centerline over every segment. Exact ties resolve
    /// to the lowest segment index, except that a vertex belongs to the
    /// segment it starts.
    Projection project(Point2 p) const;

    /// Distance along the ray to the first lane boundary hit, or max_range.
    double cast_ray(Point2 origin, double angle, double max_range) const;

    /// True if some lane boundary segment lies within `radius` of p.
    /// `radius` must not exceed the grid cell size (4 m).
    bool near_boundary(Point2 p, double radius) const;

    const std::vector<Point2>& left_boundary() const noexcept { return left_; }
    const std::vector<Point2>& right_boundary() const noexcept { return right_; }

    /// Equality over the persisted fields.
    friend bool operator==(const Track& a, const Track& b) {
        return a.id_ == b.id_ && a.centerline_ == b.centerline_ && a.half_width_ == b.half_width_ &&
               a.seed_ == b.seed_ && a.total_length_ == b.total_length_;
    }

    static constexpr double kGridCell = 4.0;

private:
    Track() = default;
    void build_derived();

    std::string id_;
    std::vector<Point2> centerline_;
    double half_width_ = 0.0;
    double total_length_ = 0.0;
    std::uint64_t seed_ = 0;

    std::vector<double> cumulative_;
    std::vector<Point2> left_;
    std::vector<Point2> right_;

    struct Segment {
        Point2 a;
        Point2 b;
    };
    std::vector<Segment> boundary_segments_;
    Point2 grid_origin_;
    int grid_nx_ = 0;
    int grid_ny_ = 0;
    std::vector<std::vector<std::uint32_t>> grid_;
};

/// Jittered-circle control points, periodic cubic spline, uniform arc-length
/// resampling, scaling to the target length, curvature rejection. Coordinates
/// are rounded to 9 significant digits so the track file round-trips exactly.
Track generate_track(std::uint64_t seed, const TrackGenParams& params, std::string id = {});

struct SimConfig {
    double speed = 10.0;      // m/s
    double dt = 0.05;         // s
    double omega_max = 0.6;   // rad/s at full steering
};

struct ObservationConfig {
    int n_rays = 19;
    double ray_max = 50.0;
    bool raster = false;      // feed the occupancy raster to the learner instead of rays
    int raster_size = 16;     // G
    double raster_extent = 32.0;  // side of the forward window, meters
};

struct WorldConfig {
    SimConfig sim;
    ObservationConfig observation;
};

struct CarState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double speed = 0.0;
    double progress = 0.0;      // monotone arc-length accumulator
    double arc_position = 0.0;  // unwrapped centerline coordinate, may dip below progress
    int step_index = 0;

    friend bool operator==(const CarState&, const CarState&) = default;
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

/// Car at the first centerline point, aligned with the first segment.
CarState initial_state(const Track& track, double speed);

/// Unicycle update with steering-proportional yaw rate. Steering is clamped to [-1, 1].
CarState step(const Track& track, const CarState& state, double steering, const SimConfig& sim);

struct LaneOffset {
    double offset = 0.0;         // meters, positive = left
    double heading_error = 0.0;  // car heading minus local tangent, in (-pi, pi]
};

LaneOffset lateral_offset(const Track& track, const CarState& state);

struct Observation {
    std::vector<double> rays;    // meters, ego-frame angles evenly spaced in [-90 deg, +90 deg]
    std::vector<double> raster;  // row-major G x G, row 0 nearest the car, empty when disabled
};

Observation observe(const Track& track, const CarState& state, const ObservationConfig& cfg);

/// Ego-frame angle of ray i.
double ray_angle(int i, int n_rays);

/// Learner input: rays scaled by 1/ray_max, or the flattened raster.
std::vector<double> features(const Observation& obs, const ObservationConfig& cfg);

/// Feature dimension produced by `features` for this config.
int feature_dim(const ObservationConfig& cfg);

enum class Termination { Running, OutOfLane, LapComplete, StepLimit };

const char* to_string(Termination t);
Termination termination_from_string(const std::string& s);

/// Precedence: OutOfLane, LapComplete, StepLimit, Running.
Termination is_terminated(const Track& track, const CarState& state, int max_steps);

void write_track(std::ostream& os, const Track& track);
Track read_track(std::istream& is);
void save_track(const std::filesystem::path& path, const Track& track);
Track load_track(const std::filesystem::path& path);

}  // namespace metadagger
