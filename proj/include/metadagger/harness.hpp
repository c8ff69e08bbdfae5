#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "metadagger/aggregation.hpp"
#include "metadagger/expert.hpp"
#include "metadagger/policy.hpp"
#include "metadagger/track_world.hpp"

namespace metadagger {

/// Held-out tracks. Deliberately not convertible to TrainingTracks.
class TestTracks {
public:
    TestTracks() = default;
    explicit TestTracks(std::vector<Track> tracks) : tracks_(std::move(tracks)) {}

    const std::vector<Track>& tracks() const noexcept { return tracks_; }
    std::size_t size() const noexcept { return tracks_.size(); }
    bool empty() const noexcept { return tracks_.empty(); }
    const Track& operator[](std::size_t i) const { return tracks_.at(i); }

private:
    std::vector<Track> tracks_;
};

struct Split {
    TrainingTracks train;
    TestTracks test;
};

struct ExperimentConfig {
    int n_train_tracks = 10;
    int n_test_tracks = 9;
    std::uint64_t master_seed = 1;
    std::vector<std::uint64_t> replicate_seeds{1, 2, 3, 4, 5};
    int eval_max_steps = 2000;
    bool saliency_per_frame = false;
    TrackGenParams track;
    WorldConfig world;
    PidGains expert;
    AggregationConfig aggregation;

    void validate() const;
};

/// Aggregation settings with the model and shuffle seeds derived from `seed`.
AggregationConfig aggregation_for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// n_train + n_test tracks from seeds derived from master_seed; the first
/// n_train are training tracks. Ids are `track-NN`.
Split make_split(std::uint64_t master_seed, const ExperimentConfig& cfg);

struct EpisodeResult {
    std::string track_id;
    int survived_steps = 0;
    Termination termination = Termination::Running;
    double lap_fraction = 0.0;
    int samples_aggregated = 0;
};

/// Closed-loop rollout of the clamped policy for up to eval_max_steps, driving
/// on past completed laps. No data collection, no learning.
EpisodeResult evaluate(const PolicyModel& model, const Track& track, const WorldConfig& world, int eval_max_steps);

/// Same rollout for an arbitrary actor. The expert, when given, fills StepInfo::a_ref.
EpisodeResult evaluate_actor(const Actor& actor, const Track& track, const WorldConfig& world,
                             const PidGains* expert, int eval_max_steps);

struct ReportRow {
    std::uint64_t seed = 0;
    std::string algorithm;
    std::string phase;  // collect | aggregate | eval | fig8
    int iteration = 0;
    std::string track_id;
    std::string split;  // train | test
    int survived_steps = 0;
    double lap_fraction = 0.0;
    Termination termination = Termination::Running;
    int samples_aggregated = 0;
    std::size_t dataset_size = 0;
};

struct LapIterations {
    std::uint64_t seed = 0;
    std::string track_id;
    std::optional<int> metadagger;
    std::optional<int> dagger;
    double bc_lap_fraction = 0.0;  // first learner episode on the designated track
};

struct SaliencySummary {
    std::uint64_t seed = 0;
    std::string track_id;
    int raster_size = 0;  // > 0 when the attribution is a G x G heat map
    std::vector<double> mean;
    std::vector<std::vector<double>> frames;  // only with saliency_per_frame
};

struct Report {
    std::vector<std::uint64_t> seeds;
    std::vector<ReportRow> rows;
    std::vector<LapIterations> iterations_to_first_lap;
    std::vector<double> bc_training_mse;  // per seed
    int n_train_tracks = 0;
    int n_iter = 0;
    std::string config_echo;
    std::optional<SaliencySummary> saliency;
};

inline constexpr const char* kReportHeader =
    "seed,algorithm,phase,iteration,track_id,split,survived_steps,lap_fraction,termination,samples_aggregated,"
    "dataset_size";

/// Runs MetaDAgger, pooled DAgger and single-track DAgger for every
/// replicate seed, evaluating the current model on every test track after
/// behavior cloning and after each aggregation episode.
Report run_comparison(const ExperimentConfig& cfg);

/// Throws if any dataset sample carries a test-track id.
void assert_test_hygiene(const Dataset& ds, const TestTracks& test);

/// Mean attribution over the frames of one evaluation rollout.
SaliencySummary saliency_rollout(const PolicyModel& model, const Track& track, const WorldConfig& world,
                                 int eval_max_steps, bool keep_frames);

std::string report_csv(const Report& report);
std::string saliency_csv(const SaliencySummary& s);
/// Bar chart per ray, or a heat map in raster mode.
std::string saliency_svg(const SaliencySummary& s);

/// report.csv, fig4.svg, fig5.svg, fig8.svg, saliency.csv, saliency.svg, config.txt
void emit_report(const Report& report, const std::filesystem::path& out_dir);

/// Mean and standard error of test-track survived steps for one algorithm at
/// an eval iteration, across seeds (seed mean over tracks first).
struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};
MeanSe test_steps_at(const Report& report, const std::string& algorithm, int iteration);

}  // namespace metadagger
