#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metadagger/expert.hpp"
#include "metadagger/policy.hpp"
#include "metadagger/track_world.hpp"

namespace metadagger {

/// One labeled state: learner features and the expert's steering.
struct Sample {
    std::vector<double> features;
    double a_ref = 0.0;
    std::string track_id;
    int step_index = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Provenance { Collection, Aggregation };

/// Append-only sample store (L_train and M_train).
class Dataset {
public:
    explicit Dataset(int d_in, Provenance provenance = Provenance::Collection, int iteration = 0);

    /// Rejects dimension mismatches, |a_ref| > 1 and non-finite features.
    void append(Sample sample);
    void append(const Dataset& other);

    int d_in() const noexcept { return d_in_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    const std::vector<Sample>& samples() const noexcept { return samples_; }

    Provenance provenance() const noexcept { return provenance_; }
    int iteration() const noexcept { return iteration_; }
    void set_provenance(Provenance p, int iteration) {
        provenance_ = p;
        iteration_ = iteration;
    }

    /// d_in x N, one sample per column.
    Eigen::MatrixXd inputs() const;
    Eigen::VectorXd targets() const;

    /// Compares dimension and samples; provenance is not persisted.
    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.d_in_ == b.d_in_ && a.samples_ == b.samples_;
    }

private:
    int d_in_;
    std::vector<Sample> samples_;
    Provenance provenance_;
    int iteration_;
};

void write_dataset(std::ostream& os, const Dataset& ds);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

/// The training environment pool. Aggregation only ever accepts this type,
/// so held-out tracks cannot reach a training code path.
class TrainingTracks {
public:
    TrainingTracks() = default;
    explicit TrainingTracks(std::vector<Track> tracks) : tracks_(std::move(tracks)) {}

    const std::vector<Track>& tracks() const noexcept { return tracks_; }
    std::size_t size() const noexcept { return tracks_.size(); }
    bool empty() const noexcept { return tracks_.empty(); }
    const Track& operator[](std::size_t i) const { return tracks_.at(i); }

private:
    std::vector<Track> tracks_;
};

enum class RefitMode { Warm, Scratch };

struct AggregationConfig {
    int n_iter = 20;  // aggregation episodes; should exceed the number of training tracks
    int n_steps = 1000;
    double tolerance_rel = 0.40;
    double tolerance_floor = 0.05;
    TrainConfig train;
    RefitMode refit_mode = RefitMode::Warm;
    std::vector<int> hidden{64, 32};
    std::uint64_t model_seed = 0;
    int dagger_iterations = 10;  // single-track DAgger budget, expert iteration included

    /// Throws on hard violations; returns a warning when n_iter <= n_train_tracks.
    std::optional<std::string> validate(std::size_t n_train_tracks) const;
};

/// |a_learner - a_ref| > tolerance_rel * max(|a_ref|, tolerance_floor)
bool is_incorrect(double a_learner, double a_ref, const AggregationConfig& cfg);

/// What an actor sees at one simulation step.
struct StepInfo {
    const Track& track;
    const CarState& state;
    std::span<const double> features;
    double a_ref;  // NaN when no expert is attached
};

using Actor = std::function<double(const StepInfo&)>;

struct EpisodeOutcome {
    int survived_steps = 0;
    Termination termination = Termination::Running;
    double lap_fraction = 0.0;
    CarState final_state;
};

/// Closed-loop rollout from the start line. The expert, when given, is
/// queried at every visited state (a_ref). With stop_at_lap false the car keeps
/// driving past the first lap and a StepLimit ending after a full lap is
/// reported as LapComplete.
EpisodeOutcome run_episode(const Track& track, const WorldConfig& world, const PidGains* expert, int max_steps,
                           bool stop_at_lap, const Actor& actor,
                           const std::function<void(const StepInfo&, double action)>& on_step = {});

/// True when the episode did not leave the lane (a full n_steps episode is one lap).
bool completed_lap(const EpisodeOutcome& outcome);

struct EpisodeRecord {
    int iteration = 0;
    std::string track_id;
    int survived_steps = 0;
    Termination termination = Termination::Running;
    double lap_fraction = 0.0;
    int samples_aggregated = 0;
    std::size_t l_train_size = 0;
    std::size_t m_train_size = 0;
};

/// Expert rollouts of n_steps on every training track, concatenated into M_train.
/// Throws CompetenceError naming the track if the expert leaves the lane.
Dataset collect_demonstrations(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                               int n_steps, std::vector<EpisodeRecord>* records = nullptr);

/// Fresh Xavier model trained on M_train.
TrainResult behavior_cloning(const Dataset& m_train, const std::vector<int>& hidden, std::uint64_t model_seed,
                             const TrainConfig& train);

std::vector<int> layer_sizes_for(int d_in, const std::vector<int>& hidden);

/// Instrumentation points; all optional.
struct AggregationHooks {
    /// Steering executed by the learner. Defaults to the clamped network output.
    std::function<double(const PolicyModel& learner, const StepInfo&)> step_policy;
    /// Called for every aggregated sample with the learner and reference actions.
    std::function<void(double a_learner, double a_ref)> on_append;
    /// Called once per aggregation episode with M before, L at episode start,
    /// L after refit and M after the save-back.
    std::function<void(int episode, const PolicyModel& meta_before, const PolicyModel& low_start,
                       const PolicyModel& low_end, const PolicyModel& meta_after)>
        on_handoff;
    /// Called with the current model after behavior cloning (episode 0) and after every episode.
    std::function<void(int episode, const PolicyModel& model, std::size_t dataset_size)> after_episode;
};

struct AggregationResult {
    PolicyModel model;
    Dataset m_train{1};
    Dataset l_train{1};
    std::vector<EpisodeRecord> collection;
    std::vector<EpisodeRecord> history;
    std::vector<double> bc_loss_trace;
    std::vector<double> last_loss_trace;
};

/// MetaDAgger: demonstrations on every training track, behavior cloning of M,
/// then n_iter round-robin episodes. Each episode initializes L from M, drives
/// with L, aggregates only the incorrect actions into L_train, refits L on
/// the whole L_train and saves L back into M. Pre-collected demonstrations,
/// when given, replace the collection step.
AggregationResult metadagger(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                             const AggregationConfig& cfg, const AggregationHooks& hooks = {},
                             const Dataset* demonstrations = nullptr);

/// DAgger over the pooled training tracks: same demonstrations and episode
/// order as metadagger, but every visited state is labeled and the single
/// model is refit from scratch after each episode.
AggregationResult dagger_pooled(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                                const AggregationConfig& cfg, const AggregationHooks& hooks = {},
                                const Dataset* demonstrations = nullptr);

/// Classic single-environment DAgger on tracks[track_index]: iteration 1 is
/// the expert (beta = 1), later iterations drive the learner (beta = 0) and
/// label every visited state; refit from scratch every iteration.
AggregationResult dagger_baseline(const TrainingTracks& tracks, std::size_t track_index, const PidGains& expert,
                                  const WorldConfig& world, const AggregationConfig& cfg,
                                  const AggregationHooks& hooks = {});

/// Counting the demonstration step as iteration 1, the iteration whose learner
/// episode on `track_id` first finishes without leaving the lane.
std::optional<int> metadagger_iterations_to_lap(const AggregationResult& result, const std::string& track_id,
                                                std::size_t n_train_tracks);
std::optional<int> dagger_iterations_to_lap(const AggregationResult& result);

}  // namespace metadagger
