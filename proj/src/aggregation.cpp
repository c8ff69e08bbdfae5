#include "metadagger/aggregation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "metadagger/errors.hpp"
#include "metadagger/io.hpp"
#include "metadagger/random.hpp"

namespace metadagger {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view text, std::size_t line_no) {
    text = trim(text);
    T v{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw FormatError("malformed number '" + std::string(text) + "' at line " + std::to_string(line_no));
    return v;
}

// Shuffle stream for the refit after a given episode.
TrainConfig refit_config(const TrainConfig& base, int episode) {
    TrainConfig c = base;
    c.shuffle_seed = derive_seed(base.shuffle_seed, "refit/" + std::to_string(episode));
    return c;
}

double default_step(const PolicyModel& model, const StepInfo& info) { return forward(model, info.features); }

struct Style {
    bool mistakes_only;
    bool warm_start;
};

AggregationResult aggregate_loop(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                                 const AggregationConfig& cfg, const AggregationHooks& hooks, Style style,
                                 const Dataset* demonstrations) {
    if (tracks.empty()) throw InvariantError("training set is empty");
    cfg.validate(tracks.size());
    const int d_in = feature_dim(world.observation);

    AggregationResult result;
    if (demonstrations != nullptr) {
        if (demonstrations->d_in() != d_in) throw DimensionError("demonstrations do not match the observation dimension");
        if (demonstrations->empty()) throw TrainingError("demonstration dataset is empty");
        result.m_train = *demonstrations;
    } else {
        result.m_train = collect_demonstrations(tracks, expert, world, cfg.n_steps, &result.collection);
    }
    // L_train is a running accumulator that starts from the collected demonstrations.
    result.l_train = result.m_train;
    result.l_train.set_provenance(Provenance::Aggregation, 0);

    TrainResult bc = behavior_cloning(result.m_train, cfg.hidden, cfg.model_seed, cfg.train);
    result.bc_loss_trace = bc.loss_trace;
    result.last_loss_trace = bc.loss_trace;
    PolicyModel meta = std::move(bc.model);
    if (hooks.after_episode) hooks.after_episode(0, meta, result.l_train.size());

    const auto step_policy = hooks.step_policy ? hooks.step_policy : default_step;
    const std::vector<int> sizes = layer_sizes_for(d_in, cfg.hidden);

    for (int episode = 1; episode <= cfg.n_iter; ++episode) {
        const Track& track = tracks[static_cast<std::size_t>(episode - 1) % tracks.size()];
        PolicyModel low = meta;
        const PolicyModel low_start = low;

        int aggregated = 0;
        result.l_train.set_provenance(Provenance::Aggregation, episode);
        const EpisodeOutcome outcome = run_episode(
            track, world, &expert, cfg.n_steps, true, [&](const StepInfo& info) { return step_policy(low, info); },
            [&](const StepInfo& info, double action) {
                if (style.mistakes_only && !is_incorrect(action, info.a_ref, cfg)) return;
                result.l_train.append(Sample{{info.features.begin(), info.features.end()}, info.a_ref, track.id(),
                                             info.state.step_index});
                ++aggregated;
                if (hooks.on_append) hooks.on_append(action, info.a_ref);
            });

        const bool warm = style.warm_start && cfg.refit_mode == RefitMode::Warm;
        PolicyModel start = warm ? std::move(low) : init_model(sizes, cfg.model_seed);
        TrainResult fit = train(std::move(start), result.l_train.inputs(), result.l_train.targets(),
                                refit_config(cfg.train, episode));
        low = std::move(fit.model);
        result.last_loss_trace = std::move(fit.loss_trace);

        const PolicyModel meta_before = meta;
        meta = low;
        if (hooks.on_handoff) hooks.on_handoff(episode, meta_before, low_start, low, meta);

        result.history.push_back({episode, track.id(), outcome.survived_steps, outcome.termination,
                                  outcome.lap_fraction, aggregated, result.l_train.size(), result.m_train.size()});
        if (hooks.after_episode) hooks.after_episode(episode, meta, result.l_train.size());
    }
    result.model = std::move(meta);
    return result;
}

}  // namespace

Dataset::Dataset(int d_in, Provenance provenance, int iteration)
    : d_in_(d_in), provenance_(provenance), iteration_(iteration) {
    if (d_in < 1) throw InvariantError("dataset dimension must be positive");
}

void Dataset::append(Sample sample) {
    if (static_cast<int>(sample.features.size()) != d_in_)
        throw DimensionError("sample has " + std::to_string(sample.features.size()) + " features, dataset expects " +
                             std::to_string(d_in_));
    if (!(std::abs(sample.a_ref) <= 1.0)) throw InvariantError("a_ref outside [-1, 1]");
    for (double v : sample.features)
        if (!std::isfinite(v)) throw InvariantError("non-finite feature");
    samples_.push_back(std::move(sample));
}

void Dataset::append(const Dataset& other) {
    if (other.d_in_ != d_in_) throw DimensionError("cannot merge datasets of different dimension");
    samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
}

Eigen::MatrixXd Dataset::inputs() const {
    Eigen::MatrixXd x(d_in_, static_cast<Eigen::Index>(samples_.size()));
    for (std::size_t j = 0; j < samples_.size(); ++j)
        for (int i = 0; i < d_in_; ++i) x(i, static_cast<Eigen::Index>(j)) = samples_[j].features[static_cast<std::size_t>(i)];
    return x;
}

Eigen::VectorXd Dataset::targets() const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(samples_.size()));
    for (std::size_t j = 0; j < samples_.size(); ++j) y(static_cast<Eigen::Index>(j)) = samples_[j].a_ref;
    return y;
}

void write_dataset(std::ostream& os, const Dataset& ds) {
    os << "dataset-v1 " << ds.d_in() << '\n';
    for (const auto& s : ds.samples()) {
        os << s.track_id << ',' << s.step_index << ',' << format_exact(s.a_ref);
        for (double v : s.features) os << ',' << format_exact(v);
        os << '\n';
    }
}

Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty dataset file");
    std::istringstream header(line);
    std::string version;
    int d_in = 0;
    header >> version;
    if (version != "dataset-v1") throw VersionError("unsupported dataset file version: '" + version + "'");
    if (!(header >> d_in) || d_in < 1) throw FormatError("malformed dataset header: '" + line + "'");

    Dataset ds(d_in);
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != static_cast<std::size_t>(d_in) + 3)
            throw FormatError("dataset row at line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected " + std::to_string(d_in + 3));
        Sample s;
        s.track_id = std::string(trim(fields[0]));
        if (s.track_id.empty()) throw FormatError("empty track id at line " + std::to_string(line_no));
        s.step_index = parse_number<int>(fields[1], line_no);
        s.a_ref = parse_number<double>(fields[2], line_no);
        s.features.reserve(static_cast<std::size_t>(d_in));
        for (std::size_t i = 3; i < fields.size(); ++i) s.features.push_back(parse_number<double>(fields[i], line_no));
        try {
            ds.append(std::move(s));
        } catch (const InvariantError& e) {
            throw InvariantError(std::string(e.what()) + " at line " + std::to_string(line_no));
        }
    }
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ostringstream os;
    write_dataset(os, ds);
    atomic_write(path, os.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open dataset file: " + path.string());
    return read_dataset(in);
}

std::optional<std::string> AggregationConfig::validate(std::size_t n_train_tracks) const {
    train.validate();
    if (n_iter < 0) throw InvariantError("n_iter must be non-negative");
    if (n_steps < 1) throw InvariantError("n_steps must be >= 1");
    if (!(tolerance_rel > 0.0 && tolerance_rel < 1.0)) throw InvariantError("tolerance_rel must be in (0, 1)");
    if (!(tolerance_floor >= 0.0)) throw InvariantError("tolerance_floor must be non-negative");
    if (dagger_iterations < 1) throw InvariantError("dagger_iterations must be >= 1");
    for (int h : hidden)
        if (h < 1) throw InvariantError("hidden layer sizes must be positive");
    if (static_cast<std::size_t>(n_iter) <= n_train_tracks)
        return "n_iter (" + std::to_string(n_iter) + ") does not exceed the number of training tracks (" +
               std::to_string(n_train_tracks) + "); some tracks get no second pass";
    return std::nullopt;
}

bool is_incorrect(double a_learner, double a_ref, const AggregationConfig& cfg) {
    return std::abs(a_learner - a_ref) > cfg.tolerance_rel * std::max(std::abs(a_ref), cfg.tolerance_floor);
}

EpisodeOutcome run_episode(const Track& track, const WorldConfig& world, const PidGains* expert, int max_steps,
                           bool stop_at_lap, const Actor& actor,
                           const std::function<void(const StepInfo&, double action)>& on_step) {
    std::optional<Expert> demonstrator;
    if (expert != nullptr) demonstrator.emplace(*expert);
    CarState state = initial_state(track, world.sim.speed);
    Termination term = Termination::Running;
    while (true) {
        term = is_terminated(track, state, max_steps);
        if (term == Termination::LapComplete && !stop_at_lap)
            term = state.step_index >= max_steps ? Termination::StepLimit : Termination::Running;
        if (term != Termination::Running) break;

        const Observation obs = observe(track, state, world.observation);
        const std::vector<double> feats = features(obs, world.observation);
        const double a_ref = demonstrator ? demonstrator->act(track, state, world.sim.dt)
                                          : std::numeric_limits<double>::quiet_NaN();
        const StepInfo info{track, state, feats, a_ref};
        const double action = std::clamp(actor(info), -1.0, 1.0);
        if (on_step) on_step(info, action);
        state = step(track, state, action, world.sim);
    }
    EpisodeOutcome out;
    out.final_state = state;
    out.lap_fraction = state.progress / track.total_length();
    out.survived_steps = term == Termination::OutOfLane ? state.step_index - 1 : state.step_index;
    out.termination = term;
    if (term == Termination::StepLimit && state.progress >= track.total_length()) out.termination = Termination::LapComplete;
    return out;
}

bool completed_lap(const EpisodeOutcome& outcome) { return outcome.termination != Termination::OutOfLane; }

Dataset collect_demonstrations(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                               int n_steps, std::vector<EpisodeRecord>* records) {
    Dataset m_train(feature_dim(world.observation), Provenance::Collection, 0);
    for (const Track& track : tracks.tracks()) {
        Dataset l_train(m_train.d_in(), Provenance::Collection, 0);
        const EpisodeOutcome outcome = run_episode(
            track, world, &expert, n_steps, false, [](const StepInfo& info) { return info.a_ref; },
            [&](const StepInfo& info, double) {
                l_train.append(Sample{{info.features.begin(), info.features.end()}, info.a_ref, track.id(),
                                      info.state.step_index});
            });
        if (outcome.termination == Termination::OutOfLane)
            throw CompetenceError("expert left the lane on training track " + track.id() + " after " +
                                  std::to_string(outcome.survived_steps) + " steps");
        m_train.append(l_train);
        if (records != nullptr)
            records->push_back({0, track.id(), outcome.survived_steps, outcome.termination, outcome.lap_fraction,
                                static_cast<int>(l_train.size()), m_train.size(), m_train.size()});
    }
    return m_train;
}

std::vector<int> layer_sizes_for(int d_in, const std::vector<int>& hidden) {
    std::vector<int> sizes;
    sizes.reserve(hidden.size() + 2);
    sizes.push_back(d_in);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return sizes;
}

TrainResult behavior_cloning(const Dataset& m_train, const std::vector<int>& hidden, std::uint64_t model_seed,
                             const TrainConfig& train_cfg) {
    if (m_train.empty()) throw TrainingError("behavior cloning needs a non-empty M_train");
    PolicyModel model = init_model(layer_sizes_for(m_train.d_in(), hidden), model_seed);
    return train(std::move(model), m_train.inputs(), m_train.targets(), train_cfg);
}

AggregationResult metadagger(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                             const AggregationConfig& cfg, const AggregationHooks& hooks,
                             const Dataset* demonstrations) {
    return aggregate_loop(tracks, expert, world, cfg, hooks, Style{true, true}, demonstrations);
}

AggregationResult dagger_pooled(const TrainingTracks& tracks, const PidGains& expert, const WorldConfig& world,
                                const AggregationConfig& cfg, const AggregationHooks& hooks,
                                const Dataset* demonstrations) {
    return aggregate_loop(tracks, expert, world, cfg, hooks, Style{false, false}, demonstrations);
}

AggregationResult dagger_baseline(const TrainingTracks& tracks, std::size_t track_index, const PidGains& expert,
                                  const WorldConfig& world, const AggregationConfig& cfg,
                                  const AggregationHooks& hooks) {
    const Track& track = tracks[track_index];
    cfg.train.validate();
    const int d_in = feature_dim(world.observation);
    const std::vector<int> sizes = layer_sizes_for(d_in, cfg.hidden);
    const auto step_policy = hooks.step_policy ? hooks.step_policy : default_step;

    AggregationResult result;
    result.m_train = Dataset(d_in, Provenance::Collection, 1);
    result.l_train = Dataset(d_in, Provenance::Collection, 1);
    PolicyModel model = init_model(sizes, cfg.model_seed);

    for (int iteration = 1; iteration <= cfg.dagger_iterations; ++iteration) {
        const bool expert_turn = iteration == 1;
        if (!expert_turn) result.l_train.set_provenance(Provenance::Aggregation, iteration);
        int aggregated = 0;
        const EpisodeOutcome outcome = run_episode(
            track, world, &expert, cfg.n_steps, !expert_turn,
            [&](const StepInfo& info) { return expert_turn ? info.a_ref : step_policy(model, info); },
            [&](const StepInfo& info, double action) {
                result.l_train.append(Sample{{info.features.begin(), info.features.end()}, info.a_ref, track.id(),
                                             info.state.step_index});
                ++aggregated;
                if (hooks.on_append) hooks.on_append(action, info.a_ref);
            });
        if (expert_turn) {
            if (outcome.termination == Termination::OutOfLane)
                throw CompetenceError("expert left the lane on training track " + track.id());
            result.m_train = result.l_train;
        }

        TrainResult fit = train(init_model(sizes, cfg.model_seed), result.l_train.inputs(), result.l_train.targets(),
                                refit_config(cfg.train, iteration));
        model = std::move(fit.model);
        if (expert_turn) result.bc_loss_trace = fit.loss_trace;
        result.last_loss_trace = std::move(fit.loss_trace);

        EpisodeRecord rec{iteration,          track.id(), outcome.survived_steps, outcome.termination,
                          outcome.lap_fraction, aggregated, result.l_train.size(), result.m_train.size()};
        if (expert_turn) {
            result.collection.push_back(rec);
        } else {
            result.history.push_back(rec);
        }
        if (hooks.after_episode) hooks.after_episode(iteration, model, result.l_train.size());
    }
    result.model = std::move(model);
    return result;
}

std::optional<int> metadagger_iterations_to_lap(const AggregationResult& result, const std::string& track_id,
                                                std::size_t n_train_tracks) {
    for (const auto& rec : result.history) {
        if (rec.track_id != track_id || rec.termination == Termination::OutOfLane) continue;
        const int pass = (rec.iteration - 1) / static_cast<int>(n_train_tracks) + 1;
        return pass + 1;
    }
    return std::nullopt;
}

std::optional<int> dagger_iterations_to_lap(const AggregationResult& result) {
    for (const auto& rec : result.history)
        if (rec.termination != Termination::OutOfLane) return rec.iteration;
    return std::nullopt;
}

}  // namespace metadagger
