#include "metadagger/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "metadagger/config.hpp"
#include "metadagger/errors.hpp"
#include "metadagger/io.hpp"
#include "metadagger/random.hpp"
#include "metadagger/svg.hpp"

namespace metadagger {

namespace {

std::string track_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "track-%02d", index);
    return buf;
}

int phase_rank(const std::string& phase) {
    static const std::map<std::string, int> ranks{{"collect", 0}, {"aggregate", 1}, {"eval", 2}, {"fig8", 3}};
    const auto it = ranks.find(phase);
    return it == ranks.end() ? 4 : it->second;
}

ReportRow episode_row(std::uint64_t seed, const std::string& algorithm, const std::string& phase,
                      const EpisodeRecord& rec, std::size_t dataset_size) {
    ReportRow r;
    r.seed = seed;
    r.algorithm = algorithm;
    r.phase = phase;
    r.iteration = rec.iteration;
    r.track_id = rec.track_id;
    r.split = "train";
    r.survived_steps = rec.survived_steps;
    r.lap_fraction = rec.lap_fraction;
    r.termination = rec.termination;
    r.samples_aggregated = rec.samples_aggregated;
    r.dataset_size = dataset_size;
    return r;
}

AggregationHooks eval_hooks(std::vector<ReportRow>& rows, std::uint64_t seed, const std::string& algorithm,
                            const TestTracks& test, const ExperimentConfig& cfg) {
    AggregationHooks hooks;
    hooks.after_episode = [&rows, seed, algorithm, &test, &cfg](int episode, const PolicyModel& model,
                                                                  std::size_t dataset_size) {
        for (const Track& t : test.tracks()) {
            const EpisodeResult res = evaluate(model, t, cfg.world, cfg.eval_max_steps);
            ReportRow r;
            r.seed = seed;
            r.algorithm = algorithm;
            r.phase = "eval";
            r.iteration = episode;
            r.track_id = t.id();
            r.split = "test";
            r.survived_steps = res.survived_steps;
            r.lap_fraction = res.lap_fraction;
            r.termination = res.termination;
            r.samples_aggregated = 0;
            r.dataset_size = dataset_size;
            rows.push_back(std::move(r));
        }
    };
    return hooks;
}

ReportRow fig8_row(std::uint64_t seed, const std::string& algorithm, const std::string& track_id,
                   std::optional<int> k, const std::vector<EpisodeRecord>& history) {
    ReportRow r;
    r.seed = seed;
    r.algorithm = algorithm;
    r.phase = "fig8";
    r.iteration = k.value_or(-1);
    r.track_id = track_id;
    r.split = "train";
    // Copy the episode that first completed the lap (or the last one tried).
    const EpisodeRecord* pick = nullptr;
    for (const auto& rec : history) {
        if (rec.track_id != track_id) continue;
        pick = &rec;
        if (rec.termination != Termination::OutOfLane) break;
    }
    if (pick != nullptr) {
        r.survived_steps = pick->survived_steps;
        r.lap_fraction = pick->lap_fraction;
        r.termination = pick->termination;
        r.dataset_size = pick->l_train_size;
    }
    return r;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (n_train_tracks < 1) throw ConfigError("experiment.n_train_tracks must be >= 1");
    if (n_test_tracks < 0) throw ConfigError("experiment.n_test_tracks must be >= 0");
    if (replicate_seeds.empty()) throw ConfigError("experiment.replicate_seeds must not be empty");
    if (eval_max_steps < 0) throw ConfigError("experiment.eval_max_steps must be >= 0");
    if (world.observation.n_rays < 1) throw ConfigError("observation.n_rays must be >= 1");
    if (!(world.observation.ray_max > 0.0)) throw ConfigError("observation.ray_max must be positive");
    if (world.observation.raster) {
        if (world.observation.raster_size < 1) throw ConfigError("observation.raster_size must be >= 1");
        const double cell = world.observation.raster_extent / world.observation.raster_size;
        if (!(cell > 0.0) || cell * std::sqrt(0.5) > Track::kGridCell)
            throw ConfigError("observation.raster_extent / raster_size must be in (0, 5.6] m");
    }
    if (!(world.sim.speed > 0.0) || !(world.sim.dt > 0.0) || !(world.sim.omega_max > 0.0))
        throw ConfigError("sim.speed, sim.dt and sim.omega_max must be positive");
    try {
        track.validate();
        expert.validate();
        (void)aggregation.validate(static_cast<std::size_t>(n_train_tracks));
    } catch (const InvariantError& e) {
        throw ConfigError(e.what());
    }
}

AggregationConfig aggregation_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    AggregationConfig a = cfg.aggregation;
    a.model_seed = derive_seed(seed, "policy/init");
    a.train.shuffle_seed = derive_seed(seed, "policy/shuffle");
    return a;
}

Split make_split(std::uint64_t master_seed, const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<Track> train;
    std::vector<Track> test;
    const int total = cfg.n_train_tracks + cfg.n_test_tracks;
    for (int i = 0; i < total; ++i) {
        Track t = generate_track(derive_seed(master_seed, "track/" + std::to_string(i)), cfg.track, track_name(i));
        (i < cfg.n_train_tracks ? train : test).push_back(std::move(t));
    }
    return {TrainingTracks(std::move(train)), TestTracks(std::move(test))};
}

EpisodeResult evaluate_actor(const Actor& actor, const Track& track, const WorldConfig& world,
                             const PidGains* expert, int eval_max_steps) {
    const EpisodeOutcome out = run_episode(track, world, expert, eval_max_steps, false, actor);
    return {track.id(), out.survived_steps, out.termination, out.lap_fraction, 0};
}

EpisodeResult evaluate(const PolicyModel& model, const Track& track, const WorldConfig& world, int eval_max_steps) {
    if (model.input_dim() != feature_dim(world.observation))
        throw DimensionError("model input dimension " + std::to_string(model.input_dim()) +
                             " does not match observation dimension " +
                             std::to_string(feature_dim(world.observation)));
    return evaluate_actor([&model](const StepInfo& info) { return forward(model, info.features); }, track, world,
                          nullptr, eval_max_steps);
}

void assert_test_hygiene(const Dataset& ds, const TestTracks& test) {
    std::set<std::string> ids;
    for (const auto& t : test.tracks()) ids.insert(t.id());
    for (const auto& s : ds.samples())
        if (ids.count(s.track_id) != 0) throw InvariantError("dataset contains a sample from test track " + s.track_id);
}

SaliencySummary saliency_rollout(const PolicyModel& model, const Track& track, const WorldConfig& world,
                                 int eval_max_steps, bool keep_frames) {
    SaliencySummary s;
    s.track_id = track.id();
    s.raster_size = world.observation.raster ? world.observation.raster_size : 0;
    s.mean.assign(static_cast<std::size_t>(model.input_dim()), 0.0);
    std::size_t frames = 0;
    run_episode(track, world, nullptr, eval_max_steps, false, [&](const StepInfo& info) {
        std::vector<double> a = saliency(model, info.features);
        for (std::size_t i = 0; i < a.size(); ++i) s.mean[i] += a[i];
        ++frames;
        if (keep_frames) s.frames.push_back(std::move(a));
        return forward(model, info.features);
    });
    if (frames == 0) {
        std::fill(s.mean.begin(), s.mean.end(), 1.0 / static_cast<double>(s.mean.size()));
    } else {
        for (double& v : s.mean) v /= static_cast<double>(frames);
    }
    return s;
}

Report run_comparison(const ExperimentConfig& cfg) {
    cfg.validate();
    Report report;
    report.seeds = cfg.replicate_seeds;
    report.n_train_tracks = cfg.n_train_tracks;
    report.n_iter = cfg.aggregation.n_iter;
    CliConfig echo;
    echo.experiment = cfg;
    report.config_echo = dump_config(echo);

    std::vector<ReportRow> rows;
    for (std::uint64_t seed : cfg.replicate_seeds) {
        const Split split = make_split(seed, cfg);
        const AggregationConfig agg = aggregation_for_seed(cfg, seed);
        const std::string designated = split.train[0].id();

        const auto add_run = [&](const std::string& algorithm, const AggregationResult& res) {
            assert_test_hygiene(res.m_train, split.test);
            assert_test_hygiene(res.l_train, split.test);
            for (const auto& rec : res.collection) rows.push_back(episode_row(seed, algorithm, "collect", rec, rec.m_train_size));
            for (const auto& rec : res.history) rows.push_back(episode_row(seed, algorithm, "aggregate", rec, rec.l_train_size));
        };

        const AggregationResult meta =
            metadagger(split.train, cfg.expert, cfg.world, agg, eval_hooks(rows, seed, "metadagger", split.test, cfg));
        add_run("metadagger", meta);
        report.bc_training_mse.push_back(meta.bc_loss_trace.back());

        const AggregationResult pooled =
            dagger_pooled(split.train, cfg.expert, cfg.world, agg, eval_hooks(rows, seed, "dagger", split.test, cfg));
        add_run("dagger", pooled);

        const AggregationResult single = dagger_baseline(split.train, 0, cfg.expert, cfg.world, agg);
        add_run("dagger_single", single);

        LapIterations laps;
        laps.seed = seed;
        laps.track_id = designated;
        laps.metadagger = metadagger_iterations_to_lap(meta, designated, split.train.size());
        laps.dagger = dagger_iterations_to_lap(single);
        for (const auto& rec : meta.history) {
            if (rec.track_id == designated) {
                laps.bc_lap_fraction = rec.lap_fraction;
                break;
            }
        }
        report.iterations_to_first_lap.push_back(laps);
        rows.push_back(fig8_row(seed, "metadagger", designated, laps.metadagger, meta.history));
        rows.push_back(fig8_row(seed, "dagger_single", designated, laps.dagger, single.history));

        if (!report.saliency) {
            const Track& probe = split.test.empty() ? split.train[0] : split.test[0];
            SaliencySummary s = saliency_rollout(meta.model, probe, cfg.world, cfg.eval_max_steps, cfg.saliency_per_frame);
            s.seed = seed;
            report.saliency = std::move(s);
        }
    }

    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::forward_as_tuple(a.seed, a.algorithm, phase_rank(a.phase), a.iteration, a.track_id) <
               std::forward_as_tuple(b.seed, b.algorithm, phase_rank(b.phase), b.iteration, b.track_id);
    });
    report.rows = std::move(rows);
    return report;
}

std::string report_csv(const Report& report) {
    std::ostringstream os;
    os << kReportHeader << '\n';
    for (const auto& r : report.rows) {
        os << r.seed << ',' << r.algorithm << ',' << r.phase << ',' << r.iteration << ',' << r.track_id << ','
           << r.split << ',' << r.survived_steps << ',' << fmt("%.6f", r.lap_fraction) << ','
           << to_string(r.termination) << ',' << r.samples_aggregated << ',' << r.dataset_size << '\n';
    }
    if (!report.rows.empty()) {
        os << "# reference dagger_iterations_to_lap=4 metadagger_iterations_to_lap=2 "
              "lap_fraction_after_collection=0.80\n";
        for (const auto& l : report.iterations_to_first_lap) {
            os << "# measured seed=" << l.seed << " track=" << l.track_id
               << " metadagger_iterations_to_lap=" << (l.metadagger ? std::to_string(*l.metadagger) : "none")
               << " dagger_iterations_to_lap=" << (l.dagger ? std::to_string(*l.dagger) : "none")
               << " lap_fraction_after_collection=" << fmt("%.4f", l.bc_lap_fraction) << '\n';
        }
    }
    return os.str();
}

std::string saliency_csv(const SaliencySummary& s) {
    std::ostringstream os;
    os << "frame";
    for (std::size_t i = 0; i < s.mean.size(); ++i) os << ",a_" << i;
    os << "\nmean";
    for (double v : s.mean) os << ',' << format_exact(v);
    os << '\n';
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
        os << f;
        for (double v : s.frames[f]) os << ',' << format_exact(v);
        os << '\n';
    }
    return os.str();
}

MeanSe test_steps_at(const Report& report, const std::string& algorithm, int iteration) {
    std::map<std::uint64_t, std::pair<double, int>> per_seed;
    for (const auto& r : report.rows) {
        if (r.algorithm != algorithm || r.phase != "eval" || r.iteration != iteration) continue;
        auto& acc = per_seed[r.seed];
        acc.first += r.survived_steps;
        acc.second += 1;
    }
    MeanSe out;
    std::vector<double> means;
    for (const auto& [seed, acc] : per_seed) means.push_back(acc.first / acc.second);
    out.n = means.size();
    if (means.empty()) return out;
    for (double m : means) out.mean += m;
    out.mean /= static_cast<double>(means.size());
    if (means.size() > 1) {
        double ss = 0.0;
        for (double m : means) ss += (m - out.mean) * (m - out.mean);
        out.se = std::sqrt(ss / static_cast<double>(means.size() - 1)) / std::sqrt(static_cast<double>(means.size()));
    }
    return out;
}

namespace {

std::string fig4_svg(const Report& report) {
    SvgChart chart("Test-track steps without leaving the lane", "aggregation episode", "mean survived steps");
    for (const char* algo : {"metadagger", "dagger"}) {
        std::vector<std::pair<double, double>> pts;
        for (int it = 0; it <= report.n_iter; ++it) {
            const MeanSe m = test_steps_at(report, algo, it);
            if (m.n > 0) pts.emplace_back(it, m.mean);
        }
        chart.add_series(algo, pts);
    }
    return chart.render_lines();
}

std::string fig5_svg(const Report& report) {
    std::map<std::string, std::map<std::string, std::pair<double, int>>> per_track;
    for (const auto& r : report.rows) {
        if (r.phase != "eval" || r.iteration != report.n_iter) continue;
        auto& acc = per_track[r.track_id][r.algorithm];
        acc.first += r.survived_steps;
        acc.second += 1;
    }
    SvgChart chart("Final test-track steps per track", "test track", "mean survived steps");
    std::vector<std::string> labels;
    for (const auto& [track, _] : per_track) labels.push_back(track);
    for (const char* algo : {"metadagger", "dagger"}) {
        std::vector<double> vals;
        for (const auto& track : labels) {
            const auto& m = per_track[track];
            const auto it = m.find(algo);
            vals.push_back(it == m.end() ? 0.0 : it->second.first / it->second.second);
        }
        chart.add_bars(algo, vals);
    }
    return chart.render_bars(labels);
}

std::string fig8_svg(const Report& report) {
    SvgChart chart("Iterations to complete the first lap", "seed", "iterations (none = budget + 1)");
    std::vector<std::string> labels;
    std::vector<double> meta, dagger;
    const double censored_meta = 2.0 + (report.n_train_tracks > 0 ? report.n_iter / report.n_train_tracks : 0);
    for (const auto& l : report.iterations_to_first_lap) {
        labels.push_back(std::to_string(l.seed));
        meta.push_back(l.metadagger ? *l.metadagger : censored_meta);
        dagger.push_back(l.dagger ? *l.dagger : censored_meta);
    }
    chart.add_bars("metadagger", meta);
    chart.add_bars("dagger", dagger);
    return chart.render_bars(labels);
}

}  // namespace

std::string saliency_svg(const SaliencySummary& s) {
    if (s.raster_size > 0) return render_heatmap(s.mean, s.raster_size, "Mean input attribution (raster)");
    SvgChart chart("Mean input attribution per ray", "ray (left to right: -90 to +90 deg)", "attribution");
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < s.mean.size(); ++i) labels.push_back(std::to_string(i));
    chart.add_bars("saliency", s.mean);
    return chart.render_bars(labels);
}

void emit_report(const Report& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    atomic_write(out_dir / "report.csv", report_csv(report));
    atomic_write(out_dir / "fig4.svg", fig4_svg(report));
    atomic_write(out_dir / "fig5.svg", fig5_svg(report));
    atomic_write(out_dir / "fig8.svg", fig8_svg(report));
    if (report.saliency) {
        atomic_write(out_dir / "saliency.csv", saliency_csv(*report.saliency));
        atomic_write(out_dir / "saliency.svg", saliency_svg(*report.saliency));
    }
    if (!report.config_echo.empty()) atomic_write(out_dir / "config.txt", report.config_echo);
}

}  // namespace metadagger
