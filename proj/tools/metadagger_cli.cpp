// Command-line entry point: gen-tracks | collect | bc | metadagger | dagger | eval | compare | saliency

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "metadagger/aggregation.hpp"
#include "metadagger/config.hpp"
#include "metadagger/errors.hpp"
#include "metadagger/harness.hpp"
#include "metadagger/io.hpp"

namespace fs = std::filesystem;
using namespace metadagger;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

/// Missing input artifact; reported with the producing command.
class MissingPrerequisite : public Error {
public:
    using Error::Error;
};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

struct Context {
    CliConfig cfg;
    fs::path tracks_dir;
    fs::path models_dir;
    fs::path datasets_dir;
    fs::path reports_dir;
};

Context make_context(const Common& common) {
    Context ctx;
    if (!common.config_path.empty()) ctx.cfg = load_config(common.config_path);
    if (common.seed) ctx.cfg.experiment.master_seed = *common.seed;
    ctx.cfg.experiment.validate();
    const fs::path out(common.out);
    const auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : out / p; };
    ctx.tracks_dir = resolve(ctx.cfg.tracks_dir);
    ctx.models_dir = resolve(ctx.cfg.models_dir);
    ctx.datasets_dir = resolve(ctx.cfg.datasets_dir);
    ctx.reports_dir = resolve(ctx.cfg.reports_dir);
    return ctx;
}

void require(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw MissingPrerequisite("missing prerequisite " + p.string() + " (run `" + producer + "` first)");
}

std::string split_manifest(const Split& split) {
    std::ostringstream os;
    os << "train";
    for (const auto& t : split.train.tracks()) os << ' ' << t.id();
    os << "\ntest";
    for (const auto& t : split.test.tracks()) os << ' ' << t.id();
    os << '\n';
    return os.str();
}

Split load_split(const fs::path& dir) {
    const fs::path manifest = dir / "split.txt";
    require(manifest, "gen-tracks");
    std::istringstream in(read_file(manifest));
    std::vector<Track> train, test;
    std::string line;
    bool seen_train = false, seen_test = false;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string section, id;
        row >> section;
        if (section.empty()) continue;
        std::vector<Track>* target = nullptr;
        if (section == "train") {
            target = &train;
            seen_train = true;
        } else if (section == "test") {
            target = &test;
            seen_test = true;
        } else {
            throw FormatError("malformed split manifest section: " + section);
        }
        while (row >> id) {
            const fs::path p = dir / (id + ".track");
            require(p, "gen-tracks");
            Track t = load_track(p);
            if (t.id() != id) throw FormatError("track file " + p.string() + " carries id " + t.id());
            target->push_back(std::move(t));
        }
    }
    if (!seen_train || !seen_test) throw FormatError("split manifest needs train and test sections");
    if (train.empty()) throw FormatError("split manifest lists no training tracks");
    return {TrainingTracks(std::move(train)), TestTracks(std::move(test))};
}

std::string history_csv(const AggregationResult& res) {
    std::ostringstream os;
    os << "iteration,track_id,survived_steps,termination,lap_fraction,samples_aggregated,l_train_size,m_train_size\n";
    auto row = [&](const EpisodeRecord& r) {
        char frac[32];
        std::snprintf(frac, sizeof(frac), "%.6f", r.lap_fraction);
        os << r.iteration << ',' << r.track_id << ',' << r.survived_steps << ',' << to_string(r.termination) << ','
           << frac << ',' << r.samples_aggregated << ',' << r.l_train_size << ',' << r.m_train_size << '\n';
    };
    for (const auto& r : res.collection) row(r);
    for (const auto& r : res.history) row(r);
    return os.str();
}

void warn_config(const Context& ctx, std::size_t n_train) {
    if (auto w = ctx.cfg.experiment.aggregation.validate(n_train)) std::cerr << "warning: " << *w << '\n';
}

int cmd_gen_tracks(const Common& common) {
    const Context ctx = make_context(common);
    const Split split = make_split(ctx.cfg.experiment.master_seed, ctx.cfg.experiment);
    for (const auto& t : split.train.tracks()) save_track(ctx.tracks_dir / (t.id() + ".track"), t);
    for (const auto& t : split.test.tracks()) save_track(ctx.tracks_dir / (t.id() + ".track"), t);
    atomic_write(ctx.tracks_dir / "split.txt", split_manifest(split));
    std::cout << "tracks=" << split.train.size() + split.test.size() << " train=" << split.train.size()
              << " test=" << split.test.size() << " dir=" << ctx.tracks_dir.string() << '\n';
    return 0;
}

int cmd_collect(const Common& common) {
    const Context ctx = make_context(common);
    const Split split = load_split(ctx.tracks_dir);
    const auto& e = ctx.cfg.experiment;
    const Dataset ds = collect_demonstrations(split.train, e.expert, e.world, e.aggregation.n_steps);
    const fs::path out = ctx.datasets_dir / "m_train.dataset";
    save_dataset(out, ds);
    std::cout << "samples=" << ds.size() << " tracks=" << split.train.size() << " path=" << out.string() << '\n';
    return 0;
}

int cmd_bc(const Common& common) {
    const Context ctx = make_context(common);
    const fs::path in = ctx.datasets_dir / "m_train.dataset";
    require(in, "collect");
    const Dataset ds = load_dataset(in);
    const AggregationConfig agg = aggregation_for_seed(ctx.cfg.experiment, ctx.cfg.experiment.master_seed);
    const TrainResult res = behavior_cloning(ds, agg.hidden, agg.model_seed, agg.train);
    const fs::path out = ctx.models_dir / "bc.policy";
    save_model(out, res.model);
    std::cout << "mse=" << format_exact(res.loss_trace.back()) << " epochs=" << res.loss_trace.size()
              << " samples=" << ds.size() << " path=" << out.string() << '\n';
    return 0;
}

int cmd_metadagger(const Common& common, bool collect) {
    const Context ctx = make_context(common);
    const Split split = load_split(ctx.tracks_dir);
    warn_config(ctx, split.train.size());
    const auto& e = ctx.cfg.experiment;
    const AggregationConfig agg = aggregation_for_seed(e, e.master_seed);
    std::optional<Dataset> demos;
    const fs::path demo_path = ctx.datasets_dir / "m_train.dataset";
    if (!collect) {
        if (!fs::exists(demo_path))
            throw MissingPrerequisite("missing prerequisite " + demo_path.string() +
                                      " (run `collect` first or pass --collect)");
        demos = load_dataset(demo_path);
    }
    const AggregationResult res = metadagger::metadagger(split.train, e.expert, e.world, agg, {}, demos ? &*demos : nullptr);
    assert_test_hygiene(res.l_train, split.test);
    save_model(ctx.models_dir / "metadagger.policy", res.model);
    save_dataset(ctx.datasets_dir / "l_train.dataset", res.l_train);
    if (collect) save_dataset(demo_path, res.m_train);
    atomic_write(ctx.reports_dir / "metadagger_history.csv", history_csv(res));
    int aggregated = 0;
    for (const auto& r : res.history) aggregated += r.samples_aggregated;
    std::cout << "episodes=" << res.history.size() << " aggregated=" << aggregated
              << " l_train=" << res.l_train.size() << " m_train=" << res.m_train.size()
              << " path=" << (ctx.models_dir / "metadagger.policy").string() << '\n';
    return 0;
}

int cmd_dagger(const Common& common, const std::string& track_id, bool pooled) {
    const Context ctx = make_context(common);
    const Split split = load_split(ctx.tracks_dir);
    const auto& e = ctx.cfg.experiment;
    const AggregationConfig agg = aggregation_for_seed(e, e.master_seed);
    AggregationResult res;
    std::string first_lap = "none";
    if (pooled) {
        warn_config(ctx, split.train.size());
        res = dagger_pooled(split.train, e.expert, e.world, agg);
    } else {
        std::size_t index = 0;
        if (!track_id.empty()) {
            index = split.train.size();
            for (std::size_t i = 0; i < split.train.size(); ++i)
                if (split.train[i].id() == track_id) index = i;
            if (index == split.train.size()) throw ConfigError("unknown training track: " + track_id);
        }
        res = dagger_baseline(split.train, index, e.expert, e.world, agg);
        if (auto k = dagger_iterations_to_lap(res)) first_lap = std::to_string(*k);
    }
    assert_test_hygiene(res.l_train, split.test);
    const fs::path out = ctx.models_dir / (pooled ? "dagger_pooled.policy" : "dagger.policy");
    save_model(out, res.model);
    atomic_write(ctx.reports_dir / (pooled ? "dagger_pooled_history.csv" : "dagger_history.csv"), history_csv(res));
    std::cout << "iterations=" << res.collection.size() + res.history.size() << " first_lap=" << first_lap
              << " dataset=" << res.l_train.size() << " path=" << out.string() << '\n';
    return 0;
}

int cmd_eval(const Common& common, const std::string& model_path, const std::string& track_path,
             std::optional<int> max_steps) {
    const Context ctx = make_context(common);
    require(model_path, "bc");
    require(track_path, "gen-tracks");
    const PolicyModel model = load_model(model_path);
    const Track track = load_track(track_path);
    const EpisodeResult r =
        evaluate(model, track, ctx.cfg.experiment.world, max_steps.value_or(ctx.cfg.experiment.eval_max_steps));
    char frac[32];
    std::snprintf(frac, sizeof(frac), "%.6f", r.lap_fraction);
    std::cout << "survived_steps=" << r.survived_steps << " termination=" << to_string(r.termination)
              << " lap_fraction=" << frac << " track=" << r.track_id << '\n';
    return 0;
}

int cmd_compare(const Common& common) {
    Context ctx = make_context(common);
    if (common.seed) ctx.cfg.experiment.replicate_seeds = {*common.seed};
    warn_config(ctx, static_cast<std::size_t>(ctx.cfg.experiment.n_train_tracks));
    Report report = run_comparison(ctx.cfg.experiment);
    report.config_echo = dump_config(ctx.cfg);
    emit_report(report, ctx.reports_dir);
    std::cout << "rows=" << report.rows.size() << " seeds=" << report.seeds.size()
              << " report=" << (ctx.reports_dir / "report.csv").string() << '\n';
    return 0;
}

int cmd_saliency(const Common& common, const std::string& model_path, const std::string& track_path, bool frames) {
    const Context ctx = make_context(common);
    require(model_path, "bc");
    require(track_path, "gen-tracks");
    const PolicyModel model = load_model(model_path);
    const Track track = load_track(track_path);
    const auto& e = ctx.cfg.experiment;
    if (model.input_dim() != feature_dim(e.world.observation))
        throw DimensionError("model input dimension does not match the configured observation");
    SaliencySummary s = saliency_rollout(model, track, e.world, e.eval_max_steps, frames || e.saliency_per_frame);
    s.seed = e.master_seed;
    atomic_write(ctx.reports_dir / "saliency.csv", saliency_csv(s));
    atomic_write(ctx.reports_dir / "saliency.svg", saliency_svg(s));
    std::size_t top = 0;
    for (std::size_t i = 1; i < s.mean.size(); ++i)
        if (s.mean[i] > s.mean[top]) top = i;
    std::cout << "inputs=" << s.mean.size() << " top_input=" << top << " top_weight=" << format_exact(s.mean[top])
              << " path=" << (ctx.reports_dir / "saliency.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lane-keeping imitation learning: MetaDAgger, DAgger and behavior cloning"};
    app.require_subcommand(1);
    Common common;
    const auto add_common = [&common](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "flat section.key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "master seed override");
        sub->add_option("--out", common.out, "root directory for relative artifact paths");
    };

    auto* gen = app.add_subcommand("gen-tracks", "generate the train/test track split");
    auto* collect = app.add_subcommand("collect", "record expert demonstrations on the training tracks");
    auto* bc = app.add_subcommand("bc", "behavior cloning on the collected demonstrations");
    auto* meta = app.add_subcommand("metadagger", "run MetaDAgger on the training tracks");
    bool meta_collect = false;
    meta->add_flag("--collect", meta_collect, "collect demonstrations instead of loading them");
    auto* dagger = app.add_subcommand("dagger", "run the DAgger baseline");
    std::string dagger_track;
    bool dagger_pooled_flag = false;
    dagger->add_option("--track", dagger_track, "training track id (default: first training track)");
    dagger->add_flag("--pooled", dagger_pooled_flag, "pooled-environment DAgger used in the comparison");
    auto* eval = app.add_subcommand("eval", "evaluate a model on one track");
    std::string model_path, track_path;
    std::optional<int> max_steps;
    eval->add_option("--model", model_path, "policy file")->required();
    eval->add_option("--track", track_path, "track file")->required();
    eval->add_option("--max-steps", max_steps, "override experiment.eval_max_steps");
    auto* compare = app.add_subcommand("compare", "MetaDAgger vs DAgger over the replicate seeds");
    auto* sal = app.add_subcommand("saliency", "input-gradient saliency over an evaluation rollout");
    bool frames = false;
    sal->add_option("--model", model_path, "policy file")->required();
    sal->add_option("--track", track_path, "track file")->required();
    sal->add_flag("--frames", frames, "also dump per-frame attributions");
    for (auto* sub : {gen, collect, bc, meta, dagger, eval, compare, sal}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (gen->parsed()) return cmd_gen_tracks(common);
        if (collect->parsed()) return cmd_collect(common);
        if (bc->parsed()) return cmd_bc(common);
        if (meta->parsed()) return cmd_metadagger(common, meta_collect);
        if (dagger->parsed()) return cmd_dagger(common, dagger_track, dagger_pooled_flag);
        if (eval->parsed()) return cmd_eval(common, model_path, track_path, max_steps);
        if (compare->parsed()) return cmd_compare(common);
        if (sal->parsed()) return cmd_saliency(common, model_path, track_path, frames);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kUsageError;
}
