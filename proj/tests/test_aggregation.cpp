#include <doctest.h>

#include <cmath>
#include <sstream>

#include "metadagger/aggregation.hpp"
#include "metadagger/errors.hpp"
#include "test_support.hpp"

using namespace metadagger;
using testing::circle_track;

namespace {

TrainingTracks two_tracks() {
    return TrainingTracks({generate_track(101, TrackGenParams{}, "a"), generate_track(102, TrackGenParams{}, "b")});
}

AggregationConfig quick_config() {
    AggregationConfig cfg;
    cfg.n_iter = 4;
    cfg.n_steps = 100;
    cfg.train.epochs = 3;
    cfg.hidden = {16, 8};
    cfg.model_seed = 5;
    cfg.dagger_iterations = 4;
    return cfg;
}

std::string dump(const Dataset& ds) {
    std::ostringstream os;
    write_dataset(os, ds);
    return os.str();
}

}  // namespace

TEST_CASE("tolerance rule examples") {
    const AggregationConfig cfg;
    CHECK_FALSE(is_incorrect(0.5, 0.5, cfg));
    CHECK(is_incorrect(0.8, 0.5, cfg));
    CHECK(is_incorrect(0.03, 0.0, cfg));
    CHECK_FALSE(is_incorrect(0.019, 0.0, cfg));
    CHECK_FALSE(is_incorrect(0.69, 0.5, cfg));
    CHECK(is_incorrect(-0.5, 0.5, cfg));
}

TEST_CASE("aggregation config validation") {
    AggregationConfig cfg;
    CHECK_FALSE(cfg.validate(10).has_value());
    cfg.n_iter = 10;
    CHECK(cfg.validate(10).has_value());
    cfg.tolerance_rel = 1.5;
    CHECK_THROWS(cfg.validate(2));
    cfg = AggregationConfig{};
    cfg.n_steps = 0;
    CHECK_THROWS(cfg.validate(2));
}

TEST_CASE("dataset invariants") {
    Dataset ds(3);
    ds.append(Sample{{0.1, 0.2, 0.3}, 0.5, "t", 0});
    CHECK(ds.size() == 1u);
    CHECK_THROWS_AS(ds.append(Sample{{0.1, 0.2}, 0.5, "t", 1}), DimensionError);
    CHECK_THROWS_AS(ds.append(Sample{{0.1, 0.2, 0.3}, 1.5, "t", 1}), InvariantError);
    CHECK_THROWS_AS(ds.append(Sample{{0.1, NAN, 0.3}, 0.5, "t", 1}), InvariantError);
    CHECK(ds.size() == 1u);
    const Eigen::MatrixXd X = ds.inputs();
    CHECK(X.rows() == 3);
    CHECK(X.cols() == 1);
    CHECK(ds.targets()(0) == 0.5);
}

TEST_CASE("dataset file round trip and errors") {
    Dataset ds(2);
    ds.append(Sample{{0.1, 1.0 / 3.0}, -0.25, "track-00", 0});
    ds.append(Sample{{1e-17, 0.9}, 1.0, "track-01", 7});
    const std::string text = dump(ds);
    CHECK(text.rfind("dataset-v1 2\n", 0) == 0);
    std::istringstream in(text);
    CHECK(read_dataset(in) == ds);

    std::istringstream header_only("dataset-v1 19\n");
    const Dataset empty = read_dataset(header_only);
    CHECK(empty.empty());
    CHECK(empty.d_in() == 19);

    std::istringstream big("dataset-v1 2\nt,0,1.5,0.1,0.2\n");
    CHECK_THROWS_AS(read_dataset(big), InvariantError);
    std::istringstream short_row("dataset-v1 2\nt,0,0.5,0.1\n");
    CHECK_THROWS(read_dataset(short_row));
    std::istringstream bad_num("dataset-v1 2\nt,0,0.5,0.1,abc\n");
    CHECK_THROWS_AS(read_dataset(bad_num), FormatError);
    std::istringstream version("dataset-v2 2\n");
    CHECK_THROWS_AS(read_dataset(version), VersionError);
}

TEST_CASE("collection: counts, expert labels, determinism") {
    const WorldConfig world;
    const PidGains gains;
    const TrainingTracks tracks = two_tracks();
    std::vector<EpisodeRecord> records;
    const Dataset m = collect_demonstrations(tracks, gains, world, 100, &records);
    CHECK(m.size() == 200u);
    CHECK(records.size() == 2u);
    CHECK(dump(m) == dump(collect_demonstrations(tracks, gains, world, 100)));
    CHECK(m.samples()[0].track_id == "a");
    CHECK(m.samples()[100].track_id == "b");
    CHECK(m.samples()[100].step_index == 0);

    // five steps on a circle, labels recomputed by hand
    const TrainingTracks circle({circle_track(50.0, 400, 4.0)});
    const Dataset five = collect_demonstrations(circle, gains, world, 5);
    REQUIRE(five.size() == 5u);
    CarState s = initial_state(circle[0], world.sim.speed);
    PidState ps = reset(gains);
    for (int i = 0; i < 5; ++i) {
        const LaneOffset lo = lateral_offset(circle[0], s);
        const PidOutput out = pid_action(gains, ps, lo.offset, lo.heading_error, world.sim.dt);
        ps = out.state;
        CHECK(five.samples()[static_cast<std::size_t>(i)].a_ref == out.steering);
        CHECK(five.samples()[static_cast<std::size_t>(i)].features == features(observe(circle[0], s, world.observation), world.observation));
        s = step(circle[0], s, out.steering, world.sim);
    }
}

TEST_CASE("collection on ten default tracks gives 10 000 samples") {
    std::vector<Track> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(generate_track(200 + i, TrackGenParams{}, "t" + std::to_string(i)));
    const Dataset m = collect_demonstrations(TrainingTracks(std::move(ts)), PidGains{}, WorldConfig{}, 1000);
    CHECK(m.size() == 10000u);
}

TEST_CASE("collection aborts with the track id when the expert fails") {
    PidGains idle;
    idle.kp = idle.kd = idle.kh = 0.0;
    const TrainingTracks circle({circle_track(50.0, 400, 4.0, "ring")});
    try {
        collect_demonstrations(circle, idle, WorldConfig{}, 1000);
        FAIL("expected CompetenceError");
    } catch (const CompetenceError& e) {
        CHECK(std::string(e.what()).find("ring") != std::string::npos);
    }
}

TEST_CASE("behavior cloning: repeated sample is memorized, empty is an error") {
    Dataset ds(4);
    for (int i = 0; i < 64; ++i) ds.append(Sample{{0.2, 0.4, 0.6, 0.8}, 0.3, "t", i});
    TrainConfig cfg;
    cfg.epochs = 50;
    const TrainResult r = behavior_cloning(ds, {16, 8}, 1, cfg);
    const std::vector<double> x{0.2, 0.4, 0.6, 0.8};
    CHECK(std::abs(forward(r.model, x) - 0.3) < 1e-3);
    CHECK_THROWS_AS(behavior_cloning(Dataset(4), {16, 8}, 1, cfg), TrainingError);
}

TEST_CASE("metadagger with an expert-equal learner aggregates nothing") {
    const AggregationConfig cfg = quick_config();
    AggregationHooks hooks;
    hooks.step_policy = [](const PolicyModel&, const StepInfo& info) { return info.a_ref; };
    int appended = 0;
    hooks.on_append = [&](double, double) { ++appended; };
    const AggregationResult r = metadagger::metadagger(two_tracks(), PidGains{}, WorldConfig{}, cfg, hooks);
    CHECK(appended == 0);
    REQUIRE(r.history.size() == 4u);
    for (const auto& rec : r.history) {
        CHECK(rec.samples_aggregated == 0);
        CHECK(rec.l_train_size == r.m_train.size());
    }
    CHECK(r.l_train == r.m_train);
}

TEST_CASE("metadagger: mistake filter, hand-off, append-only, round robin") {
    const AggregationConfig cfg = quick_config();
    AggregationHooks hooks;
    int appended = 0, violations = 0;
    hooks.on_append = [&](double a_l, double a_ref) {
        ++appended;
        if (!is_incorrect(a_l, a_ref, cfg)) ++violations;
    };
    int handoffs = 0, bad_handoffs = 0;
    std::optional<PolicyModel> previous_meta;
    hooks.on_handoff = [&](int, const PolicyModel& meta_before, const PolicyModel& low_start,
                           const PolicyModel& low_end, const PolicyModel& meta_after) {
        ++handoffs;
        if (!(meta_before == low_start)) ++bad_handoffs;
        if (!(low_end == meta_after)) ++bad_handoffs;
        if (previous_meta && !(*previous_meta == meta_before)) ++bad_handoffs;
        previous_meta = meta_after;
    };
    const AggregationResult r = metadagger::metadagger(two_tracks(), PidGains{}, WorldConfig{}, cfg, hooks);
    CHECK(violations == 0);
    CHECK(handoffs == cfg.n_iter);
    CHECK(bad_handoffs == 0);
    CHECK(r.model == *previous_meta);

    int total = 0;
    std::size_t last = r.m_train.size();
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        const auto& rec = r.history[i];
        CHECK(rec.track_id == (i % 2 == 0 ? "a" : "b"));
        CHECK(rec.l_train_size >= last);
        CHECK(rec.l_train_size - last == static_cast<std::size_t>(rec.samples_aggregated));
        last = rec.l_train_size;
        total += rec.samples_aggregated;
    }
    CHECK(total == appended);
    for (std::size_t i = r.m_train.size(); i < r.l_train.size(); ++i) {
        const auto& id = r.l_train.samples()[i].track_id;
        CHECK((id == "a" || id == "b"));
    }
}

TEST_CASE("metadagger is deterministic and accepts pre-collected demonstrations") {
    const AggregationConfig cfg = quick_config();
    const TrainingTracks tracks = two_tracks();
    const AggregationResult a = metadagger::metadagger(tracks, PidGains{}, WorldConfig{}, cfg);
    const AggregationResult b = metadagger::metadagger(tracks, PidGains{}, WorldConfig{}, cfg);
    CHECK(a.model == b.model);
    CHECK(a.l_train == b.l_train);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].survived_steps == b.history[i].survived_steps);
        CHECK(a.history[i].samples_aggregated == b.history[i].samples_aggregated);
    }
    const AggregationResult c = metadagger::metadagger(tracks, PidGains{}, WorldConfig{}, cfg, {}, &a.m_train);
    CHECK(c.model == a.model);
    CHECK(c.collection.empty());

    AggregationConfig scratch = cfg;
    scratch.refit_mode = RefitMode::Scratch;
    CHECK_FALSE(metadagger::metadagger(tracks, PidGains{}, WorldConfig{}, scratch).model == a.model);
}

TEST_CASE("pooled DAgger labels every visited state") {
    const AggregationConfig cfg = quick_config();
    const AggregationResult r = dagger_pooled(two_tracks(), PidGains{}, WorldConfig{}, cfg);
    for (const auto& rec : r.history) {
        const int visited = rec.survived_steps + (rec.termination == Termination::OutOfLane ? 1 : 0);
        CHECK(rec.samples_aggregated == visited);
    }
}

TEST_CASE("single-track DAgger: expert first iteration, growing aggregate") {
    const AggregationConfig cfg = quick_config();
    const TrainingTracks tracks = two_tracks();
    const AggregationResult r = dagger_baseline(tracks, 1, PidGains{}, WorldConfig{}, cfg);
    REQUIRE(r.collection.size() == 1u);
    REQUIRE(r.history.size() == static_cast<std::size_t>(cfg.dagger_iterations - 1));
    const Dataset demo = collect_demonstrations(TrainingTracks({tracks[1]}), PidGains{}, WorldConfig{}, cfg.n_steps);
    CHECK(r.m_train == demo);
    CHECK(r.collection[0].track_id == "b");

    std::size_t last = r.collection[0].l_train_size;
    bool lapped = false;
    for (const auto& rec : r.history) {
        if (!lapped) CHECK(rec.l_train_size > last);
        lapped = lapped || rec.termination != Termination::OutOfLane;
        last = rec.l_train_size;
    }
}

TEST_CASE("iterations-to-lap counting") {
    AggregationResult r;
    r.history = {{1, "a", 10, Termination::OutOfLane, 0.1, 5, 0, 0},
                 {2, "b", 100, Termination::LapComplete, 1.0, 0, 0, 0},
                 {3, "a", 100, Termination::StepLimit, 1.0, 0, 0, 0}};
    CHECK(metadagger_iterations_to_lap(r, "a", 2) == 3);
    CHECK(metadagger_iterations_to_lap(r, "b", 2) == 2);
    CHECK_FALSE(metadagger_iterations_to_lap(r, "c", 2).has_value());
    CHECK(dagger_iterations_to_lap(r) == 2);
    r.history.resize(1);
    CHECK_FALSE(dagger_iterations_to_lap(r).has_value());
}
