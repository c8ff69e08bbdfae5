#include <doctest.h>

#include <cmath>
#include <set>

#include "metadagger/errors.hpp"
#include "metadagger/harness.hpp"
#include "test_support.hpp"

using namespace metadagger;
using testing::circle_track;

namespace {

ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg;
    cfg.n_train_tracks = 2;
    cfg.n_test_tracks = 1;
    cfg.replicate_seeds = {3};
    cfg.eval_max_steps = 150;
    cfg.aggregation.n_iter = 3;
    cfg.aggregation.n_steps = 120;
    cfg.aggregation.dagger_iterations = 3;
    cfg.aggregation.train.epochs = 3;
    cfg.aggregation.hidden = {16, 8};
    return cfg;
}

}  // namespace

TEST_CASE("split: sizes, distinct ids, determinism, empty test set") {
    const ExperimentConfig cfg;
    const Split a = make_split(1, cfg);
    CHECK(a.train.size() == 10u);
    CHECK(a.test.size() == 9u);
    std::set<std::string> ids;
    for (const auto& t : a.train.tracks()) ids.insert(t.id());
    for (const auto& t : a.test.tracks()) ids.insert(t.id());
    CHECK(ids.size() == 19u);
    CHECK(a.train[0].id() == "track-00");
    CHECK(a.test[0].id() == "track-10");

    const Split b = make_split(1, cfg);
    for (std::size_t i = 0; i < 10; ++i) CHECK(a.train[i] == b.train[i]);
    for (std::size_t i = 0; i < 9; ++i) CHECK(a.test[i] == b.test[i]);

    ExperimentConfig no_test = cfg;
    no_test.n_test_tracks = 0;
    const Split c = make_split(1, no_test);
    CHECK(c.test.empty());
    CHECK(c.train.size() == 10u);
}

TEST_CASE("config validation") {
    ExperimentConfig cfg;
    cfg.n_train_tracks = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ExperimentConfig{};
    cfg.replicate_seeds.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("expert as a policy laps every default track") {
    const ExperimentConfig cfg;
    const Split s = make_split(cfg.master_seed, cfg);
    const PidGains gains = cfg.expert;
    auto check = [&](const Track& t) {
        const EpisodeResult r = evaluate_actor([](const StepInfo& i) { return i.a_ref; }, t, cfg.world, &gains,
                                               cfg.eval_max_steps);
        CHECK(r.termination == Termination::LapComplete);
        CHECK(r.survived_steps == cfg.eval_max_steps);
        CHECK(r.lap_fraction > 1.0);
    };
    for (const auto& t : s.train.tracks()) check(t);
    for (const auto& t : s.test.tracks()) check(t);
}

TEST_CASE("constant-zero policy on a circle leaves the lane at a fixed step") {
    const Track ring = circle_track(50.0, 400, 4.0);
    PolicyModel zero = init_model({19, 4, 1}, 0);
    for (auto& L : zero.layers) L.weights.setZero();
    const EpisodeResult r = evaluate(zero, ring, WorldConfig{}, 2000);
    CHECK(r.termination == Termination::OutOfLane);
    // Driving straight off the tangent, the car crosses r = 54 m after sqrt(54^2 - 50^2) = 20.4 m.
    CHECK(r.survived_steps == 41);
    CHECK(r.samples_aggregated == 0);
}

TEST_CASE("evaluation edge cases") {
    const Track ring = circle_track(50.0, 400, 4.0);
    const PolicyModel m = init_model({19, 4, 1}, 0);
    const EpisodeResult r = evaluate(m, ring, WorldConfig{}, 0);
    CHECK(r.termination == Termination::StepLimit);
    CHECK(r.survived_steps == 0);
    CHECK_THROWS_AS(evaluate(init_model({7, 4, 1}, 0), ring, WorldConfig{}, 10), DimensionError);

    const PolicyModel copy = m;
    (void)evaluate(m, ring, WorldConfig{}, 50);
    CHECK(m == copy);
}

TEST_CASE("empty report is a header-only CSV") {
    const Report empty;
    CHECK(report_csv(empty) == std::string(kReportHeader) + "\n");
    const MeanSe m = test_steps_at(empty, "metadagger", 0);
    CHECK(m.n == 0u);
}

TEST_CASE("test hygiene guard") {
    const Track t = circle_track(50.0, 400, 4.0, "held-out");
    Dataset ds(2);
    ds.append(Sample{{0.1, 0.2}, 0.0, "train-a", 0});
    CHECK_NOTHROW(assert_test_hygiene(ds, TestTracks({t})));
    ds.append(Sample{{0.1, 0.2}, 0.0, "held-out", 1});
    CHECK_THROWS_AS(assert_test_hygiene(ds, TestTracks({t})), InvariantError);
}

TEST_CASE("seed statistics across replicate seeds") {
    Report r;
    auto row = [](std::uint64_t seed, const char* track, int steps) {
        ReportRow x;
        x.seed = seed;
        x.algorithm = "metadagger";
        x.phase = "eval";
        x.iteration = 1;
        x.track_id = track;
        x.survived_steps = steps;
        return x;
    };
    r.rows = {row(1, "t0", 100), row(1, "t1", 300), row(2, "t0", 400), row(2, "t1", 400)};
    const MeanSe m = test_steps_at(r, "metadagger", 1);
    CHECK(m.n == 2u);
    CHECK(m.mean == doctest::Approx(300.0));
    // seed means 200 and 400: sample sd 141.42, se 100
    CHECK(m.se == doctest::Approx(100.0));
}

TEST_CASE("tiny comparison: cell counts, determinism, saliency normalization") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.saliency_per_frame = true;
    const Report a = run_comparison(cfg);
    const Report b = run_comparison(cfg);
    CHECK(report_csv(a) == report_csv(b));

    int eval_rows = 0, collect_rows = 0, fig8_rows = 0;
    for (const auto& r : a.rows) {
        if (r.phase == "eval") {
            ++eval_rows;
            CHECK(r.split == "test");
            CHECK(r.survived_steps <= cfg.eval_max_steps);
            if (r.survived_steps == cfg.eval_max_steps) CHECK(r.termination != Termination::OutOfLane);
        }
        if (r.phase == "collect") ++collect_rows;
        if (r.phase == "fig8") ++fig8_rows;
    }
    // 2 algorithms x 1 test track x (n_iter + 1) snapshots x 1 seed
    CHECK(eval_rows == 2 * 1 * (cfg.aggregation.n_iter + 1));
    // metadagger and pooled dagger collect on both tracks, single-track dagger once
    CHECK(collect_rows == 2 + 2 + 1);
    CHECK(fig8_rows == 2);
    REQUIRE(a.iterations_to_first_lap.size() == 1u);
    CHECK(a.bc_training_mse.size() == 1u);

    const std::string csv = report_csv(a);
    CHECK(csv.find("# reference dagger_iterations_to_lap=4 metadagger_iterations_to_lap=2") != std::string::npos);
    CHECK(csv.find("# measured seed=3") != std::string::npos);

    REQUIRE(a.saliency.has_value());
    double mean_sum = 0.0;
    for (double v : a.saliency->mean) mean_sum += v;
    CHECK(std::abs(mean_sum - 1.0) < 1e-9);
    CHECK_FALSE(a.saliency->frames.empty());
    for (const auto& f : a.saliency->frames) {
        double s = 0.0;
        for (double v : f) s += v;
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("emit_report writes every artifact") {
    const Report r = run_comparison(tiny_experiment());
    const auto dir = std::filesystem::temp_directory_path() / "metadagger_emit_test";
    std::filesystem::remove_all(dir);
    emit_report(r, dir);
    for (const char* f : {"report.csv", "fig4.svg", "fig5.svg", "fig8.svg", "saliency.csv", "saliency.svg", "config.txt"})
        CHECK(std::filesystem::exists(dir / f));
    std::filesystem::remove_all(dir);

    const auto empty_dir = std::filesystem::temp_directory_path() / "metadagger_emit_empty";
    std::filesystem::remove_all(empty_dir);
    emit_report(Report{}, empty_dir);
    CHECK(std::filesystem::exists(empty_dir / "fig4.svg"));
    std::filesystem::remove_all(empty_dir);
}

TEST_CASE("raster saliency is a G x G map") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.world.observation.raster = true;
    cfg.world.observation.raster_size = 8;
    const Split s = make_split(3, cfg);
    const PolicyModel m = init_model({64, 8, 1}, 2);
    const SaliencySummary sal = saliency_rollout(m, s.test[0], cfg.world, 20, false);
    CHECK(sal.raster_size == 8);
    CHECK(sal.mean.size() == 64u);
    CHECK(saliency_svg(sal).find("<svg") != std::string::npos);
}
