// Sweeps PID gains over the default track split and prints the worst-case
// survival and mean |offset| per gain set. Used once to pick the expert defaults.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "metadagger/aggregation.hpp"
#include "metadagger/harness.hpp"

using namespace metadagger;

int main() {
    ExperimentConfig cfg;
    const Split split = make_split(cfg.master_seed, cfg);
    std::vector<const Track*> all;
    for (const auto& t : split.train.tracks()) all.push_back(&t);
    for (const auto& t : split.test.tracks()) all.push_back(&t);

    std::printf("kp,kd,kh,min_survived,mean_abs_offset,max_abs_offset\n");
    for (double kp : {0.4, 0.8, 1.2}) {
        for (double kd : {0.0, 0.3, 0.6}) {
            for (double kh : {0.6, 1.2, 2.0}) {
                PidGains g = cfg.expert;
                g.kp = kp;
                g.kd = kd;
                g.kh = kh;
                int min_survived = std::numeric_limits<int>::max();
                double sum_off = 0.0, max_off = 0.0;
                long n = 0;
                for (const Track* t : all) {
                    const auto out = run_episode(
                        *t, cfg.world, &g, cfg.eval_max_steps, false, [](const StepInfo& s) { return s.a_ref; },
                        [&](const StepInfo& s, double) {
                            const double off = std::abs(lateral_offset(*t, s.state).offset);
                            sum_off += off;
                            max_off = std::max(max_off, off);
                            ++n;
                        });
                    min_survived = std::min(min_survived, out.survived_steps);
                }
                std::printf("%g,%g,%g,%d,%.4f,%.4f\n", kp, kd, kh, min_survived, n ? sum_off / n : 0.0, max_off);
            }
        }
    }
}
