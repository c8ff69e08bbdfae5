#include "metadagger/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "metadagger/errors.hpp"
#include "metadagger/io.hpp"

namespace metadagger {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
    text = trim(text);
    T v{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
        throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(text) + "'");
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    text = trim(text);
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("invalid value for " + std::string(key) + ": '" + std::string(text) + "'");
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
    std::vector<T> out;
    text = trim(text);
    if (text.empty()) return out;
    while (true) {
        const auto comma = text.find(',');
        out.push_back(parse_value<T>(key, text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

struct Key {
    const char* name;
    std::function<void(CliConfig&, std::string_view, std::string_view)> set;
    std::function<std::string(const CliConfig&)> get;
};

#define MD_DOUBLE(NAME, FIELD)                                                                             \
    Key {                                                                                                  \
        NAME, [](CliConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_value<double>(k, v); }, \
            [](const CliConfig& c) { return format_exact(c.FIELD); }                                       \
    }
#define MD_INT(NAME, FIELD)                                                                             \
    Key {                                                                                               \
        NAME, [](CliConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_value<int>(k, v); }, \
            [](const CliConfig& c) { return std::to_string(c.FIELD); }                                  \
    }
#define MD_U64(NAME, FIELD)                                                                                     \
    Key {                                                                                                       \
        NAME, [](CliConfig& c, std::string_view k, std::string_view v) { c.FIELD = parse_value<std::uint64_t>(k, v); }, \
            [](const CliConfig& c) { return std::to_string(c.FIELD); }                                          \
    }
#define MD_PATH(NAME, FIELD)                                                                                   \
    Key {                                                                                                      \
        NAME, [](CliConfig& c, std::string_view, std::string_view v) { c.FIELD = std::string(trim(v)); }, \
            [](const CliConfig& c) { return c.FIELD.string(); }                                                \
    }

const std::vector<Key>& keys() {
    static const std::vector<Key> table{
        MD_INT("experiment.n_train_tracks", experiment.n_train_tracks),
        MD_INT("experiment.n_test_tracks", experiment.n_test_tracks),
        MD_U64("experiment.master_seed", experiment.master_seed),
        Key{"experiment.replicate_seeds",
            [](CliConfig& c, std::string_view k, std::string_view v) {
                c.experiment.replicate_seeds = parse_list<std::uint64_t>(k, v);
            },
            [](const CliConfig& c) { return join(c.experiment.replicate_seeds); }},
        MD_INT("experiment.eval_max_steps", experiment.eval_max_steps),
        Key{"experiment.saliency_per_frame",
            [](CliConfig& c, std::string_view k, std::string_view v) {
                c.experiment.saliency_per_frame = parse_bool(k, v);
            },
            [](const CliConfig& c) { return std::string(c.experiment.saliency_per_frame ? "true" : "false"); }},
        MD_INT("track.n_control_points", experiment.track.n_control_points),
        MD_DOUBLE("track.radius_mean", experiment.track.radius_mean),
        MD_DOUBLE("track.radius_jitter", experiment.track.radius_jitter),
        MD_DOUBLE("track.half_width", experiment.track.half_width),
        MD_DOUBLE("track.kappa_max", experiment.track.kappa_max),
        MD_DOUBLE("track.resample_spacing", experiment.track.resample_spacing),
        MD_DOUBLE("track.target_length", experiment.track.target_length),
        MD_DOUBLE("sim.speed", experiment.world.sim.speed),
        MD_DOUBLE("sim.dt", experiment.world.sim.dt),
        MD_DOUBLE("sim.omega_max", experiment.world.sim.omega_max),
        MD_INT("observation.n_rays", experiment.world.observation.n_rays),
        MD_DOUBLE("observation.ray_max", experiment.world.observation.ray_max),
        Key{"observation.mode",
            [](CliConfig& c, std::string_view k, std::string_view v) {
                v = trim(v);
                if (v == "rays") {
                    c.experiment.world.observation.raster = false;
                } else if (v == "raster") {
                    c.experiment.world.observation.raster = true;
                } else {
                    throw ConfigError("invalid value for " + std::string(k) + ": '" + std::string(v) +
                                      "' (expected rays or raster)");
                }
            },
            [](const CliConfig& c) { return std::string(c.experiment.world.observation.raster ? "raster" : "rays"); }},
        MD_INT("observation.raster_size", experiment.world.observation.raster_size),
        MD_DOUBLE("observation.raster_extent", experiment.world.observation.raster_extent),
        MD_DOUBLE("expert.kp", experiment.expert.kp),
        MD_DOUBLE("expert.ki", experiment.expert.ki),
        MD_DOUBLE("expert.kd", experiment.expert.kd),
        MD_DOUBLE("expert.kh", experiment.expert.kh),
        MD_DOUBLE("expert.integral_clamp", experiment.expert.integral_clamp),
        Key{"policy.hidden",
            [](CliConfig& c, std::string_view k, std::string_view v) {
                c.experiment.aggregation.hidden = parse_list<int>(k, v);
            },
            [](const CliConfig& c) { return join(c.experiment.aggregation.hidden); }},
        MD_DOUBLE("train.learning_rate", experiment.aggregation.train.learning_rate),
        MD_INT("train.epochs", experiment.aggregation.train.epochs),
        MD_INT("train.batch_size", experiment.aggregation.train.batch_size),
        MD_DOUBLE("train.l2", experiment.aggregation.train.l2),
        MD_INT("aggregation.n_iter", experiment.aggregation.n_iter),
        MD_INT("aggregation.n_steps", experiment.aggregation.n_steps),
        MD_DOUBLE("aggregation.tolerance_rel", experiment.aggregation.tolerance_rel),
        MD_DOUBLE("aggregation.tolerance_floor", experiment.aggregation.tolerance_floor),
        Key{"aggregation.refit_mode",
            [](CliConfig& c, std::string_view k, std::string_view v) {
                v = trim(v);
                if (v == "warm") {
                    c.experiment.aggregation.refit_mode = RefitMode::Warm;
                } else if (v == "scratch") {
                    c.experiment.aggregation.refit_mode = RefitMode::Scratch;
                } else {
                    throw ConfigError("invalid value for " + std::string(k) + ": '" + std::string(v) +
                                      "' (expected warm or scratch)");
                }
            },
            [](const CliConfig& c) {
                return std::string(c.experiment.aggregation.refit_mode == RefitMode::Warm ? "warm" : "scratch");
            }},
        MD_INT("aggregation.dagger_iterations", experiment.aggregation.dagger_iterations),
        MD_PATH("paths.tracks_dir", tracks_dir),
        MD_PATH("paths.models_dir", models_dir),
        MD_PATH("paths.datasets_dir", datasets_dir),
        MD_PATH("paths.reports_dir", reports_dir),
    };
    return table;
}

#undef MD_DOUBLE
#undef MD_INT
#undef MD_U64
#undef MD_PATH

}  // namespace

CliConfig parse_config(std::string_view text) {
    CliConfig cfg;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'section.key = value'");
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        const auto& table = keys();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
        if (it == table.end()) throw ConfigError("unknown config key: " + std::string(key));
        if (!seen.insert(std::string(key)).second) throw ConfigError("duplicate config key: " + std::string(key));
        it->set(cfg, key, value);
    }
    return cfg;
}

CliConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

std::string dump_config(const CliConfig& cfg) {
    std::ostringstream os;
    for (const auto& k : keys()) os << k.name << " = " << k.get(cfg) << '\n';
    return os.str();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.emplace_back(k.name);
    return out;
}

}  // namespace metadagger
