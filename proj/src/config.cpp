#include "relprox/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "json.hpp"

namespace relprox {

using nlohmann::json;

namespace {

struct Field {
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T checked(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        fail(ErrKind::config_bad_value, "config: bad value type for key '" + key + "'");
    }
}

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> fields = [] {
        std::map<std::string, Field> f;
        auto add = [&f](const std::string& key, auto getter, auto setter) {
            f[key] = Field{getter, setter};
        };
        // dataset
        add("data.classes", [](const RunConfig& c) { return json(c.data.classes); },
            [](RunConfig& c, const json& v) { c.data.classes = checked<int>(v, "data.classes"); });
        add("data.k", [](const RunConfig& c) { return json(c.data.k); },
            [](RunConfig& c, const json& v) { c.data.k = checked<int>(v, "data.k"); });
        add("data.mode", [](const RunConfig& c) { return json(mode_name(c.data.mode)); },
            [](RunConfig& c, const json& v) {
                c.data.mode = mode_from_name(checked<std::string>(v, "data.mode"));
            });
        add("data.seed", [](const RunConfig& c) { return json(c.data.seed); },
            [](RunConfig& c, const json& v) { c.data.seed = checked<uint64_t>(v, "data.seed"); });
        add("data.slot_grid", [](const RunConfig& c) { return json(c.data.slot_grid); },
            [](RunConfig& c, const json& v) { c.data.slot_grid = checked<int>(v, "data.slot_grid"); });
        add("data.glyph_side", [](const RunConfig& c) { return json(c.data.glyph_side); },
            [](RunConfig& c, const json& v) { c.data.glyph_side = checked<int>(v, "data.glyph_side"); });
        add("data.image_side", [](const RunConfig& c) { return json(c.data.image_side); },
            [](RunConfig& c, const json& v) { c.data.image_side = checked<int>(v, "data.image_side"); });
        add("data.margin", [](const RunConfig& c) { return json(c.data.margin); },
            [](RunConfig& c, const json& v) { c.data.margin = checked<int>(v, "data.margin"); });
        add("data.glyph_vocab", [](const RunConfig& c) { return json(c.data.glyph_vocab); },
            [](RunConfig& c, const json& v) { c.data.glyph_vocab = checked<int>(v, "data.glyph_vocab"); });
        add("data.train_per_class", [](const RunConfig& c) { return json(c.data.train_per_class); },
            [](RunConfig& c, const json& v) {
                c.data.train_per_class = checked<int>(v, "data.train_per_class");
            });
        add("data.test_per_class", [](const RunConfig& c) { return json(c.data.test_per_class); },
            [](RunConfig& c, const json& v) {
                c.data.test_per_class = checked<int>(v, "data.test_per_class");
            });
        add("data.noise_sigma", [](const RunConfig& c) { return json(c.data.noise_sigma); },
            [](RunConfig& c, const json& v) {
                c.data.noise_sigma = checked<double>(v, "data.noise_sigma");
            });
        add("data.jitter_max", [](const RunConfig& c) { return json(c.data.jitter_max); },
            [](RunConfig& c, const json& v) { c.data.jitter_max = checked<int>(v, "data.jitter_max"); });
        // training
        add("train.epochs", [](const RunConfig& c) { return json(c.train.epochs); },
            [](RunConfig& c, const json& v) { c.train.epochs = checked<int>(v, "train.epochs"); });
        add("train.lr", [](const RunConfig& c) { return json(c.train.lr); },
            [](RunConfig& c, const json& v) { c.train.lr = checked<double>(v, "train.lr"); });
        add("train.momentum", [](const RunConfig& c) { return json(c.train.momentum); },
            [](RunConfig& c, const json& v) { c.train.momentum = checked<double>(v, "train.momentum"); });
        add("train.weight_decay", [](const RunConfig& c) { return json(c.train.weight_decay); },
            [](RunConfig& c, const json& v) {
                c.train.weight_decay = checked<double>(v, "train.weight_decay");
            });
        add("train.lr_decay_factor", [](const RunConfig& c) { return json(c.train.lr_decay_factor); },
            [](RunConfig& c, const json& v) {
                c.train.lr_decay_factor = checked<double>(v, "train.lr_decay_factor");
            });
        add("train.lr_decay_every", [](const RunConfig& c) { return json(c.train.lr_decay_every); },
            [](RunConfig& c, const json& v) {
                c.train.lr_decay_every = checked<int>(v, "train.lr_decay_every");
            });
        add("train.batch_size", [](const RunConfig& c) { return json(c.train.batch_size); },
            [](RunConfig& c, const json& v) { c.train.batch_size = checked<int>(v, "train.batch_size"); });
        add("train.k_max", [](const RunConfig& c) { return json(c.train.k_max); },
            [](RunConfig& c, const json& v) { c.train.k_max = checked<int>(v, "train.k_max"); });
        add("train.patch_frac", [](const RunConfig& c) { return json(c.train.patch_frac); },
            [](RunConfig& c, const json& v) {
                c.train.patch_frac = checked<double>(v, "train.patch_frac");
            });
        add("train.warmup_epochs", [](const RunConfig& c) { return json(c.train.warmup_epochs); },
            [](RunConfig& c, const json& v) {
                c.train.warmup_epochs = checked<int>(v, "train.warmup_epochs");
            });
        add("train.seed", [](const RunConfig& c) { return json(c.train.seed); },
            [](RunConfig& c, const json& v) { c.train.seed = checked<uint64_t>(v, "train.seed"); });
        add("train.eval_seed", [](const RunConfig& c) { return json(c.train.eval_seed); },
            [](RunConfig& c, const json& v) {
                c.train.eval_seed = checked<uint64_t>(v, "train.eval_seed");
            });
        add("train.alpha", [](const RunConfig& c) { return json(c.train.loss.alpha); },
            [](RunConfig& c, const json& v) { c.train.loss.alpha = checked<double>(v, "train.alpha"); });
        add("train.delta", [](const RunConfig& c) { return json(c.train.loss.delta); },
            [](RunConfig& c, const json& v) { c.train.loss.delta = checked<double>(v, "train.delta"); });
        add("train.variant", [](const RunConfig& c) { return json(variant_name(c.train.variant)); },
            [](RunConfig& c, const json& v) {
                c.train.variant = variant_from_name(checked<std::string>(v, "train.variant"));
            });
        add("train.d", [](const RunConfig& c) { return json(c.train.d); },
            [](RunConfig& c, const json& v) { c.train.d = checked<int>(v, "train.d"); });
        add("train.ast_layers", [](const RunConfig& c) { return json(c.train.ast_layers); },
            [](RunConfig& c, const json& v) { c.train.ast_layers = checked<int>(v, "train.ast_layers"); });
        add("train.use_positional", [](const RunConfig& c) { return json(c.train.use_positional); },
            [](RunConfig& c, const json& v) {
                c.train.use_positional = checked<bool>(v, "train.use_positional");
            });
        add("train.encoder_input", [](const RunConfig& c) { return json(c.train.encoder_input); },
            [](RunConfig& c, const json& v) {
                c.train.encoder_input = checked<int>(v, "train.encoder_input");
            });
        // eval / run
        add("eval.epsilon_factor", [](const RunConfig& c) { return json(c.epsilon_factor); },
            [](RunConfig& c, const json& v) {
                c.epsilon_factor = checked<double>(v, "eval.epsilon_factor");
            });
        add("run.threads", [](const RunConfig& c) { return json(c.threads); },
            [](RunConfig& c, const json& v) { c.threads = checked<int>(v, "run.threads"); });
        add("sweep.seeds", [](const RunConfig& c) { return json(c.sweep_seeds); },
            [](RunConfig& c, const json& v) { c.sweep_seeds = checked<int>(v, "sweep.seeds"); });
        return f;
    }();
    return fields;
}

json parse_override_value(const std::string& raw) {
    // Accept JSON literals (numbers, booleans) or fall back to a string.
    json v = json::parse(raw, nullptr, false);
    if (!v.is_discarded() && !v.is_object() && !v.is_array()) return v;
    return json(raw);
}

void apply_json(RunConfig& cfg, const json& doc) {
    if (!doc.is_object()) fail(ErrKind::config_bad_value, "config: top level must be an object");
    for (const auto& [key, value] : doc.items()) {
        auto it = registry().find(key);
        if (it == registry().end())
            fail(ErrKind::config_unknown_key, "config: unknown key '" + key + "'");
        it->second.set(cfg, value);
    }
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end())
        fail(ErrKind::config_unknown_key, "config: unknown key '" + key + "'");
    it->second.set(cfg, parse_override_value(value));
}

RunConfig config_load(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!file.empty()) {
        std::ifstream f(file);
        if (!f) fail(ErrKind::io, "config: cannot open " + file.string());
        json doc;
        try {
            f >> doc;
        } catch (const json::exception& e) {
            fail(ErrKind::io, std::string("config: unparseable JSON: ") + e.what());
        }
        apply_json(cfg, doc);
    }
    for (const auto& [key, value] : overrides) apply_override(cfg, key, value);
    return cfg;
}

std::string config_json(const RunConfig& cfg) {
    json doc = json::object();
    for (const auto& [key, field] : registry()) doc[key] = field.get(cfg);
    return doc.dump(2);
}

void write_effective_config(const RunConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / "effective_config.json", std::ios::trunc);
    if (!f) fail(ErrKind::io, "config: cannot write effective_config.json in " + dir.string());
    f << config_json(cfg) << "\n";
}

}  // namespace relprox
