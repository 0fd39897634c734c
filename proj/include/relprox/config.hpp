#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "relprox/dataops.hpp"
#include "relprox/train.hpp"

namespace relprox {

// Union of the dataset, training, loss and eval knobs, addressed by flat
// dotted keys ("data.classes", "train.lr", ...). Every key has a documented
// default; unknown keys are errors.
struct RunConfig {
    DatasetMeta data;
    TrainConfig train;
    double epsilon_factor = 0.25;  // disjointness policy
    int threads = 0;               // sweep/ablate workers, 0 = hardware
    int sweep_seeds = 3;
};

// defaults <- file <- overrides, in that precedence. Override values are
// parsed by the key's type.
RunConfig config_load(const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides);

inline RunConfig config_defaults() { return config_load({}, {}); }

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Serialized effective config (sorted keys); echoed into every output
// directory so any artifact is reproducible from it alone.
std::string config_json(const RunConfig& cfg);

void write_effective_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace relprox
