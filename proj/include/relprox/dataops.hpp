#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relprox/common.hpp"
#include "relprox/views.hpp"

namespace relprox {

enum class DatasetMode { fine, coarse };

std::string mode_name(DatasetMode m);
DatasetMode mode_from_name(const std::string& s);

struct Glyph {
    int id = 0;
    int side = 0;
    std::vector<double> tile;  // side x side, values in [0, 1]
};

struct ClassSpec {
    int class_id = 0;
    int group_id = 0;
    std::vector<int> glyph_multiset;  // sorted
    std::vector<int> arrangement;     // arrangement[slot] = glyph id, row-major slots
};

struct Nuisance {
    int dy = 0;
    int dx = 0;
    uint64_t noise_seed = 0;
    double brightness = 1.0;
};

struct Instance {
    int label = 0;
    int side = 0;
    std::vector<float> image;  // side x side, row-major, clamped to [0, 1]
    Nuisance nuisance;
};

struct DatasetMeta {
    int classes = 8;
    int k = 4;
    DatasetMode mode = DatasetMode::fine;
    uint64_t seed = 1;
    int slot_grid = 3;    // slots per axis
    int glyph_side = 8;
    int image_side = 48;
    int margin = 6;       // background border around the slot field
    int glyph_vocab = 12;
    int train_per_class = 24;
    int test_per_class = 16;
    double noise_sigma = 0.05;
    int jitter_max = 4;

    int slot_count() const { return slot_grid * slot_grid; }
    int slot_size() const { return (image_side - 2 * margin) / slot_grid; }
};

struct Dataset {
    DatasetMeta meta;
    std::vector<Glyph> glyphs;
    std::vector<ClassSpec> classes;
    std::vector<Instance> train;
    std::vector<Instance> test;
};

// Deterministic class specs and glyph tiles for a meta; generate() and
// load() share this so a dataset is reproducible from its meta alone.
void build_specs(const DatasetMeta& meta, std::vector<Glyph>& glyphs,
                 std::vector<ClassSpec>& classes);

Dataset generate(const DatasetMeta& meta);

void save(const Dataset& ds, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

struct GroupAmbiguity {
    int group_id = 0;
    std::vector<int> class_ids;
    bool ambiguous = false;
};

struct AmbiguityReport {
    int m = 0;
    std::vector<GroupAmbiguity> groups;
    bool all_ambiguous() const {
        for (const auto& g : groups)
            if (!g.ambiguous) return false;
        return true;
    }
};

// Position-free bag audit: a group is ambiguous at view count m when the
// family of glyph-id multisets over all m-slot subsets is identical across
// the group's classes. m == slot count means full arrangement knowledge and
// is always determining for distinct classes.
AmbiguityReport bag_ambiguity_audit(const Dataset& ds, int m);

Grid instance_grid(const Instance& inst);

}  // namespace relprox
