#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relprox/dataops.hpp"
#include "relprox/model.hpp"
#include "relprox/views.hpp"

namespace relprox {

struct TrainConfig;  // train.hpp includes this header

struct GroupEval {
    int group_id = 0;
    int count = 0;
    double accuracy = 0.0;         // overall argmax restricted to group members
    double within_accuracy = 0.0;  // argmax over the group's own classes
};

struct EvalReport {
    double accuracy = 0.0;
    double within_group_accuracy = 0.0;
    std::vector<std::vector<int>> confusion;
    std::vector<GroupEval> groups;
};

EvalReport evaluate(const ModelParams& params, const std::vector<Instance>& split,
                    const CropPlan& plan, const std::vector<ClassSpec>& classes = {});

int predict(const ModelParams& params, const RepTriple& reps);

struct InstanceDisjointness {
    double global_local_min = 0.0;    // min distance z_g to any z_l
    double local_local_median = 0.0;  // median pairwise local distance
    double epsilon = 0.0;
    bool disjoint = false;
};

struct DisjointnessReport {
    double epsilon_factor = 0.25;
    double disjoint_fraction = 0.0;
    std::vector<InstanceDisjointness> instances;
};

// Embeds every view with the relation-agnostic encoder only and tests
// whether the global embedding stays outside the 2-epsilon neighbourhood of
// every local embedding; epsilon defaults to a quarter of the within-instance
// local spread.
DisjointnessReport disjointness(const ModelParams& params, const std::vector<Instance>& split,
                                const CropPlan& plan, double epsilon_factor = 0.25);

struct AttentionGraph {
    struct Node {
        int row0 = 0, col0 = 0, side = 0;
    };
    struct Edge {
        int i = 0, j = 0;
        double weight = 0.0;
    };
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    double threshold = 0.0;
};

// Pure rule on a k x k local-local attention matrix: symmetrize by
// averaging, threshold at the mean of the pairwise scores, keep edges
// strictly above it.
AttentionGraph graph_from_attention(const std::vector<std::vector<double>>& attention);

AttentionGraph attention_graph(const ModelParams& params, const Instance& inst,
                               const CropPlan& plan);

std::string attention_graph_json(const AttentionGraph& g);

struct SweepCell {
    int l = 0;
    double patch_frac = 0.0;
    std::vector<double> accs;  // one per seed
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::vector<double> within_accs;
    double mean_within_acc = 0.0;
};

struct SweepResult {
    std::vector<int> l_values;
    std::vector<double> patch_values;
    int seeds = 0;
    std::vector<SweepCell> cells;
};

// Trains one model per (cell, seed); cells run in parallel worker threads,
// each training fully deterministic.
SweepResult sweep(const Dataset& ds, const TrainConfig& base_cfg, std::vector<int> l_values,
                  std::vector<double> patch_values, int seeds, int threads = 0);

std::string sweep_json(const SweepResult& r);

struct AblationRow {
    std::string variant;
    std::vector<double> accs;
    double mean_acc = 0.0;
    double std_acc = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    int seeds = 0;
};

AblationResult ablate(const Dataset& ds, const TrainConfig& base_cfg, int seeds, int threads = 0);

std::string ablation_json(const AblationResult& r);

// emb.bin: little-endian float32 rows of length d; emb_meta.json describes
// each row (instance index, label, view kind).
void dump_embeddings(const ModelParams& params, const std::vector<Instance>& split,
                     const CropPlan& plan, const std::filesystem::path& dir);

}  // namespace relprox
