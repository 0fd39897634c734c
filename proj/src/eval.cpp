#include "relprox/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "relprox/loss.hpp"
#include "relprox/train.hpp"

namespace relprox {

using nlohmann::json;

namespace {

double vec_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<double> head_scores(const ModelParams& params, const RepTriple& reps) {
    NoGrad guard;
    Tensor logits = add(matmul(reps.z_g, params.head_w), params.head_b);
    return {logits.data().begin(), logits.data().end()};
}

std::vector<double> class_scores(const ModelParams& params, const RepTriple& reps) {
    if (variant_uses_proxies(params.cfg.variant))
        return inference_scores(reps, params.proxies, omega_mask_for(params.cfg.variant));
    return head_scores(params, reps);
}

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// Simple deterministic-per-job worker pool.
void run_parallel(std::vector<std::function<void()>>& jobs, int threads) {
    if (threads <= 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<int>(threads, static_cast<int>(jobs.size()));
    if (threads <= 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::mutex mu;
    size_t next = 0;
    auto worker = [&] {
        while (true) {
            size_t mine;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= jobs.size()) return;
                mine = next++;
            }
            jobs[mine]();
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

int predict(const ModelParams& params, const RepTriple& reps) {
    return argmax(class_scores(params, reps));
}

EvalReport evaluate(const ModelParams& params, const std::vector<Instance>& split,
                    const CropPlan& plan, const std::vector<ClassSpec>& classes) {
    if (split.empty()) fail(ErrKind::invalid_argument, "evaluate: empty split");
    int c = params.cfg.classes;
    for (const Instance& inst : split)
        if (inst.label >= c)
            fail(ErrKind::config_mismatch, "evaluate: dataset class count exceeds model classes");

    std::map<int, std::vector<int>> group_members;  // group -> class ids
    std::map<int, int> class_group;
    for (const ClassSpec& spec : classes) {
        group_members[spec.group_id].push_back(spec.class_id);
        class_group[spec.class_id] = spec.group_id;
    }

    EvalReport report;
    report.confusion.assign(static_cast<size_t>(c), std::vector<int>(static_cast<size_t>(c), 0));
    std::map<int, std::pair<int, int>> group_hits;         // group -> (correct, count)
    std::map<int, std::pair<int, int>> group_within_hits;  // restricted argmax
    int correct = 0, within_correct = 0;

    NoGrad guard;
    for (const Instance& inst : split) {
        Grid img = instance_grid(inst);
        ForwardResult fwd = forward(params, img, plan);
        std::vector<double> scores = class_scores(params, fwd.reps);
        int pred = argmax(scores);
        report.confusion[static_cast<size_t>(inst.label)][static_cast<size_t>(pred)]++;
        if (pred == inst.label) ++correct;

        if (!classes.empty()) {
            int gid = class_group.at(inst.label);
            auto& gh = group_hits[gid];
            gh.second++;
            if (pred == inst.label) gh.first++;
            // Argmax restricted to the group's classes isolates the
            // fine-grained decision.
            const auto& members = group_members.at(gid);
            int best = members[0];
            for (int m : members)
                if (scores[static_cast<size_t>(m)] > scores[static_cast<size_t>(best)]) best = m;
            auto& gw = group_within_hits[gid];
            gw.second++;
            if (best == inst.label) {
                gw.first++;
                ++within_correct;
            }
        }
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    if (!classes.empty()) {
        report.within_group_accuracy =
            static_cast<double>(within_correct) / static_cast<double>(split.size());
        for (const auto& [gid, gh] : group_hits) {
            GroupEval ge;
            ge.group_id = gid;
            ge.count = gh.second;
            ge.accuracy = gh.second ? static_cast<double>(gh.first) / gh.second : 0.0;
            const auto& gw = group_within_hits[gid];
            ge.within_accuracy = gw.second ? static_cast<double>(gw.first) / gw.second : 0.0;
            report.groups.push_back(ge);
        }
    } else {
        report.within_group_accuracy = report.accuracy;
    }
    return report;
}

DisjointnessReport disjointness(const ModelParams& params, const std::vector<Instance>& split,
                                const CropPlan& plan, double epsilon_factor) {
    DisjointnessReport report;
    report.epsilon_factor = epsilon_factor;
    NoGrad guard;
    int disjoint_count = 0;
    for (const Instance& inst : split) {
        Grid img = instance_grid(inst);
        Grid map = activation_map(params.cfg, params.enc, img);
        BBox box = locate_global(map, img.h, img.w);
        View g = crop_global(img, box);
        std::vector<View> locals = crop_locals(g, plan);

        Tensor zg = encode(params.cfg, params.enc, g);
        std::vector<Tensor> zl;
        zl.reserve(locals.size());
        for (const View& v : locals) zl.push_back(encode(params.cfg, params.enc, v));

        InstanceDisjointness row;
        row.global_local_min = std::numeric_limits<double>::infinity();
        for (const Tensor& z : zl)
            row.global_local_min = std::min(row.global_local_min, vec_dist(zg.data(), z.data()));
        std::vector<double> pairwise;
        for (size_t i = 0; i < zl.size(); ++i)
            for (size_t j = i + 1; j < zl.size(); ++j)
                pairwise.push_back(vec_dist(zl[i].data(), zl[j].data()));
        if (pairwise.empty()) {
            row.local_local_median = 0.0;
        } else {
            std::sort(pairwise.begin(), pairwise.end());
            size_t n = pairwise.size();
            row.local_local_median =
                n % 2 == 1 ? pairwise[n / 2] : 0.5 * (pairwise[n / 2 - 1] + pairwise[n / 2]);
        }
        row.epsilon = epsilon_factor * row.local_local_median;
        row.disjoint = row.global_local_min > 2.0 * row.epsilon;
        if (row.disjoint) ++disjoint_count;
        report.instances.push_back(row);
    }
    report.disjoint_fraction =
        split.empty() ? 0.0 : static_cast<double>(disjoint_count) / static_cast<double>(split.size());
    return report;
}

AttentionGraph graph_from_attention(const std::vector<std::vector<double>>& attention) {
    AttentionGraph g;
    size_t k = attention.size();
    if (k < 2) return g;
    std::vector<std::pair<std::pair<int, int>, double>> scores;
    double total = 0.0;
    for (size_t i = 0; i < k; ++i)
        for (size_t j = i + 1; j < k; ++j) {
            double s = 0.5 * (attention[i][j] + attention[j][i]);
            scores.push_back({{static_cast<int>(i), static_cast<int>(j)}, s});
            total += s;
        }
    g.threshold = total / static_cast<double>(scores.size());
    for (const auto& [ij, s] : scores)
        if (s > g.threshold) g.edges.push_back({ij.first, ij.second, s});
    return g;
}

AttentionGraph attention_graph(const ModelParams& params, const Instance& inst,
                               const CropPlan& plan) {
    if (params.cfg.variant == Variant::ce_head || params.cfg.variant == Variant::meanpool_ast)
        fail(ErrKind::invalid_argument, "attention_graph: variant has no attention");
    NoGrad guard;
    Grid img = instance_grid(inst);
    ForwardResult fwd = forward(params, img, plan);
    if (!fwd.last_attention.defined())
        fail(ErrKind::invalid_argument, "attention_graph: no attention recorded");
    int n = fwd.last_attention.dim(0);  // k + 1 (summary first)
    int k = n - 1;
    std::vector<std::vector<double>> local(static_cast<size_t>(k),
                                           std::vector<double>(static_cast<size_t>(k), 0.0));
    auto a = fwd.last_attention.data();
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            local[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                a[static_cast<size_t>(i + 1) * n + (j + 1)];
    AttentionGraph g = graph_from_attention(local);
    for (const View& v : fwd.locals) g.nodes.push_back({v.row0, v.col0, v.pixels.h});
    return g;
}

std::string attention_graph_json(const AttentionGraph& g) {
    json nodes = json::array();
    for (const auto& n : g.nodes) nodes.push_back({{"origin", {n.row0, n.col0}}, {"side", n.side}});
    json edges = json::array();
    for (const auto& e : g.edges) edges.push_back({e.i, e.j, e.weight});
    return json{{"nodes", nodes}, {"edges", edges}, {"threshold", g.threshold}}.dump(2);
}

SweepResult sweep(const Dataset& ds, const TrainConfig& base_cfg, std::vector<int> l_values,
                  std::vector<double> patch_values, int seeds, int threads) {
    if (seeds < 1) fail(ErrKind::invalid_argument, "sweep: seeds must be >= 1");
    if (l_values.empty()) l_values = {base_cfg.k_max};
    if (patch_values.empty()) patch_values = {base_cfg.patch_frac};
    SweepResult result;
    result.l_values = l_values;
    result.patch_values = patch_values;
    result.seeds = seeds;
    for (int l : l_values)
        for (double p : patch_values) {
            SweepCell cell;
            cell.l = l;
            cell.patch_frac = p;
            cell.accs.assign(static_cast<size_t>(seeds), 0.0);
            cell.within_accs.assign(static_cast<size_t>(seeds), 0.0);
            result.cells.push_back(cell);
        }

    std::vector<std::function<void()>> jobs;
    for (size_t ci = 0; ci < result.cells.size(); ++ci)
        for (int s = 0; s < seeds; ++s)
            jobs.push_back([&result, &ds, base_cfg, ci, s] {
                SweepCell& cell = result.cells[ci];
                TrainConfig cfg = base_cfg;
                cfg.k_max = cell.l;
                cfg.patch_frac = cell.patch_frac;
                cfg.seed = base_cfg.seed + static_cast<uint64_t>(s);
                TrainResult tr = train(ds, cfg);
                EvalReport ev = evaluate(tr.state.params, ds.test, eval_plan(cfg), ds.classes);
                cell.accs[static_cast<size_t>(s)] = ev.accuracy;
                cell.within_accs[static_cast<size_t>(s)] = ev.within_group_accuracy;
            });
    run_parallel(jobs, threads);
    for (SweepCell& cell : result.cells) {
        cell.mean_acc = mean_of(cell.accs);
        cell.std_acc = std_of(cell.accs);
        cell.mean_within_acc = mean_of(cell.within_accs);
    }
    return result;
}

std::string sweep_json(const SweepResult& r) {
    json axes;
    axes["l"] = r.l_values;
    axes["patch"] = r.patch_values;
    json cells = json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"coords", {{"l", c.l}, {"patch", c.patch_frac}}},
                         {"seeds", r.seeds},
                         {"accs", c.accs},
                         {"mean_acc", c.mean_acc},
                         {"std_acc", c.std_acc},
                         {"mean_within_group_acc", c.mean_within_acc}});
    return json{{"axes", axes}, {"cells", cells}}.dump(2);
}

AblationResult ablate(const Dataset& ds, const TrainConfig& base_cfg, int seeds, int threads) {
    if (seeds < 1) fail(ErrKind::invalid_argument, "ablate: seeds must be >= 1");
    const std::vector<Variant> variants = {
        Variant::ce_head,      Variant::huber_relation, Variant::pairwise_contrastive,
        Variant::linear_rho,   Variant::meanpool_ast,   Variant::full,
        Variant::drop_zl,      Variant::drop_zg,        Variant::drop_r,
    };
    AblationResult result;
    result.seeds = seeds;
    for (Variant v : variants) {
        AblationRow row;
        row.variant = variant_name(v);
        row.accs.assign(static_cast<size_t>(seeds), 0.0);
        result.rows.push_back(row);
    }
    std::vector<std::function<void()>> jobs;
    for (size_t vi = 0; vi < variants.size(); ++vi)
        for (int s = 0; s < seeds; ++s)
            jobs.push_back([&result, &ds, base_cfg, &variants, vi, s] {
                TrainConfig cfg = base_cfg;
                cfg.variant = variants[vi];
                cfg.seed = base_cfg.seed + static_cast<uint64_t>(s);
                TrainResult tr = train(ds, cfg);
                EvalReport ev = evaluate(tr.state.params, ds.test, eval_plan(cfg), ds.classes);
                result.rows[vi].accs[static_cast<size_t>(s)] = ev.accuracy;
            });
    run_parallel(jobs, threads);
    for (AblationRow& row : result.rows) {
        row.mean_acc = mean_of(row.accs);
        row.std_acc = std_of(row.accs);
    }
    return result;
}

std::string ablation_json(const AblationResult& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"variant", row.variant},
                        {"seeds", r.seeds},
                        {"accs", row.accs},
                        {"mean_acc", row.mean_acc},
                        {"std_acc", row.std_acc}});
    return json{{"rows", rows}}.dump(2);
}

void dump_embeddings(const ModelParams& params, const std::vector<Instance>& split,
                     const CropPlan& plan, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream bin(dir / "emb.bin", std::ios::binary | std::ios::trunc);
    if (!bin) fail(ErrKind::io, "dump_embeddings: cannot write " + (dir / "emb.bin").string());
    json rows = json::array();
    NoGrad guard;
    auto write_row = [&](const Tensor& t, int instance, int label, const std::string& kind) {
        for (double v : t.data()) {
            float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            char out[4];
            for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            bin.write(out, 4);
        }
        rows.push_back({{"instance", instance}, {"label", label}, {"kind", kind}});
    };
    for (size_t idx = 0; idx < split.size(); ++idx) {
        const Instance& inst = split[idx];
        Grid img = instance_grid(inst);
        Grid map = activation_map(params.cfg, params.enc, img);
        BBox box = locate_global(map, img.h, img.w);
        View g = crop_global(img, box);
        Tensor zg = encode(params.cfg, params.enc, g);
        write_row(zg, static_cast<int>(idx), inst.label, "global");
        if (params.cfg.variant == Variant::ce_head) continue;
        std::vector<View> locals = crop_locals(g, plan);
        std::vector<Tensor> zl;
        for (const View& v : locals) {
            zl.push_back(encode(params.cfg, params.enc, v));
            write_row(zl.back(), static_cast<int>(idx), inst.label, "local");
        }
        RepTriple reps = encode_views(params, g, locals);
        write_row(reps.z_l, static_cast<int>(idx), inst.label, "local_summary");
        if (reps.r.defined()) write_row(reps.r, static_cast<int>(idx), inst.label, "relational");
    }
    json meta{{"d", params.cfg.d}, {"rows", rows}};
    std::ofstream mf(dir / "emb_meta.json", std::ios::trunc);
    if (!mf) fail(ErrKind::io, "dump_embeddings: cannot write emb_meta.json");
    mf << meta.dump(2) << "\n";
}

}  // namespace relprox
