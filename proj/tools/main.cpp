#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relprox/config.hpp"
#include "relprox/dataops.hpp"
#include "relprox/eval.hpp"
#include "relprox/train.hpp"

namespace fs = std::filesystem;
using namespace relprox;

namespace {

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& raw) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& s : raw) {
        size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            fail(ErrKind::config_bad_value, "--set expects key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

// Axis grammar: "l=1..9", "l=1,2,3", "patch=0.2,0.35,0.5".
void parse_axis(const std::string& spec, std::vector<int>& l_values,
                std::vector<double>& patch_values) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos)
        fail(ErrKind::config_bad_value, "--axis expects name=values, got '" + spec + "'");
    std::string name = spec.substr(0, eq);
    std::string body = spec.substr(eq + 1);
    std::vector<std::string> parts;
    size_t range = body.find("..");
    if (range != std::string::npos) {
        if (name != "l")
            fail(ErrKind::config_bad_value, "--axis ranges are only supported for 'l'");
        int lo = std::stoi(body.substr(0, range));
        int hi = std::stoi(body.substr(range + 2));
        if (hi < lo) fail(ErrKind::config_bad_value, "--axis range is empty: '" + spec + "'");
        for (int v = lo; v <= hi; ++v) l_values.push_back(v);
        return;
    }
    size_t start = 0;
    while (start <= body.size()) {
        size_t comma = body.find(',', start);
        std::string tok =
            body.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!tok.empty()) parts.push_back(tok);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.empty()) fail(ErrKind::config_bad_value, "--axis has no values: '" + spec + "'");
    if (name == "l")
        for (const auto& t : parts) l_values.push_back(std::stoi(t));
    else if (name == "patch")
        for (const auto& t : parts) patch_values.push_back(std::stod(t));
    else
        fail(ErrKind::config_bad_value, "--axis name must be 'l' or 'patch', got '" + name + "'");
}

TrainState load_model_dir(const fs::path& dir) { return checkpoint_load(dir / "checkpoint.json"); }

void write_text(const fs::path& file, const std::string& text) {
    if (!file.parent_path().empty()) fs::create_directories(file.parent_path());
    std::ofstream f(file, std::ios::trunc);
    if (!f) fail(ErrKind::io, "cannot write " + file.string());
    f << text;
    if (text.empty() || text.back() != '\n') f << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relprox: relational-proxy fine-grained categorization on synthetic corpora"};
    app.require_subcommand(1);

    std::string config_file;
    std::vector<std::string> set_args;
    auto add_config_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON config file (flat dotted keys)");
        sub->add_option("--set", set_args, "config override key=value (repeatable)")
            ->take_all();
    };

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_out, gen_mode;
    int gen_classes = -1, gen_k = -1;
    int64_t gen_seed = -1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--mode", gen_mode, "fine|coarse");
    gen->add_option("--classes", gen_classes, "class count");
    gen->add_option("--k", gen_k, "construction k");
    gen->add_option("--seed", gen_seed, "dataset seed");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_data, tr_out;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a trained model");
    std::string ev_model, ev_data, ev_split = "test", ev_dump;
    ev->add_option("--model", ev_model, "model directory (train output)")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "train|test (default test)");
    ev->add_option("--dump-embeddings", ev_dump, "directory for emb.bin / emb_meta.json");

    // sweep
    auto* sw = app.add_subcommand("sweep", "train across an axis grid");
    std::string sw_data, sw_out;
    std::vector<std::string> sw_axes;
    int sw_seeds = -1;
    sw->add_option("--data", sw_data, "dataset directory")->required();
    sw->add_option("--axis", sw_axes, "axis spec: l=1..9 or patch=0.2,0.5 (repeatable)")
        ->required();
    sw->add_option("--seeds", sw_seeds, "seeds per cell");
    sw->add_option("--out", sw_out, "output JSON file")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the ablation variant table");
    std::string ab_data, ab_out;
    int ab_seeds = -1;
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--seeds", ab_seeds, "seeds per variant");
    ab->add_option("--out", ab_out, "output JSON file")->required();

    // graph
    auto* gr = app.add_subcommand("graph", "emit the local-view attention graph of one instance");
    std::string gr_model, gr_data, gr_out;
    int gr_instance = 0;
    std::string gr_split = "test";
    gr->add_option("--model", gr_model, "model directory")->required();
    gr->add_option("--data", gr_data, "dataset directory")->required();
    gr->add_option("--instance", gr_instance, "instance index")->required();
    gr->add_option("--split", gr_split, "train|test (default test)");
    gr->add_option("--out", gr_out, "output JSON file")->required();

    // audit
    auto* au = app.add_subcommand("audit", "bag ambiguity audit of a fine dataset");
    std::string au_data;
    int au_m = -1;
    au->add_option("--data", au_data, "dataset directory")->required();
    au->add_option("--m", au_m, "view count")->required();

    add_config_opts(gen);
    add_config_opts(tr);
    add_config_opts(ev);
    add_config_opts(sw);
    add_config_opts(ab);
    add_config_opts(gr);
    add_config_opts(au);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = config_load(config_file.empty() ? fs::path{} : fs::path(config_file),
                                    parse_sets(set_args));

        if (gen->parsed()) {
            if (!gen_mode.empty()) cfg.data.mode = mode_from_name(gen_mode);
            if (gen_classes >= 0) cfg.data.classes = gen_classes;
            if (gen_k >= 0) cfg.data.k = gen_k;
            if (gen_seed >= 0) cfg.data.seed = static_cast<uint64_t>(gen_seed);
            Dataset ds = generate(cfg.data);
            save(ds, gen_out);
            write_effective_config(cfg, gen_out);
            std::cout << "generated " << mode_name(ds.meta.mode) << " dataset: " << ds.meta.classes
                      << " classes, " << ds.train.size() << " train / " << ds.test.size()
                      << " test instances -> " << gen_out << "\n";
        } else if (tr->parsed()) {
            Dataset ds = load(tr_data);
            fs::create_directories(tr_out);
            write_effective_config(cfg, tr_out);
            std::ofstream metrics(fs::path(tr_out) / "metrics.jsonl", std::ios::trunc);
            if (!metrics) fail(ErrKind::io, "cannot write metrics.jsonl");
            TrainResult result = train(
                ds, cfg.train,
                [&](const EpochMetrics& m) {
                    metrics << metrics_json_line(m) << "\n";
                    metrics.flush();
                    std::cout << metrics_json_line(m) << "\n";
                },
                tr_out);
            save_model(result.state.params, fs::path(tr_out) / "model.json");
        } else if (ev->parsed()) {
            TrainState state = load_model_dir(ev_model);
            Dataset ds = load(ev_data);
            const auto& split = ev_split == "train" ? ds.train : ds.test;
            if (ev_split != "train" && ev_split != "test")
                fail(ErrKind::config_bad_value, "--split must be train or test");
            CropPlan plan = eval_plan(state.cfg);
            EvalReport report = evaluate(state.params, split, plan, ds.classes);
            nlohmann::json out{{"split", ev_split},
                               {"accuracy", report.accuracy},
                               {"within_group_accuracy", report.within_group_accuracy}};
            nlohmann::json groups = nlohmann::json::array();
            for (const auto& g : report.groups)
                groups.push_back({{"group", g.group_id},
                                  {"count", g.count},
                                  {"accuracy", g.accuracy},
                                  {"within_accuracy", g.within_accuracy}});
            out["groups"] = groups;
            std::cout << out.dump(2) << "\n";
            if (!ev_dump.empty()) {
                dump_embeddings(state.params, split, plan, ev_dump);
                write_effective_config(cfg, ev_dump);
            }
        } else if (sw->parsed()) {
            Dataset ds = load(sw_data);
            std::vector<int> l_values;
            std::vector<double> patch_values;
            for (const std::string& a : sw_axes) parse_axis(a, l_values, patch_values);
            int seeds = sw_seeds > 0 ? sw_seeds : cfg.sweep_seeds;
            SweepResult result = sweep(ds, cfg.train, l_values, patch_values, seeds, cfg.threads);
            write_text(sw_out, sweep_json(result));
            if (!fs::path(sw_out).parent_path().empty())
                write_effective_config(cfg, fs::path(sw_out).parent_path());
            std::cout << "sweep written to " << sw_out << "\n";
        } else if (ab->parsed()) {
            Dataset ds = load(ab_data);
            int seeds = ab_seeds > 0 ? ab_seeds : cfg.sweep_seeds;
            AblationResult result = ablate(ds, cfg.train, seeds, cfg.threads);
            write_text(ab_out, ablation_json(result));
            if (!fs::path(ab_out).parent_path().empty())
                write_effective_config(cfg, fs::path(ab_out).parent_path());
            std::cout << "ablation table written to " << ab_out << "\n";
        } else if (gr->parsed()) {
            TrainState state = load_model_dir(gr_model);
            Dataset ds = load(gr_data);
            const auto& split = gr_split == "train" ? ds.train : ds.test;
            if (gr_instance < 0 || gr_instance >= static_cast<int>(split.size()))
                fail(ErrKind::invalid_argument, "graph: instance index out of range");
            AttentionGraph g =
                attention_graph(state.params, split[static_cast<size_t>(gr_instance)],
                                eval_plan(state.cfg));
            write_text(gr_out, attention_graph_json(g));
            std::cout << "attention graph written to " << gr_out << "\n";
        } else if (au->parsed()) {
            Dataset ds = load(au_data);
            AmbiguityReport report = bag_ambiguity_audit(ds, au_m);
            for (const auto& g : report.groups) {
                std::cout << "group " << g.group_id << " classes [";
                for (size_t i = 0; i < g.class_ids.size(); ++i)
                    std::cout << (i ? "," : "") << g.class_ids[i];
                std::cout << "] m=" << report.m << ": "
                          << (g.ambiguous ? "ambiguous" : "determining") << "\n";
            }
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "[error] " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "[error] unexpected: " << e.what() << "\n";
        return 2;
    }
}
