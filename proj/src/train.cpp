#include "relprox/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "relprox/eval.hpp"
#include "relprox/rng.hpp"

namespace relprox {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;
enum : uint64_t { kStreamShuffle = 0x5f17, kStreamCrops = 0xc407 };

double lr_at(const TrainConfig& cfg, int epoch) {
    int steps = cfg.lr_decay_every > 0 ? epoch / cfg.lr_decay_every : 0;
    return cfg.lr * std::pow(cfg.lr_decay_factor, steps);
}

json cfg_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"lr", c.lr},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"lr_decay_factor", c.lr_decay_factor},
                {"lr_decay_every", c.lr_decay_every},
                {"batch_size", c.batch_size},
                {"k_max", c.k_max},
                {"patch_frac", c.patch_frac},
                {"warmup_epochs", c.warmup_epochs},
                {"seed", c.seed},
                {"eval_seed", c.eval_seed},
                {"alpha", c.loss.alpha},
                {"delta", c.loss.delta},
                {"variant", variant_name(c.variant)},
                {"d", c.d},
                {"ast_layers", c.ast_layers},
                {"use_positional", c.use_positional},
                {"encoder_input", c.encoder_input}};
}

TrainConfig cfg_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    c.lr_decay_every = j.at("lr_decay_every").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.k_max = j.at("k_max").get<int>();
    c.patch_frac = j.at("patch_frac").get<double>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.eval_seed = j.at("eval_seed").get<uint64_t>();
    c.loss.alpha = j.at("alpha").get<double>();
    c.loss.delta = j.at("delta").get<double>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.d = j.at("d").get<int>();
    c.ast_layers = j.at("ast_layers").get<int>();
    c.use_positional = j.at("use_positional").get<bool>();
    c.encoder_input = j.at("encoder_input").get<int>();
    return c;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) fail(ErrKind::config_bad_value, "train: epochs must be >= 1");
    if (!(cfg.lr >= 0.0)) fail(ErrKind::config_bad_value, "train: lr must be >= 0");
    if (cfg.batch_size < 2) fail(ErrKind::config_bad_value, "train: batch_size must be >= 2");
    if (!(cfg.lr_decay_factor > 0.0) || cfg.lr_decay_factor > 1.0)
        fail(ErrKind::config_bad_value, "train: lr_decay_factor must be in (0, 1]");
    if (cfg.k_max < 1) fail(ErrKind::config_bad_value, "train: k_max must be >= 1");
    if (cfg.warmup_epochs < 0) fail(ErrKind::config_bad_value, "train: warmup_epochs must be >= 0");
    validate(cfg.loss);
}

std::string metrics_json_line(const EpochMetrics& m) {
    json j{{"epoch", m.epoch}, {"loss", m.loss},   {"train_acc", m.train_acc},
           {"test_acc", m.test_acc}, {"lr", m.lr}, {"k", m.k},
           {"wall_ms", m.wall_ms}};
    return j.dump();
}

TrainState init_train_state(const TrainConfig& cfg) {
    validate(cfg);
    TrainState st;
    st.cfg = cfg;
    ModelConfig mc;
    mc.d = cfg.d;
    mc.ast_layers = cfg.ast_layers;
    mc.use_positional = cfg.use_positional;
    mc.encoder_input = cfg.encoder_input;
    mc.variant = cfg.variant;
    mc.init_seed = cfg.seed;
    mc.classes = 0;  // filled when the dataset is seen
    st.params = ModelParams{};
    st.params.cfg = mc;
    st.epoch = 0;
    return st;
}

CropPlan train_plan(const TrainConfig& cfg, int epoch) {
    uint64_t plan_seed = hash_combine(cfg.seed, hash_combine(kStreamCrops, static_cast<uint64_t>(epoch)));
    if (cfg.k_max >= 5) return schedule(epoch, cfg.warmup_epochs, cfg.k_max, cfg.patch_frac, plan_seed);
    return make_plan(cfg.k_max, cfg.patch_frac, plan_seed);
}

CropPlan eval_plan(const TrainConfig& cfg) {
    return make_plan(cfg.k_max, cfg.patch_frac, cfg.eval_seed);
}

TrainResult train(TrainState state, const Dataset& ds,
                  const std::function<void(const EpochMetrics&)>& on_epoch,
                  const std::filesystem::path& checkpoint_dir) {
    const TrainConfig& cfg = state.cfg;
    validate(cfg);
    if (state.params.cfg.classes == 0) {
        // Fresh state: materialize the model now that the class count is known.
        ModelConfig mc = state.params.cfg;
        mc.classes = ds.meta.classes;
        state.params = init_model(mc);
    }
    if (state.params.cfg.classes != ds.meta.classes)
        fail(ErrKind::config_mismatch, "train: dataset class count does not match proxy count");
    if (state.momenta.empty())
        for (const auto& [name, t] : state.params.named_params())
            state.momenta.push_back(Tensor::zeros(t.shape()));

    auto named = state.params.named_params();
    if (state.momenta.size() != named.size())
        fail(ErrKind::config_mismatch, "train: momentum buffers do not match parameter list");

    TrainResult result;
    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double lr = lr_at(cfg, epoch);
        CropPlan plan = train_plan(cfg, epoch);

        std::vector<int> order(ds.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng =
            Rng::substream(cfg.seed, hash_combine(kStreamShuffle, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            Tape tape;
            BatchReps batch;
            batch.proxies = state.params.proxies;
            for (size_t i = start; i < end; ++i) {
                const Instance& inst = ds.train[static_cast<size_t>(order[i])];
                Grid img = instance_grid(inst);
                ForwardResult fwd = forward(state.params, img, plan);
                batch.entries.push_back({fwd.reps, inst.label});
            }
            Tensor loss;
            try {
                if (variant_uses_proxies(cfg.variant))
                    loss = rproxy_loss(batch, cfg.loss, omega_mask_for(cfg.variant));
                else
                    loss = ablation_loss(cfg.variant, batch, state.params.head_w,
                                         state.params.head_b);
            } catch (const Error& e) {
                if (e.kind() == ErrKind::non_finite || e.kind() == ErrKind::zero_vector)
                    fail(ErrKind::divergence,
                         "train: loss diverged at epoch " + std::to_string(epoch) +
                             " (" + e.what() + "); last checkpoint retained");
                throw;
            }
            double loss_value = loss.item();
            if (!std::isfinite(loss_value))
                fail(ErrKind::divergence,
                     "train: loss diverged at epoch " + std::to_string(epoch) +
                         "; last checkpoint retained");
            tape.backward(loss);
            loss_sum += loss_value;
            ++batches;

            for (size_t pi = 0; pi < named.size(); ++pi) {
                Tensor& param = named[pi].second;
                bool is_proxy = named[pi].first == "proxies";
                auto w = param.data();
                auto g = param.grad();
                auto v = state.momenta[pi].data();
                double wd = is_proxy ? 0.0 : cfg.weight_decay;
                for (size_t j = 0; j < w.size(); ++j) {
                    double grad = g[j] + wd * w[j];
                    v[j] = cfg.momentum * v[j] + grad;
                    w[j] -= lr * v[j];
                }
                param.zero_grad();
            }
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.loss = batches > 0 ? loss_sum / batches : 0.0;
        m.lr = lr;
        m.k = plan.k;
        CropPlan ep = eval_plan(cfg);
        m.train_acc = evaluate(state.params, ds.train, ep).accuracy;
        m.test_acc = evaluate(state.params, ds.test, ep).accuracy;
        m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
        state.epoch = epoch + 1;
        if (!checkpoint_dir.empty()) checkpoint_save(state, checkpoint_dir / "checkpoint.json");
        result.metrics.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    result.state = std::move(state);
    return result;
}

void checkpoint_save(const TrainState& state, const std::filesystem::path& file) {
    json doc;
    doc["format_version"] = kCheckpointVersion;
    doc["config"] = cfg_to_json(state.cfg);
    doc["epoch"] = state.epoch;
    doc["classes"] = state.params.cfg.classes;
    json tensors = json::object();
    auto named = state.params.named_params();
    for (size_t i = 0; i < named.size(); ++i) {
        json entry;
        entry["shape"] = named[i].second.shape();
        entry["data"] = std::vector<double>(named[i].second.data().begin(),
                                            named[i].second.data().end());
        entry["momentum"] = std::vector<double>(state.momenta[i].data().begin(),
                                                state.momenta[i].data().end());
        tensors[named[i].first] = std::move(entry);
    }
    doc["params"] = std::move(tensors);
    std::filesystem::create_directories(file.parent_path().empty() ? "." : file.parent_path());
    std::ofstream f(file, std::ios::trunc);
    if (!f) fail(ErrKind::io, "checkpoint_save: cannot write " + file.string());
    f << doc.dump() << "\n";
}

TrainState checkpoint_load(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) fail(ErrKind::io, "checkpoint_load: missing " + file.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        fail(ErrKind::io, std::string("checkpoint_load: unparseable checkpoint: ") + e.what());
    }
    if (!doc.contains("format_version") ||
        doc.at("format_version").get<int>() != kCheckpointVersion)
        fail(ErrKind::format_version, "checkpoint_load: unsupported checkpoint version");

    TrainState st;
    st.cfg = cfg_from_json(doc.at("config"));
    st.epoch = doc.at("epoch").get<int>();

    ModelConfig mc;
    mc.d = st.cfg.d;
    mc.classes = doc.at("classes").get<int>();
    mc.ast_layers = st.cfg.ast_layers;
    mc.use_positional = st.cfg.use_positional;
    mc.encoder_input = st.cfg.encoder_input;
    mc.variant = st.cfg.variant;
    mc.init_seed = st.cfg.seed;
    st.params = init_model(mc);

    const json& tensors = doc.at("params");
    for (auto& [name, t] : st.params.named_params()) {
        if (!tensors.contains(name))
            fail(ErrKind::config_mismatch, "checkpoint_load: missing parameter " + name);
        const json& entry = tensors.at(name);
        Shape shape = entry.at("shape").get<Shape>();
        if (shape != t.shape())
            fail(ErrKind::config_mismatch,
                 "checkpoint_load: shape mismatch for parameter " + name +
                     " (configured dimensions do not match the checkpoint)");
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        std::vector<double> mom = entry.at("momentum").get<std::vector<double>>();
        if (data.size() != t.data().size() || mom.size() != t.data().size())
            fail(ErrKind::config_mismatch, "checkpoint_load: bad payload for parameter " + name);
        Tensor handle = t;
        std::copy(data.begin(), data.end(), handle.data().begin());
        Tensor m = Tensor::zeros(t.shape());
        std::copy(mom.begin(), mom.end(), m.data().begin());
        st.momenta.push_back(std::move(m));
    }
    return st;
}

}  // namespace relprox
