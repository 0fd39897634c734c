#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "relprox/eval.hpp"
#include "relprox/train.hpp"

using namespace relprox;
namespace fs = std::filesystem;

namespace {

DatasetMeta micro_meta(DatasetMode mode = DatasetMode::fine) {
    DatasetMeta m;
    m.classes = 4;
    m.k = 4;
    m.mode = mode;
    m.seed = 17;
    m.train_per_class = 6;
    m.test_per_class = 3;
    return m;
}

TrainConfig micro_cfg() {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.k_max = 6;
    cfg.warmup_epochs = 1;
    cfg.d = 16;
    cfg.seed = 3;
    return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    auto na = a.named_params(), nb = b.named_params();
    if (na.size() != nb.size()) return false;
    for (size_t i = 0; i < na.size(); ++i) {
        if (na[i].first != nb[i].first) return false;
        auto da = na[i].second.data(), db = nb[i].second.data();
        if (da.size() != db.size()) return false;
        for (size_t j = 0; j < da.size(); ++j)
            if (da[j] != db[j]) return false;
    }
    return true;
}

bool metrics_equal_ignoring_wall(const std::vector<EpochMetrics>& a,
                                 const std::vector<EpochMetrics>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].loss != b[i].loss ||
            a[i].train_acc != b[i].train_acc || a[i].test_acc != b[i].test_acc ||
            a[i].lr != b[i].lr || a[i].k != b[i].k)
            return false;
    }
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("zero learning rate leaves every parameter untouched") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    cfg.lr = 0.0;
    TrainState before = init_train_state(cfg);
    TrainResult result = train(ds, cfg);
    // Rebuild the untrained model for comparison.
    ModelConfig mc = result.state.params.cfg;
    ModelParams fresh = init_model(mc);
    CHECK(params_equal(result.state.params, fresh));
    (void)before;
}

TEST_CASE("one SGD step equals the hand-computed update on a toy batch") {
    DatasetMeta meta = micro_meta();
    meta.classes = 2;
    meta.train_per_class = 2;
    meta.test_per_class = 1;
    Dataset ds = generate(meta);
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 1;
    cfg.batch_size = 4;  // single batch per epoch
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.lr = 0.01;

    // Replay the exact forward the trainer runs for epoch 0 and capture the
    // analytic gradient of the proxies at the initial parameters.
    ModelConfig mc;
    mc.d = cfg.d;
    mc.classes = meta.classes;
    mc.ast_layers = cfg.ast_layers;
    mc.variant = cfg.variant;
    mc.init_seed = cfg.seed;
    mc.encoder_input = cfg.encoder_input;
    ModelParams reference = init_model(mc);
    CropPlan plan = train_plan(cfg, 0);
    std::vector<int> order = {0, 1, 2, 3};
    // trainer shuffles; with a single batch the set (not order) feeds one loss
    std::vector<double> proxies_before(reference.proxies.data().begin(),
                                       reference.proxies.data().end());
    std::vector<double> grad;
    {
        Tape tape;
        BatchReps batch;
        batch.proxies = reference.proxies;
        for (int idx : order) {
            Grid img = instance_grid(ds.train[static_cast<size_t>(idx)]);
            ForwardResult fwd = forward(reference, img, plan);
            batch.entries.push_back({fwd.reps, ds.train[static_cast<size_t>(idx)].label});
        }
        Tensor loss = rproxy_loss(batch, cfg.loss);
        tape.backward(loss);
        auto g = reference.proxies.grad();
        grad.assign(g.begin(), g.end());
    }

    TrainResult result = train(ds, cfg);
    auto after = result.state.params.proxies.data();
    for (size_t i = 0; i < after.size(); ++i)
        CHECK(after[i] ==
              doctest::Approx(proxies_before[i] - cfg.lr * grad[i]).epsilon(1e-9));
}

TEST_CASE("identical config and seed give identical metrics") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    TrainResult a = train(ds, cfg);
    TrainResult b = train(ds, cfg);
    CHECK(metrics_equal_ignoring_wall(a.metrics, b.metrics));
    CHECK(params_equal(a.state.params, b.state.params));
    cfg.seed = 4;
    TrainResult c = train(ds, cfg);
    CHECK(!metrics_equal_ignoring_wall(a.metrics, c.metrics));
}

TEST_CASE("checkpoint save/load/continue matches an uninterrupted run") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 3;
    TrainResult full = train(ds, cfg);

    TrainConfig half = cfg;
    half.epochs = 2;
    TrainResult first = train(ds, half);
    fs::path file = fs::temp_directory_path() / "relprox_ckpt_test.json";
    first.state.cfg.epochs = 3;
    checkpoint_save(first.state, file);
    TrainState resumed = checkpoint_load(file);
    CHECK(resumed.epoch == 2);
    TrainResult rest = train(resumed, ds);
    REQUIRE(rest.metrics.size() == 1);
    CHECK(rest.metrics[0].loss == full.metrics[2].loss);
    CHECK(rest.metrics[0].test_acc == full.metrics[2].test_acc);
    CHECK(params_equal(rest.state.params, full.state.params));
    fs::remove(file);
}

TEST_CASE("checkpoint detects mismatched dimensions and mutated weights") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 1;
    TrainResult result = train(ds, cfg);
    fs::path file = fs::temp_directory_path() / "relprox_ckpt_mismatch.json";
    checkpoint_save(result.state, file);

    // Mismatched d: the stored shapes no longer fit the configured model.
    std::ifstream in(file);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    size_t pos = text.find("\"d\":16");
    REQUIRE(pos != std::string::npos);
    std::string bad = text;
    bad.replace(pos, 6, "\"d\":24");
    std::ofstream out(file, std::ios::trunc);
    out << bad;
    out.close();
    try {
        checkpoint_load(file);
        FAIL("expected config_mismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::config_mismatch);
    }

    // Mutate one weight: the value-exact comparator must notice.
    checkpoint_save(result.state, file);
    TrainState loaded = checkpoint_load(file);
    loaded.params.proxies.data()[0] += 1e-9;
    CHECK(!params_equal(loaded.params, result.state.params));
    fs::remove(file);
}

TEST_CASE("divergence aborts and keeps the last good checkpoint") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 1;
    fs::path dir = fs::temp_directory_path() / "relprox_diverge";
    fs::remove_all(dir);
    TrainResult ok = train(init_train_state(cfg), ds, {}, dir);
    CHECK(fs::exists(dir / "checkpoint.json"));

    TrainState resumed = checkpoint_load(dir / "checkpoint.json");
    resumed.cfg.epochs = 2;
    resumed.cfg.lr = 1e200;  // guaranteed overflow on the first update
    try {
        train(std::move(resumed), ds, {}, dir);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrKind::divergence);
    }
    TrainState kept = checkpoint_load(dir / "checkpoint.json");
    CHECK(kept.epoch == 1);  // epoch 0 state retained, diverged epoch never written
    CHECK(params_equal(kept.params, ok.state.params));
    fs::remove_all(dir);
}

TEST_CASE("true-class proxies receive gradient in every batch") {
    Dataset ds = generate(micro_meta());
    TrainConfig cfg = micro_cfg();
    ModelConfig mc;
    mc.d = cfg.d;
    mc.classes = ds.meta.classes;
    mc.init_seed = cfg.seed;
    ModelParams params = init_model(mc);
    CropPlan plan = train_plan(cfg, 0);
    Tape tape;
    BatchReps batch;
    batch.proxies = params.proxies;
    std::set<int> labels_seen;
    for (int i = 0; i < 8; ++i) {
        const Instance& inst = ds.train[static_cast<size_t>(i * 3 % ds.train.size())];
        Grid img = instance_grid(inst);
        ForwardResult fwd = forward(params, img, plan);
        batch.entries.push_back({fwd.reps, inst.label});
        labels_seen.insert(inst.label);
    }
    Tensor loss = rproxy_loss(batch, cfg.loss);
    tape.backward(loss);
    auto g = params.proxies.grad();
    int d = mc.d;
    for (int label : labels_seen) {
        double norm = 0.0;
        for (int j = 0; j < d; ++j)
            norm += g[static_cast<size_t>(label) * d + j] * g[static_cast<size_t>(label) * d + j];
        CHECK(norm > 0.0);
    }
}

TEST_CASE("weight decay is never applied to the proxies") {
    DatasetMeta meta = micro_meta();
    meta.train_per_class = 2;
    meta.test_per_class = 1;
    Dataset ds = generate(meta);
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 1;
    cfg.batch_size = ds.meta.classes * 2;  // one batch per epoch
    cfg.momentum = 0.0;

    TrainConfig decayed = cfg;
    decayed.weight_decay = 0.5;
    TrainConfig plain = cfg;
    plain.weight_decay = 0.0;
    TrainResult a = train(ds, decayed);
    TrainResult b = train(ds, plain);
    // One batch, identical initial params: proxy updates see the same
    // gradients, and only the decay term could make them differ.
    auto pa = a.state.params.proxies.data();
    auto pb = b.state.params.proxies.data();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    // Non-proxy parameters do feel the decay.
    auto wa = a.state.params.enc.fc_w.data();
    auto wb = b.state.params.enc.fc_w.data();
    bool differs = false;
    for (size_t i = 0; i < wa.size() && !differs; ++i) differs = wa[i] != wb[i];
    CHECK(differs);
}

TEST_CASE("loss trends downward over the first epochs") {
    DatasetMeta meta = micro_meta();
    meta.train_per_class = 8;
    Dataset ds = generate(meta);
    int improved = 0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        TrainConfig cfg = micro_cfg();
        cfg.epochs = 5;
        cfg.seed = seed;
        TrainResult r = train(ds, cfg);
        if (r.metrics.back().loss < r.metrics.front().loss) ++improved;
    }
    CHECK(improved >= 2);
}

TEST_CASE("metrics json line carries the documented fields") {
    EpochMetrics m;
    m.epoch = 3;
    m.loss = 1.5;
    m.train_acc = 0.5;
    m.test_acc = 0.25;
    m.lr = 0.001;
    m.k = 7;
    m.wall_ms = 12;
    std::string line = metrics_json_line(m);
    for (const char* key : {"epoch", "loss", "train_acc", "test_acc", "lr", "k", "wall_ms"})
        CHECK(line.find(key) != std::string::npos);
}

TEST_SUITE_END();
