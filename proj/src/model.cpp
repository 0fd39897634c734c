#include "relprox/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "relprox/rng.hpp"

namespace relprox {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

Tensor randn(Shape shape, double std_dev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.data()) v = std_dev * rng.normal();
    return t;
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor grid_tensor(const Grid& g) {
    Tensor t = Tensor::zeros({1, g.h, g.w});
    std::copy(g.v.begin(), g.v.end(), t.data().begin());
    return t;
}

// Conv stack shared by encode (on resized views) and activation_map (at
// native resolution); returns the pre-pool activation.
Tensor conv_stack(const EncoderParams& enc, const Tensor& input) {
    Tensor h1 = relu(conv2d(input, enc.conv1_w, enc.conv1_b, 2));
    return relu(conv2d(h1, enc.conv2_w, enc.conv2_b, 2));
}

Tensor sinusoidal_positions(int n_locals, int d) {
    // Row 0 (the summary seed) gets no positional term.
    Tensor pos = Tensor::zeros({n_locals + 1, d});
    auto data = pos.data();
    for (int i = 1; i <= n_locals; ++i)
        for (int j = 0; j < d; ++j) {
            double rate = std::pow(10000.0, -2.0 * (j / 2) / d);
            double x = i * rate;
            data[static_cast<size_t>(i) * d + j] = (j % 2 == 0) ? std::sin(x) : std::cos(x);
        }
    return pos;
}

}  // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::ce_head: return "ce_head";
        case Variant::huber_relation: return "huber_relation";
        case Variant::pairwise_contrastive: return "pairwise_contrastive";
        case Variant::linear_rho: return "linear_rho";
        case Variant::meanpool_ast: return "meanpool_ast";
        case Variant::drop_zl: return "drop_zl";
        case Variant::drop_zg: return "drop_zg";
        case Variant::drop_r: return "drop_r";
    }
    return "full";
}

Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::full, Variant::ce_head, Variant::huber_relation,
                      Variant::pairwise_contrastive, Variant::linear_rho, Variant::meanpool_ast,
                      Variant::drop_zl, Variant::drop_zg, Variant::drop_r})
        if (variant_name(v) == s) return v;
    fail(ErrKind::config_bad_value, "unknown variant '" + s + "'");
}

OmegaMask omega_mask_for(Variant v) {
    OmegaMask m;
    if (v == Variant::drop_zl) m.use_zl = false;
    if (v == Variant::drop_zg) m.use_zg = false;
    if (v == Variant::drop_r) m.use_r = false;
    return m;
}

bool variant_uses_proxies(Variant v) {
    return v != Variant::ce_head && v != Variant::huber_relation &&
           v != Variant::pairwise_contrastive;
}

bool variant_uses_head(Variant v) { return !variant_uses_proxies(v); }

std::vector<std::pair<std::string, Tensor>> ModelParams::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"enc.conv1_w", enc.conv1_w}, {"enc.conv1_b", enc.conv1_b},
        {"enc.conv2_w", enc.conv2_w}, {"enc.conv2_b", enc.conv2_b},
        {"enc.fc_w", enc.fc_w},       {"enc.fc_b", enc.fc_b},
    };
    for (size_t i = 0; i < ast.layers.size(); ++i) {
        std::string p = "ast.layer" + std::to_string(i) + ".";
        const AstLayerParams& l = ast.layers[i];
        out.emplace_back(p + "wq", l.wq);
        out.emplace_back(p + "w", l.w);
        out.emplace_back(p + "ff1_w", l.ff1_w);
        out.emplace_back(p + "ff1_b", l.ff1_b);
        out.emplace_back(p + "ff2_w", l.ff2_w);
        out.emplace_back(p + "ff2_b", l.ff2_b);
    }
    out.emplace_back("ast.summary_seed", ast.summary_seed);
    out.emplace_back("rho.w1", rho.w1);
    out.emplace_back("rho.b1", rho.b1);
    out.emplace_back("rho.w2", rho.w2);
    out.emplace_back("rho.b2", rho.b2);
    out.emplace_back("proxies", proxies);
    if (head_w.defined()) {
        out.emplace_back("head_w", head_w);
        out.emplace_back("head_b", head_b);
    }
    if (rho_lin_w.defined()) {
        out.emplace_back("rho_lin_w", rho_lin_w);
        out.emplace_back("rho_lin_b", rho_lin_b);
    }
    return out;
}

ModelParams init_model(const ModelConfig& cfg) {
    if (cfg.d < 1 || cfg.classes < 1 || cfg.ast_layers < 1)
        fail(ErrKind::invalid_argument, "init_model: bad config");
    ModelParams p;
    p.cfg = cfg;
    int d = cfg.d;
    Rng rng = Rng::substream(cfg.init_seed, 0xA11CE);

    p.enc.conv1_w = randn({8, 1, 3, 3}, std::sqrt(2.0 / 9.0), rng);
    p.enc.conv1_b = zeros_param({8});
    p.enc.conv2_w = randn({16, 8, 3, 3}, std::sqrt(2.0 / 72.0), rng);
    p.enc.conv2_b = zeros_param({16});
    p.enc.fc_w = randn({d, 16}, std::sqrt(2.0 / 16.0), rng);
    p.enc.fc_b = zeros_param({d});

    for (int i = 0; i < cfg.ast_layers; ++i) {
        AstLayerParams l;
        l.wq = randn({d, d}, std::sqrt(1.0 / d), rng);
        l.w = randn({d, d}, std::sqrt(1.0 / d), rng);
        l.ff1_w = randn({d, 2 * d}, std::sqrt(2.0 / d), rng);
        l.ff1_b = zeros_param({2 * d});
        l.ff2_w = randn({2 * d, d}, std::sqrt(2.0 / (2 * d)), rng);
        l.ff2_b = zeros_param({d});
        p.ast.layers.push_back(std::move(l));
    }
    p.ast.summary_seed = randn({d}, std::sqrt(1.0 / d), rng);

    p.rho.w1 = randn({2 * d, 2 * d}, std::sqrt(2.0 / (2 * d)), rng);
    p.rho.b1 = zeros_param({2 * d});
    p.rho.w2 = randn({2 * d, d}, std::sqrt(2.0 / (2 * d)), rng);
    p.rho.b2 = zeros_param({d});

    // Proxy rows: seeded standard normal, then L2-normalized.
    p.proxies = Tensor::zeros({cfg.classes, d}, true);
    {
        auto data = p.proxies.data();
        for (int c = 0; c < cfg.classes; ++c) {
            double norm_sq = 0.0;
            for (int j = 0; j < d; ++j) {
                double v = rng.normal();
                data[static_cast<size_t>(c) * d + j] = v;
                norm_sq += v * v;
            }
            double inv = 1.0 / std::sqrt(norm_sq);
            for (int j = 0; j < d; ++j) data[static_cast<size_t>(c) * d + j] *= inv;
        }
    }

    if (variant_uses_head(cfg.variant)) {
        p.head_w = randn({d, cfg.classes}, std::sqrt(1.0 / d), rng);
        p.head_b = zeros_param({cfg.classes});
    }
    if (cfg.variant == Variant::linear_rho) {
        p.rho_lin_w = randn({2 * d, d}, std::sqrt(1.0 / (2 * d)), rng);
        p.rho_lin_b = zeros_param({d});
    }
    return p;
}

Tensor encode(const ModelConfig& cfg, const EncoderParams& enc, const View& v) {
    if (v.pixels.h < 2 || v.pixels.w < 2)
        fail(ErrKind::invalid_argument, "encode: view smaller than 2x2");
    Grid resized = bilinear_resize(v.pixels, cfg.encoder_input, cfg.encoder_input);
    Tensor act = conv_stack(enc, grid_tensor(resized));
    int ch = act.dim(0), spatial = act.dim(1) * act.dim(2);
    Tensor pooled = mean(reshape(act, {ch, spatial}), 1);
    return add(matmul(enc.fc_w, pooled), enc.fc_b);
}

Grid activation_map(const ModelConfig& cfg, const EncoderParams& enc, const Grid& image) {
    (void)cfg;
    NoGrad guard;
    Tensor act = conv_stack(enc, grid_tensor(image));
    int ch = act.dim(0), h = act.dim(1), w = act.dim(2);
    Tensor m = mean(reshape(act, {ch, h * w}), 0);
    Grid out;
    out.h = h;
    out.w = w;
    out.v.assign(m.data().begin(), m.data().end());
    return out;
}

Tensor ast_summarize(const ModelConfig& cfg, const AstParams& ast,
                     const std::vector<Tensor>& locals, Tensor* last_attention) {
    if (locals.empty()) fail(ErrKind::invalid_argument, "ast_summarize: empty input");
    for (const Tensor& z : locals)
        if (z.ndim() != 1 || z.numel() != cfg.d)
            fail(ErrKind::shape_mismatch, "ast_summarize: local embedding dimension mismatch");
    std::vector<Tensor> rows;
    rows.reserve(locals.size() + 1);
    rows.push_back(ast.summary_seed);
    for (const Tensor& z : locals) rows.push_back(z);
    Tensor x = stack_rows(rows);
    if (cfg.use_positional)
        x = add(x, sinusoidal_positions(static_cast<int>(locals.size()), cfg.d));

    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    for (size_t li = 0; li < ast.layers.size(); ++li) {
        const AstLayerParams& l = ast.layers[li];
        Tensor q = matmul(x, l.wq);
        Tensor kv = matmul(x, l.w);
        Tensor attn = softmax(scale(matmul(q, transpose(kv)), inv_sqrt_d));
        if (last_attention && li + 1 == ast.layers.size()) *last_attention = attn.detach();
        x = add(x, matmul(attn, kv));
        Tensor h = relu(add(matmul(x, l.ff1_w), l.ff1_b));
        x = add(x, add(matmul(h, l.ff2_w), l.ff2_b));
    }
    return row(x, 0);
}

Tensor unify(const RhoParams& rho, const Tensor& z_g, const Tensor& z_l) {
    if (z_g.ndim() != 1 || z_l.ndim() != 1 || z_g.numel() != z_l.numel())
        fail(ErrKind::shape_mismatch, "unify: input dimension mismatch");
    Tensor x = concat(z_g, z_l);
    Tensor h = relu(add(matmul(x, rho.w1), rho.b1));
    return add(matmul(h, rho.w2), rho.b2);
}

RepTriple encode_views(const ModelParams& params, const View& global,
                       const std::vector<View>& locals, Tensor* last_attention) {
    const ModelConfig& cfg = params.cfg;
    RepTriple reps;
    reps.z_g = encode(cfg, params.enc, global);
    if (cfg.variant == Variant::ce_head) return reps;  // baseline touches z_g only

    std::vector<Tensor> zl;
    zl.reserve(locals.size());
    for (const View& v : locals) zl.push_back(encode(cfg, params.enc, v));

    if (cfg.variant == Variant::meanpool_ast)
        reps.z_l = mean(stack_rows(zl), 0);
    else
        reps.z_l = ast_summarize(cfg, params.ast, zl, last_attention);

    if (cfg.variant == Variant::huber_relation) return reps;  // no learned r

    if (cfg.variant == Variant::linear_rho)
        reps.r = add(matmul(concat(reps.z_g, reps.z_l), params.rho_lin_w), params.rho_lin_b);
    else
        reps.r = unify(params.rho, reps.z_g, reps.z_l);
    return reps;
}

ForwardResult forward(const ModelParams& params, const Grid& image, const CropPlan& plan,
                      const ActivationSource& activation_source) {
    Grid map = activation_source ? activation_source(image)
                                 : activation_map(params.cfg, params.enc, image);
    ForwardResult out;
    out.bbox = locate_global(map, image.h, image.w);
    View g = crop_global(image, out.bbox);
    if (params.cfg.variant != Variant::ce_head) out.locals = crop_locals(g, plan);
    out.reps = encode_views(params, g, out.locals, &out.last_attention);
    return out;
}

void save_model(const ModelParams& params, const std::filesystem::path& file) {
    json doc;
    doc["format_version"] = kCheckpointVersion;
    doc["config"] = {{"d", params.cfg.d},
                     {"classes", params.cfg.classes},
                     {"ast_layers", params.cfg.ast_layers},
                     {"use_positional", params.cfg.use_positional},
                     {"encoder_input", params.cfg.encoder_input},
                     {"variant", variant_name(params.cfg.variant)},
                     {"init_seed", params.cfg.init_seed}};
    json tensors = json::object();
    for (const auto& [name, t] : params.named_params()) {
        json entry;
        entry["shape"] = t.shape();
        entry["data"] = std::vector<double>(t.data().begin(), t.data().end());
        tensors[name] = std::move(entry);
    }
    doc["params"] = std::move(tensors);
    std::ofstream f(file, std::ios::trunc);
    if (!f) fail(ErrKind::io, "save_model: cannot write " + file.string());
    f << doc.dump() << "\n";
}

ModelParams load_model(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) fail(ErrKind::io, "load_model: missing " + file.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        fail(ErrKind::io, std::string("load_model: unparseable checkpoint: ") + e.what());
    }
    if (!doc.contains("format_version") || doc.at("format_version").get<int>() != kCheckpointVersion)
        fail(ErrKind::format_version, "load_model: unsupported checkpoint version");
    const json& c = doc.at("config");
    ModelConfig cfg;
    cfg.d = c.at("d").get<int>();
    cfg.classes = c.at("classes").get<int>();
    cfg.ast_layers = c.at("ast_layers").get<int>();
    cfg.use_positional = c.at("use_positional").get<bool>();
    cfg.encoder_input = c.at("encoder_input").get<int>();
    cfg.variant = variant_from_name(c.at("variant").get<std::string>());
    cfg.init_seed = c.at("init_seed").get<uint64_t>();

    ModelParams params = init_model(cfg);
    const json& tensors = doc.at("params");
    for (auto& [name, t] : params.named_params()) {
        if (!tensors.contains(name))
            fail(ErrKind::config_mismatch, "load_model: checkpoint missing parameter " + name);
        const json& entry = tensors.at(name);
        Shape shape = entry.at("shape").get<Shape>();
        if (shape != t.shape())
            fail(ErrKind::config_mismatch,
                 "load_model: shape mismatch for parameter " + name);
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        if (data.size() != t.data().size())
            fail(ErrKind::config_mismatch, "load_model: bad data length for parameter " + name);
        Tensor handle = t;
        std::copy(data.begin(), data.end(), handle.data().begin());
    }
    return params;
}

}  // namespace relprox
