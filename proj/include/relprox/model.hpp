#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relprox/dataops.hpp"
#include "relprox/tensor.hpp"
#include "relprox/views.hpp"

namespace relprox {

enum class Variant {
    full,
    ce_head,               // linear classification head over z_g
    huber_relation,        // ce_head + Huber on same-class relational distances
    pairwise_contrastive,  // ce_head + margin contrastive loss on r
    linear_rho,            // rho replaced by a single linear map
    meanpool_ast,          // AST replaced by mean pooling
    drop_zl,               // conditioning ablations: omega set without one member
    drop_zg,
    drop_r,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

// Which representations condition the proxies (and vote at inference).
struct OmegaMask {
    bool use_zg = true;
    bool use_zl = true;
    bool use_r = true;
};

OmegaMask omega_mask_for(Variant v);
bool variant_uses_proxies(Variant v);
bool variant_uses_head(Variant v);

struct ModelConfig {
    int d = 64;
    int classes = 8;
    int ast_layers = 2;
    bool use_positional = false;
    int encoder_input = 16;
    Variant variant = Variant::full;
    uint64_t init_seed = 1;
};

struct EncoderParams {
    Tensor conv1_w, conv1_b;  // 8x1x3x3, stride 2
    Tensor conv2_w, conv2_b;  // 16x8x3x3, stride 2
    Tensor fc_w, fc_b;        // d x 16, d
};

struct AstLayerParams {
    Tensor wq;             // d x d query projection
    Tensor w;              // d x d shared key/value projection
    Tensor ff1_w, ff1_b;   // d x 2d, 2d
    Tensor ff2_w, ff2_b;   // 2d x d, d
};

struct AstParams {
    std::vector<AstLayerParams> layers;
    Tensor summary_seed;  // learnable d-vector, column 0 of the view matrix
};

struct RhoParams {
    Tensor w1, b1;  // 2d x 2d, 2d
    Tensor w2, b2;  // 2d x d, d
};

struct ModelParams {
    ModelConfig cfg;
    EncoderParams enc;
    AstParams ast;
    RhoParams rho;
    Tensor proxies;               // c x d
    Tensor head_w, head_b;        // d x c, c (ce-based variants)
    Tensor rho_lin_w, rho_lin_b;  // 2d x d, d (linear_rho)

    // Stable, documented parameter list used by the optimizer and the
    // checkpoint format.
    std::vector<std::pair<std::string, Tensor>> named_params() const;
};

ModelParams init_model(const ModelConfig& cfg);

// Per-instance representations. Undefined members are variant-dependent
// (ce_head computes only z_g).
struct RepTriple {
    Tensor z_g;
    Tensor z_l;  // AST summary of the local views
    Tensor r;
};

struct ForwardResult {
    RepTriple reps;
    BBox bbox;
    std::vector<View> locals;
    Tensor last_attention;  // (k+1)x(k+1) of the final AST layer, detached
};

// Relation-agnostic encoding of one view: bilinear resize to the encoder
// input side, two stride-2 conv+relu stages, spatial mean pool, linear map.
Tensor encode(const ModelConfig& cfg, const EncoderParams& enc, const View& v);

// Channel-mean activation map of the conv stack applied at native image
// resolution (never resized): the localization signal. Runs untaped.
Grid activation_map(const ModelConfig& cfg, const EncoderParams& enc, const Grid& image);

Tensor ast_summarize(const ModelConfig& cfg, const AstParams& ast,
                     const std::vector<Tensor>& locals, Tensor* last_attention = nullptr);

Tensor unify(const RhoParams& rho, const Tensor& z_g, const Tensor& z_l);

using ActivationSource = std::function<Grid(const Grid& image)>;

ForwardResult forward(const ModelParams& params, const Grid& image, const CropPlan& plan,
                      const ActivationSource& activation_source = {});

// Re-encodes a frozen view set (crop geometry held fixed); used by gradient
// checks and anywhere the non-differentiable localization must not move.
RepTriple encode_views(const ModelParams& params, const View& global,
                       const std::vector<View>& locals, Tensor* last_attention = nullptr);

void save_model(const ModelParams& params, const std::filesystem::path& file);
ModelParams load_model(const std::filesystem::path& file);

}  // namespace relprox
