#pragma once

#include <vector>

#include "relprox/model.hpp"
#include "relprox/tensor.hpp"

namespace relprox {

struct LossConfig {
    double alpha = 32.0;  // scaling
    double delta = 0.1;   // margin
};

void validate(const LossConfig& cfg);

struct BatchEntry {
    RepTriple reps;
    int label = 0;
};

struct BatchReps {
    std::vector<BatchEntry> entries;
    Tensor proxies;  // c x d
};

// Cosine similarity of two nonzero vectors (differentiable).
Tensor cosine_sim(const Tensor& u, const Tensor& v);

// One conditioning representation with the index of its true class proxy.
// true_proxy may be out of range to mark an all-negative representation
// (used by degenerate unit fixtures).
struct Omega {
    Tensor rep;
    int true_proxy = 0;
};

// loss = (1/c) * sum_p [log psi+(p) + log psi-(p)],
//   psi+(p) = 1 + sum_{omega in Omega(p)}  e^{-alpha (s(omega,p) - delta)}
//   psi-(p) = 1 + sum_{omega not in Omega(p)} e^{ alpha (s(omega,p) + delta)}
Tensor rproxy_loss_from_omegas(const std::vector<Omega>& omegas, const Tensor& proxies,
                               const LossConfig& cfg);

// Batch form: each instance contributes its masked members of
// {z_g, z_l, r}.
Tensor rproxy_loss(const BatchReps& batch, const LossConfig& cfg,
                   const OmegaMask& mask = OmegaMask{});

// Soft assignment scores: y_hat[p] = sum_omega softmax_p'(s(omega, p'))[p].
// Sums to the number of active omegas (3 with the full mask).
std::vector<double> inference_scores(const RepTriple& reps, const Tensor& proxies,
                                     const OmegaMask& mask = OmegaMask{});

int predict_class(const RepTriple& reps, const Tensor& proxies, const OmegaMask& mask = OmegaMask{});

// Ablation objectives of the baseline variants. Pairs lacking a same-class
// partner contribute zero to the relational terms.
Tensor ce_head_loss(const BatchReps& batch, const Tensor& head_w, const Tensor& head_b);
Tensor huber_relation_term(const BatchReps& batch, double threshold = 1.0);
Tensor pairwise_contrastive_term(const BatchReps& batch, double margin = 0.5);

Tensor ablation_loss(Variant variant, const BatchReps& batch, const Tensor& head_w,
                     const Tensor& head_b);

}  // namespace relprox
