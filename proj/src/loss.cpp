#include "relprox/loss.hpp"

#include <cmath>
#include <string>

namespace relprox {

void validate(const LossConfig& cfg) {
    if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha))
        fail(ErrKind::config_bad_value, "loss: alpha must be finite and positive");
    if (cfg.delta < 0.0 || cfg.delta >= 1.0)
        fail(ErrKind::config_bad_value, "loss: delta must be in [0, 1)");
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
    return dot(l2_normalize(u), l2_normalize(v));
}

Tensor rproxy_loss_from_omegas(const std::vector<Omega>& omegas, const Tensor& proxies,
                               const LossConfig& cfg) {
    validate(cfg);
    if (omegas.empty()) fail(ErrKind::invalid_argument, "rproxy_loss: empty batch");
    int c = proxies.dim(0);
    Tensor one = Tensor::scalar(1.0);
    Tensor loss;
    for (int p = 0; p < c; ++p) {
        Tensor proxy = row(proxies, p);
        Tensor psi_pos = one;
        Tensor psi_neg = one;
        for (size_t i = 0; i < omegas.size(); ++i) {
            Tensor s = cosine_sim(omegas[i].rep, proxy);
            if (!std::isfinite(s.item()))
                fail(ErrKind::non_finite,
                     "rproxy_loss: NaN similarity for batch entry " + std::to_string(i));
            if (omegas[i].true_proxy == p) {
                // e^{-alpha (s - delta)}
                Tensor term = exp(scale(sub(s, Tensor::scalar(cfg.delta)), -cfg.alpha));
                psi_pos = add(psi_pos, term);
            } else {
                // e^{alpha (s + delta)}
                Tensor term = exp(scale(add(s, Tensor::scalar(cfg.delta)), cfg.alpha));
                psi_neg = add(psi_neg, term);
            }
        }
        Tensor contrib = add(log(psi_pos), log(psi_neg));
        loss = loss.defined() ? add(loss, contrib) : contrib;
    }
    return scale(loss, 1.0 / c);
}

Tensor rproxy_loss(const BatchReps& batch, const LossConfig& cfg, const OmegaMask& mask) {
    if (batch.entries.empty()) fail(ErrKind::invalid_argument, "rproxy_loss: empty batch");
    int c = batch.proxies.dim(0);
    std::vector<Omega> omegas;
    omegas.reserve(batch.entries.size() * 3);
    for (size_t i = 0; i < batch.entries.size(); ++i) {
        const BatchEntry& e = batch.entries[i];
        if (e.label < 0 || e.label >= c)
            fail(ErrKind::invalid_argument, "rproxy_loss: label out of range");
        auto check_finite = [&](const Tensor& t) {
            for (double v : t.data())
                if (!std::isfinite(v))
                    fail(ErrKind::non_finite,
                         "rproxy_loss: non-finite representation for instance " +
                             std::to_string(i));
        };
        if (mask.use_zg) {
            check_finite(e.reps.z_g);
            omegas.push_back({e.reps.z_g, e.label});
        }
        if (mask.use_zl) {
            check_finite(e.reps.z_l);
            omegas.push_back({e.reps.z_l, e.label});
        }
        if (mask.use_r) {
            check_finite(e.reps.r);
            omegas.push_back({e.reps.r, e.label});
        }
    }
    return rproxy_loss_from_omegas(omegas, batch.proxies, cfg);
}

std::vector<double> inference_scores(const RepTriple& reps, const Tensor& proxies,
                                     const OmegaMask& mask) {
    NoGrad guard;
    int c = proxies.dim(0);
    std::vector<const Tensor*> active;
    if (mask.use_zg) active.push_back(&reps.z_g);
    if (mask.use_zl) active.push_back(&reps.z_l);
    if (mask.use_r) active.push_back(&reps.r);
    std::vector<double> scores(static_cast<size_t>(c), 0.0);
    for (const Tensor* omega : active) {
        std::vector<double> sims(static_cast<size_t>(c));
        for (int p = 0; p < c; ++p) sims[static_cast<size_t>(p)] = cosine_sim(*omega, row(proxies, p)).item();
        double mx = sims[0];
        for (double s : sims) mx = std::max(mx, s);
        double z = 0.0;
        for (double s : sims) z += std::exp(s - mx);
        for (int p = 0; p < c; ++p)
            scores[static_cast<size_t>(p)] += std::exp(sims[static_cast<size_t>(p)] - mx) / z;
    }
    return scores;
}

int predict_class(const RepTriple& reps, const Tensor& proxies, const OmegaMask& mask) {
    std::vector<double> scores = inference_scores(reps, proxies, mask);
    int best = 0;
    for (size_t p = 1; p < scores.size(); ++p)
        if (scores[p] > scores[static_cast<size_t>(best)]) best = static_cast<int>(p);
    return best;
}

Tensor ce_head_loss(const BatchReps& batch, const Tensor& head_w, const Tensor& head_b) {
    if (batch.entries.empty()) fail(ErrKind::invalid_argument, "ce_head_loss: empty batch");
    Tensor loss;
    for (const BatchEntry& e : batch.entries) {
        Tensor logits = add(matmul(e.reps.z_g, head_w), head_b);
        Tensor probs = softmax(logits);
        Tensor onehot = Tensor::zeros({probs.numel()});
        onehot.data()[static_cast<size_t>(e.label)] = 1.0;
        Tensor term = scale(dot(log(probs), onehot), -1.0);
        loss = loss.defined() ? add(loss, term) : term;
    }
    return scale(loss, 1.0 / static_cast<double>(batch.entries.size()));
}

namespace {

Tensor vec_distance(const Tensor& a, const Tensor& b) {
    Tensor diff = sub(a, b);
    // small epsilon keeps sqrt differentiable at zero distance
    return sqrt(add(dot(diff, diff), Tensor::scalar(1e-12)));
}

Tensor huber(const Tensor& x, double threshold) {
    // Huber applied to a scalar residual x (|x| <= threshold quadratic,
    // beyond it linear). Implemented with relu splits so it stays on-tape.
    Tensor absx = sqrt(add(mul(x, x), Tensor::scalar(1e-12)));
    Tensor clipped = sub(absx, relu(sub(absx, Tensor::scalar(threshold))));
    // 0.5*clipped^2 + threshold*(absx - clipped)
    return add(scale(mul(clipped, clipped), 0.5), scale(sub(absx, clipped), threshold));
}

}  // namespace

Tensor huber_relation_term(const BatchReps& batch, double threshold) {
    // Distances |z_g - z_L| should agree between instances of one class.
    Tensor total;
    int pairs = 0;
    for (size_t i = 0; i < batch.entries.size(); ++i)
        for (size_t j = i + 1; j < batch.entries.size(); ++j) {
            if (batch.entries[i].label != batch.entries[j].label) continue;
            Tensor di = vec_distance(batch.entries[i].reps.z_g, batch.entries[i].reps.z_l);
            Tensor dj = vec_distance(batch.entries[j].reps.z_g, batch.entries[j].reps.z_l);
            Tensor term = huber(sub(di, dj), threshold);
            total = total.defined() ? add(total, term) : term;
            ++pairs;
        }
    if (pairs == 0) return Tensor::scalar(0.0);
    return scale(total, 1.0 / pairs);
}

Tensor pairwise_contrastive_term(const BatchReps& batch, double margin) {
    Tensor total;
    int pairs = 0;
    for (size_t i = 0; i < batch.entries.size(); ++i)
        for (size_t j = i + 1; j < batch.entries.size(); ++j) {
            Tensor d = vec_distance(batch.entries[i].reps.r, batch.entries[j].reps.r);
            Tensor term;
            if (batch.entries[i].label == batch.entries[j].label) {
                term = mul(d, d);
            } else {
                Tensor hinge = relu(sub(Tensor::scalar(margin), d));
                term = mul(hinge, hinge);
            }
            total = total.defined() ? add(total, term) : term;
            ++pairs;
        }
    if (pairs == 0) return Tensor::scalar(0.0);
    return scale(total, 1.0 / pairs);
}

Tensor ablation_loss(Variant variant, const BatchReps& batch, const Tensor& head_w,
                     const Tensor& head_b) {
    switch (variant) {
        case Variant::ce_head:
            return ce_head_loss(batch, head_w, head_b);
        case Variant::huber_relation:
            return add(ce_head_loss(batch, head_w, head_b), huber_relation_term(batch));
        case Variant::pairwise_contrastive:
            return add(ce_head_loss(batch, head_w, head_b), pairwise_contrastive_term(batch));
        default:
            fail(ErrKind::invalid_argument,
                 "ablation_loss: variant " + variant_name(variant) + " is proxy-based");
    }
}

}  // namespace relprox
