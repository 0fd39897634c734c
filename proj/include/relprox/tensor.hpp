#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "relprox/common.hpp"

namespace relprox {

using Shape = std::vector<int>;

class Tape;

// Dense row-major tensor of 64-bit reals with handle semantics. Copies share
// the underlying buffer; training code mutates parameter tensors in place
// through the shared node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int numel() const;
    int dim(int axis) const;
    int ndim() const;

    std::span<double> data();
    std::span<const double> data() const;
    double item() const;  // scalar tensors only

    bool requires_grad() const;
    void set_requires_grad(bool value);

    // Gradient view; zeros if backward never reached this tensor.
    std::span<const double> grad() const;
    double grad_at(int flat_index) const;
    void zero_grad();

    // Value copy with no grad tracking and no producing tape.
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

  private:
    friend class Tape;
    friend struct OpAccess;

    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // lazily sized
        bool requires_grad = false;
        const Tape* producer = nullptr;
    };

    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

// Records primitive operations in execution order (a valid topological
// order); backward replays them reversed. A tape and the tensors it produced
// are confined to one thread.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Populates grads of every requires_grad tensor reachable from root.
    // root must be a scalar produced by this tape; a second backward without
    // new forward work is rejected as stale.
    void backward(const Tensor& root);

    size_t size() const { return ops_.size(); }

    // When set, every primitive checks its output for NaN/Inf and reports
    // the offending primitive. Used by grad_check.
    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

    static Tape* active();

  private:
    friend struct OpAccess;

    struct Op {
        const char* name;
        std::function<void()> backward;
    };

    void record(const char* name, std::function<void()> backward);

    std::vector<Op> ops_;
    bool backward_done_ = false;
    bool check_finite_ = false;
    Tape* previous_ = nullptr;
};

// Suspends tape recording for the current scope (evaluation passes, the
// localization forward, finite-difference probes).
class NoGrad {
  public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

  private:
    Tape* saved_;
};

// ---- primitives ----------------------------------------------------------
// Each op validates shapes, computes the forward value, and (when a tape is
// active and an input requires grad) records its backward rule.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or matrix + bias row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor concat(const Tensor& a, const Tensor& b);  // 1-D vectors
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor row(const Tensor& m, int index);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor softmax(const Tensor& a);           // over last axis
Tensor mean(const Tensor& a, int axis);
Tensor l2_normalize(const Tensor& a);      // 1-D
Tensor transpose(const Tensor& a);         // 2-D
Tensor reshape(const Tensor& a, Shape shape);
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride);

// Helpers built on the primitives.
Tensor dot(const Tensor& u, const Tensor& v);   // 1-D x 1-D -> scalar
Tensor sum_all(const Tensor& a);                // scalar

// Max over all parameter entries of |analytic - central difference| /
// max(1, |central difference|). scalar_fn must be deterministic; it is
// re-evaluated untaped for the finite-difference probes.
double grad_check(const std::function<Tensor()>& scalar_fn, const std::vector<Tensor>& params,
                  double h);

}  // namespace relprox
