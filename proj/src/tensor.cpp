#include "relprox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace relprox {

namespace {

thread_local Tape* g_active_tape = nullptr;

int product(const Shape& s) {
    int n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    fail(ErrKind::shape_mismatch,
         std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<Node>();
    for (int e : shape)
        if (e <= 0) fail(ErrKind::invalid_argument, "tensor extents must be positive");
    node->data.assign(static_cast<size_t>(product(shape)), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<int>(data.size()) != product(shape))
        fail(ErrKind::shape_mismatch, "from: data length does not match shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    t.node_->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::numel() const { return static_cast<int>(node_->data.size()); }
int Tensor::dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }

std::span<double> Tensor::data() { return node_->data; }
std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) fail(ErrKind::invalid_argument, "item: tensor is not a scalar");
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) {
        // Untouched by backward: report exact zeros.
        node_->grad.assign(node_->data.size(), 0.0);
    }
    return node_->grad;
}

double Tensor::grad_at(int flat_index) const { return grad()[static_cast<size_t>(flat_index)]; }

void Tensor::zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

Tensor Tensor::detach() const {
    auto node = std::make_shared<Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = false;
    return Tensor(std::move(node));
}

// ---- Tape -----------------------------------------------------------------

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* name, std::function<void()> backward) {
    ops_.push_back({name, std::move(backward)});
    backward_done_ = false;
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1)
        fail(ErrKind::non_scalar_root, "backward: root must be a scalar tensor");
    if (root.node_->producer != this)
        fail(ErrKind::stale_tape, "backward: root was not produced by the current tape");
    if (backward_done_)
        fail(ErrKind::stale_tape, "backward: tape already consumed; run a new forward first");
    root.node_->grad.assign(1, 1.0);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    backward_done_ = true;
}

NoGrad::NoGrad() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGrad::~NoGrad() { g_active_tape = saved_; }

// ---- op plumbing ----------------------------------------------------------

struct OpAccess {
    using NodePtr = std::shared_ptr<Tensor::Node>;
    static std::shared_ptr<Tensor::Node> node(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<Tensor::Node> n) { return Tensor(std::move(n)); }

    // Ensures a grad buffer exists before accumulation.
    static std::vector<double>& grad_buf(const std::shared_ptr<Tensor::Node>& n) {
        if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
        return n->grad;
    }

    static Tensor make_output(const char* op_name, Shape shape, std::vector<double> data,
                              bool any_input_grad) {
        auto node = std::make_shared<Tensor::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        Tape* tape = Tape::active();
        if (tape) {
            node->producer = tape;
            node->requires_grad = any_input_grad;
            if (tape->check_finite()) {
                for (double v : node->data)
                    if (!std::isfinite(v))
                        fail(ErrKind::non_finite,
                             std::string("non-finite value produced by primitive '") + op_name +
                                 "'");
            }
        }
        return Tensor(std::move(node));
    }

    static void record(const char* name, std::function<void()> fn) {
        Tape* tape = Tape::active();
        if (tape) tape->record(name, std::move(fn));
    }
};

namespace {

using Node = OpAccess::NodePtr;

bool track(const Tensor& t) { return Tape::active() != nullptr && t.requires_grad(); }

// Accumulate src into dst's grad buffer.
void axpy(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    // 2-D x 2-D, 2-D x 1-D (column), 1-D x 2-D (row).
    Shape as = a.shape(), bs = b.shape();
    int m, k, n;
    bool a_vec = (a.ndim() == 1), b_vec = (b.ndim() == 1);
    if (a.ndim() == 2 && b.ndim() == 2) {
        m = as[0]; k = as[1]; n = bs[1];
        if (bs[0] != k) shape_fail("matmul", as, bs);
    } else if (a.ndim() == 2 && b_vec) {
        m = as[0]; k = as[1]; n = 1;
        if (bs[0] != k) shape_fail("matmul", as, bs);
    } else if (a_vec && b.ndim() == 2) {
        m = 1; k = as[0]; n = bs[1];
        if (bs[0] != k) shape_fail("matmul", as, bs);
    } else {
        shape_fail("matmul", as, bs);
    }
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    const auto ad = a.data(), bd = b.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            double av = ad[static_cast<size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = bd.data() + static_cast<size_t>(p) * n;
            double* orow = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Shape out_shape;
    if (a_vec) out_shape = {n};
    else if (b_vec) out_shape = {m};
    else out_shape = {m, n};
    bool g = track(a) || track(b);
    Tensor out_t = OpAccess::make_output("matmul", out_shape, std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), bn = OpAccess::node(b), on = OpAccess::node(out_t);
        bool ga = a.requires_grad(), gb = b.requires_grad();
        OpAccess::record("matmul", [an, bn, on, m, k, n, ga, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            if (ga) {
                auto& gav = OpAccess::grad_buf(an);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = go.data() + static_cast<size_t>(i) * n;
                        const double* brow = bn->data.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        gav[static_cast<size_t>(i) * k + p] += s;
                    }
            }
            if (gb) {
                auto& gbv = OpAccess::grad_buf(bn);
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += an->data[static_cast<size_t>(i) * k + p] *
                                 go[static_cast<size_t>(i) * n + j];
                        gbv[static_cast<size_t>(p) * n + j] += s;
                    }
            }
        });
    }
    return out_t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Shape as = a.shape(), bs = b.shape();
    bool bias_row = (a.ndim() == 2 && b.ndim() == 1 && as[1] == bs[0]);
    if (!bias_row && as != bs) shape_fail("add", as, bs);
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    if (bias_row) {
        int rows = as[0], cols = as[1];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] += bd[j];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    }
    bool g = track(a) || track(b);
    Tensor out_t = OpAccess::make_output("add", as, std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), bn = OpAccess::node(b), on = OpAccess::node(out_t);
        bool ga = a.requires_grad(), gb = b.requires_grad();
        OpAccess::record("add", [an, bn, on, bias_row, ga, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            if (ga) axpy(OpAccess::grad_buf(an), go);
            if (gb) {
                auto& gbv = OpAccess::grad_buf(bn);
                if (bias_row) {
                    int cols = static_cast<int>(bn->data.size());
                    int rows = static_cast<int>(an->data.size()) / cols;
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j)
                            gbv[static_cast<size_t>(j)] += go[static_cast<size_t>(i) * cols + j];
                } else {
                    axpy(gbv, go);
                }
            }
        });
    }
    return out_t;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    bool g = track(a) || track(b);
    Tensor out_t = OpAccess::make_output("sub", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), bn = OpAccess::node(b), on = OpAccess::node(out_t);
        bool ga = a.requires_grad(), gb = b.requires_grad();
        OpAccess::record("sub", [an, bn, on, ga, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            if (ga) axpy(OpAccess::grad_buf(an), go);
            if (gb) {
                auto& gbv = OpAccess::grad_buf(bn);
                for (size_t i = 0; i < gbv.size(); ++i) gbv[i] -= go[i];
            }
        });
    }
    return out_t;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    bool g = track(a) || track(b);
    Tensor out_t = OpAccess::make_output("mul", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), bn = OpAccess::node(b), on = OpAccess::node(out_t);
        bool ga = a.requires_grad(), gb = b.requires_grad();
        OpAccess::record("mul", [an, bn, on, ga, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            if (ga) {
                auto& gav = OpAccess::grad_buf(an);
                for (size_t i = 0; i < gav.size(); ++i) gav[i] += go[i] * bn->data[i];
            }
            if (gb) {
                auto& gbv = OpAccess::grad_buf(bn);
                for (size_t i = 0; i < gbv.size(); ++i) gbv[i] += go[i] * an->data[i];
            }
        });
    }
    return out_t;
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= c;
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("scale", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("scale", [an, on, c] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (size_t i = 0; i < gav.size(); ++i) gav[i] += c * go[i];
        });
    }
    return out_t;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || b.ndim() != 1) shape_fail("concat", a.shape(), b.shape());
    std::vector<double> out;
    out.reserve(static_cast<size_t>(a.numel() + b.numel()));
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    bool g = track(a) || track(b);
    int na = a.numel();
    Tensor out_t = OpAccess::make_output("concat", {a.numel() + b.numel()}, std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), bn = OpAccess::node(b), on = OpAccess::node(out_t);
        bool ga = a.requires_grad(), gb = b.requires_grad();
        OpAccess::record("concat", [an, bn, on, na, ga, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            if (ga) {
                auto& gav = OpAccess::grad_buf(an);
                for (size_t i = 0; i < gav.size(); ++i) gav[i] += go[i];
            }
            if (gb) {
                auto& gbv = OpAccess::grad_buf(bn);
                for (size_t i = 0; i < gbv.size(); ++i) gbv[i] += go[static_cast<size_t>(na) + i];
            }
        });
    }
    return out_t;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) fail(ErrKind::invalid_argument, "stack_rows: empty input");
    int d = rows[0].numel();
    for (const Tensor& r : rows) {
        if (r.ndim() != 1 || r.numel() != d) shape_fail("stack_rows", rows[0].shape(), r.shape());
    }
    int n = static_cast<int>(rows.size());
    std::vector<double> out;
    out.reserve(static_cast<size_t>(n) * d);
    bool g = false;
    for (const Tensor& r : rows) {
        out.insert(out.end(), r.data().begin(), r.data().end());
        g = g || track(r);
    }
    Tensor out_t = OpAccess::make_output("stack_rows", {n, d}, std::move(out), g);
    if (g) {
        std::vector<Node> nodes;
        std::vector<bool> grads;
        nodes.reserve(rows.size());
        for (const Tensor& r : rows) {
            nodes.push_back(OpAccess::node(r));
            grads.push_back(r.requires_grad());
        }
        Node on = OpAccess::node(out_t);
        OpAccess::record("stack_rows", [nodes, grads, on, d] {
            const auto& go = on->grad;
            if (go.empty()) return;
            for (size_t i = 0; i < nodes.size(); ++i) {
                if (!grads[i]) continue;
                auto& gv = OpAccess::grad_buf(nodes[i]);
                for (int j = 0; j < d; ++j) gv[static_cast<size_t>(j)] += go[i * d + j];
            }
        });
    }
    return out_t;
}

Tensor row(const Tensor& m, int index) {
    if (m.ndim() != 2) fail(ErrKind::shape_mismatch, "row: input must be 2-D");
    int rows = m.dim(0), cols = m.dim(1);
    if (index < 0 || index >= rows) fail(ErrKind::invalid_argument, "row: index out of range");
    std::vector<double> out(m.data().begin() + static_cast<size_t>(index) * cols,
                            m.data().begin() + static_cast<size_t>(index + 1) * cols);
    bool g = track(m);
    Tensor out_t = OpAccess::make_output("row", {cols}, std::move(out), g);
    if (g) {
        Node mn = OpAccess::node(m), on = OpAccess::node(out_t);
        OpAccess::record("row", [mn, on, index, cols] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gv = OpAccess::grad_buf(mn);
            for (int j = 0; j < cols; ++j) gv[static_cast<size_t>(index) * cols + j] += go[j];
        });
    }
    return out_t;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("relu", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("relu", [an, on] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (size_t i = 0; i < gav.size(); ++i)
                if (an->data[i] > 0.0) gav[i] += go[i];
        });
    }
    return out_t;
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = std::exp(v);
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("exp", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("exp", [an, on] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (size_t i = 0; i < gav.size(); ++i) gav[i] += go[i] * on->data[i];
        });
    }
    return out_t;
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = std::log(v);
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("log", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("log", [an, on] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (size_t i = 0; i < gav.size(); ++i) gav[i] += go[i] / an->data[i];
        });
    }
    return out_t;
}

Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = std::sqrt(v);
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("sqrt", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("sqrt", [an, on] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (size_t i = 0; i < gav.size(); ++i) gav[i] += go[i] * 0.5 / on->data[i];
        });
    }
    return out_t;
}

Tensor softmax(const Tensor& a) {
    // Over the last axis, with max subtraction for stability.
    int cols = a.dim(a.ndim() - 1);
    int rows = a.numel() / cols;
    std::vector<double> out(a.data().begin(), a.data().end());
    for (int i = 0; i < rows; ++i) {
        double* p = out.data() + static_cast<size_t>(i) * cols;
        double mx = p[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (int j = 0; j < cols; ++j) p[j] /= sum;
    }
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("softmax", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("softmax", [an, on, rows, cols] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (int i = 0; i < rows; ++i) {
                const double* y = on->data.data() + static_cast<size_t>(i) * cols;
                const double* gy = go.data() + static_cast<size_t>(i) * cols;
                double dotv = 0.0;
                for (int j = 0; j < cols; ++j) dotv += y[j] * gy[j];
                double* gx = gav.data() + static_cast<size_t>(i) * cols;
                for (int j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dotv);
            }
        });
    }
    return out_t;
}

Tensor mean(const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.ndim()) fail(ErrKind::invalid_argument, "mean: bad axis");
    // Collapse to (outer, axis_extent, inner).
    int outer = 1, inner = 1, extent = a.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
    Shape out_shape;
    for (int i = 0; i < a.ndim(); ++i)
        if (i != axis) out_shape.push_back(a.dim(i));
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(static_cast<size_t>(outer) * inner, 0.0);
    const auto ad = a.data();
    for (int o = 0; o < outer; ++o)
        for (int e = 0; e < extent; ++e)
            for (int in = 0; in < inner; ++in)
                out[static_cast<size_t>(o) * inner + in] +=
                    ad[(static_cast<size_t>(o) * extent + e) * inner + in];
    for (double& v : out) v /= extent;
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("mean", out_shape, std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("mean", [an, on, outer, inner, extent] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            double inv = 1.0 / extent;
            for (int o = 0; o < outer; ++o)
                for (int e = 0; e < extent; ++e)
                    for (int in = 0; in < inner; ++in)
                        gav[(static_cast<size_t>(o) * extent + e) * inner + in] +=
                            go[static_cast<size_t>(o) * inner + in] * inv;
        });
    }
    return out_t;
}

Tensor l2_normalize(const Tensor& a) {
    if (a.ndim() != 1) fail(ErrKind::shape_mismatch, "l2_normalize: input must be 1-D");
    double norm_sq = 0.0;
    for (double v : a.data()) norm_sq += v * v;
    double norm = std::sqrt(norm_sq);
    if (norm == 0.0) fail(ErrKind::zero_vector, "l2_normalize: zero vector");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v /= norm;
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("l2_normalize", a.shape(), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("l2_normalize", [an, on, norm] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            // d(x/|x|) = (I - yy^T)/|x| applied to upstream grad, y = x/|x|.
            double dotv = 0.0;
            for (size_t i = 0; i < go.size(); ++i) dotv += go[i] * on->data[i];
            for (size_t i = 0; i < gav.size(); ++i)
                gav[i] += (go[i] - dotv * on->data[i]) / norm;
        });
    }
    return out_t;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) fail(ErrKind::shape_mismatch, "transpose: input must be 2-D");
    int rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(static_cast<size_t>(rows) * cols);
    const auto ad = a.data();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(j) * rows + i] = ad[static_cast<size_t>(i) * cols + j];
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("transpose", {cols, rows}, std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("transpose", [an, on, rows, cols] {
            const auto& go = on->grad;
            if (go.empty()) return;
            auto& gav = OpAccess::grad_buf(an);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    gav[static_cast<size_t>(i) * cols + j] += go[static_cast<size_t>(j) * rows + i];
        });
    }
    return out_t;
}

Tensor reshape(const Tensor& a, Shape shape) {
    int n = 1;
    for (int e : shape) n *= e;
    if (n != a.numel()) shape_fail("reshape", a.shape(), shape);
    std::vector<double> out(a.data().begin(), a.data().end());
    bool g = track(a);
    Tensor out_t = OpAccess::make_output("reshape", std::move(shape), std::move(out), g);
    if (g) {
        Node an = OpAccess::node(a), on = OpAccess::node(out_t);
        OpAccess::record("reshape", [an, on] {
            const auto& go = on->grad;
            if (go.empty()) return;
            axpy(OpAccess::grad_buf(an), go);
        });
    }
    return out_t;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride) {
    // input: C_in x H x W; kernel: C_out x C_in x KH x KW; bias: C_out.
    if (input.ndim() != 3 || kernel.ndim() != 4) shape_fail("conv2d", input.shape(), kernel.shape());
    int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    int co = kernel.dim(0), kci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kci != ci) shape_fail("conv2d", input.shape(), kernel.shape());
    if (bias.ndim() != 1 || bias.dim(0) != co) shape_fail("conv2d", kernel.shape(), bias.shape());
    if (stride < 1 || h < kh || w < kw)
        fail(ErrKind::invalid_argument, "conv2d: input smaller than kernel");
    int oh = (h - kh) / stride + 1;
    int ow = (w - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(co) * oh * ow, 0.0);
    const auto in = input.data(), ker = kernel.data(), bi = bias.data();
    for (int c = 0; c < co; ++c) {
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = bi[c];
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            s += in[(static_cast<size_t>(ic) * h + oy * stride + ky) * w +
                                    ox * stride + kx] *
                                 ker[((static_cast<size_t>(c) * ci + ic) * kh + ky) * kw + kx];
                out[(static_cast<size_t>(c) * oh + oy) * ow + ox] = s;
            }
    }
    bool g = track(input) || track(kernel) || track(bias);
    Tensor out_t = OpAccess::make_output("conv2d", {co, oh, ow}, std::move(out), g);
    if (g) {
        Node in_n = OpAccess::node(input), k_n = OpAccess::node(kernel), b_n = OpAccess::node(bias),
             on = OpAccess::node(out_t);
        bool gi = input.requires_grad(), gk = kernel.requires_grad(), gb = bias.requires_grad();
        OpAccess::record("conv2d", [in_n, k_n, b_n, on, ci, h, w, co, kh, kw, oh, ow, stride, gi,
                                    gk, gb] {
            const auto& go = on->grad;
            if (go.empty()) return;
            std::vector<double>* gin = gi ? &OpAccess::grad_buf(in_n) : nullptr;
            std::vector<double>* gker = gk ? &OpAccess::grad_buf(k_n) : nullptr;
            std::vector<double>* gbia = gb ? &OpAccess::grad_buf(b_n) : nullptr;
            for (int c = 0; c < co; ++c)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double gv = go[(static_cast<size_t>(c) * oh + oy) * ow + ox];
                        if (gv == 0.0) continue;
                        if (gbia) (*gbia)[static_cast<size_t>(c)] += gv;
                        for (int ic = 0; ic < ci; ++ic)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    size_t ii = (static_cast<size_t>(ic) * h + oy * stride + ky) *
                                                    w + ox * stride + kx;
                                    size_t ki =
                                        ((static_cast<size_t>(c) * ci + ic) * kh + ky) * kw + kx;
                                    if (gin) (*gin)[ii] += gv * k_n->data[ki];
                                    if (gker) (*gker)[ki] += gv * in_n->data[ii];
                                }
                    }
        });
    }
    return out_t;
}

// ---- helpers ----------------------------------------------------------------

Tensor dot(const Tensor& u, const Tensor& v) {
    if (u.ndim() != 1 || v.ndim() != 1 || u.numel() != v.numel())
        shape_fail("dot", u.shape(), v.shape());
    Tensor m = mul(u, v);
    return scale(mean(m, 0), static_cast<double>(u.numel()));
}

Tensor sum_all(const Tensor& a) {
    Tensor flat = a.ndim() == 1 ? a : reshape(a, {a.numel()});
    return scale(mean(flat, 0), static_cast<double>(a.numel()));
}

// ---- grad_check -------------------------------------------------------------

double grad_check(const std::function<Tensor()>& scalar_fn, const std::vector<Tensor>& params,
                  double h) {
    if (h <= 0.0) fail(ErrKind::invalid_argument, "grad_check: h must be positive");
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    // Analytic pass under a fresh tape with finite checking on.
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        tape.set_check_finite(true);
        Tensor root = scalar_fn();
        tape.backward(root);
        for (const Tensor& p : params) {
            auto g = p.grad();
            analytic.emplace_back(g.begin(), g.end());
        }
    }
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();

    double max_rel_err = 0.0;
    NoGrad no_grad;  // finite-difference probes run untaped
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto d = p.data();
        for (int i = 0; i < p.numel(); ++i) {
            double saved = d[static_cast<size_t>(i)];
            d[static_cast<size_t>(i)] = saved + h;
            double up = scalar_fn().item();
            d[static_cast<size_t>(i)] = saved - h;
            double down = scalar_fn().item();
            d[static_cast<size_t>(i)] = saved;
            double fd = (up - down) / (2.0 * h);
            double rel = std::abs(analytic[pi][static_cast<size_t>(i)] - fd) /
                         std::max(1.0, std::abs(fd));
            max_rel_err = std::max(max_rel_err, rel);
        }
    }
    return max_rel_err;
}

}  // namespace relprox
