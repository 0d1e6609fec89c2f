#include "doei/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace doei {

namespace {

thread_local Tape* g_active_tape = nullptr;

bool tracked(const Tensor& t) {
    Tape* tape = Tape::active();
    return tape != nullptr && (t.requires_grad() || t.impl()->tape == tape);
}

// Allocates the output grad buffer and appends the backprop closure.
// Must be called after the forward values are computed.
void record(Tensor& out, std::function<void()> backprop) {
    Tape* tape = Tape::active();
    out.impl()->grad.assign(out.numel(), 0.0);
    out.impl()->tape = tape;
    out.impl()->node_id = tape->append(std::move(backprop));
}

bool receives_grad(const TensorImpl& impl) { return !impl.grad.empty(); }

}  // namespace

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void check_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                         shape_str(a.shape()));
    }
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---- Tensor ----

Tensor::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    std::size_t n = 1;
    for (std::size_t d : impl_->shape) n *= d;
    impl_->data.assign(n, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
    impl_->shape = std::move(shape);
    std::size_t n = 1;
    for (std::size_t d : impl_->shape) n *= d;
    if (n != values.size()) {
        throw ShapeError("Tensor: " + shape_str(impl_->shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
    }
    impl_->data = std::move(values);
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2: " + shape_str(shape()));
    return impl_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2: " + shape_str(shape()));
    return impl_->shape[1];
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
}

double& Tensor::at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    }
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on && impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) {
        throw std::runtime_error("grad(): no gradient buffer; tensor was never tracked");
    }
    return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

// ---- Tape ----

Tape* Tape::active() { return g_active_tape; }

long Tape::append(std::function<void()> backprop) {
    nodes_.push_back(std::move(backprop));
    return static_cast<long>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a one-element tensor, got " +
                         shape_str(loss.shape()));
    }
    if (loss.impl()->tape != this) {
        throw std::invalid_argument("backward: loss tensor is not on this tape");
    }
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (tracked(a) || tracked(b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record(out, [ai, bi, oi, m, k, n] {
            const double* go = oi->grad.data();
            if (receives_grad(*ai)) {
                // dA += dC * B^T
                double* ga = ai->grad.data();
                const double* pb2 = bi->data.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = go + i * n;
                        const double* brow = pb2 + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
            }
            if (receives_grad(*bi)) {
                // dB += A^T * dC
                double* gb = bi->grad.data();
                const double* pa2 = ai->data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = go + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa2[i * k + p];
                        if (av == 0.0) continue;
                        double* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    check_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a(i, j);
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, m, n] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j * m + i];
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    check_rank2(a, "softmax_rows");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(a(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
    }
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, m, n] {
            if (!receives_grad(*ai)) return;
            // dx = s * (g - <g,s>) per row
            for (std::size_t i = 0; i < m; ++i) {
                const double* s = oi->data.data() + i * n;
                const double* g = oi->grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
                double* ga = ai->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) ga[j] += s[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    if (a.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t d = a.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias length must match last axis " + std::to_string(d) +
                         ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t rows = a.numel() / d;
    Tensor out(a.shape());
    std::vector<double> xhat(a.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* xh = xhat.data() + r * d;
        double* y = out.mutable_data().data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (x[j] - mean) * inv;
            y[j] = gain.data()[j] * xh[j] + bias.data()[j];
        }
    }
    if (tracked(a) || tracked(gain) || tracked(bias)) {
        auto ai = a.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
        record(out, [ai, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                     d] {
            const double* go = oi->grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = go + r * d;
                const double* xh = xhat.data() + r * d;
                if (receives_grad(*gi))
                    for (std::size_t j = 0; j < d; ++j) gi->grad[j] += g[j] * xh[j];
                if (receives_grad(*bi))
                    for (std::size_t j = 0; j < d; ++j) bi->grad[j] += g[j];
                if (receives_grad(*ai)) {
                    double sum1 = 0.0, sum2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[j] * gi->data[j];
                        sum1 += dxh;
                        sum2 += dxh * xh[j];
                    }
                    const double inv = inv_std[r];
                    const double nd = static_cast<double>(d);
                    double* ga = ai->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = g[j] * gi->data[j];
                        ga[j] += inv * (dxh - sum1 / nd - xh[j] * sum2 / nd);
                    }
                }
            }
        });
    }
    return out;
}

Tensor normalize_rows_sum(const Tensor& a) {
    check_rank2(a, "normalize_rows_sum");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({m, n});
    std::vector<double> sums(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a(i, j);
        sums[i] = s;
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a(i, j) / s;
    }
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, sums = std::move(sums), m, n] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = oi->grad.data() + i * n;
                const double* y = oi->data.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                double* ga = ai->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) ga[j] += (g[j] - dot) / sums[i];
            }
        });
    }
    return out;
}

Tensor row_l2_normalize(const Tensor& a, double eps) {
    check_rank2(a, "row_l2_normalize");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({m, n});
    std::vector<double> norms(m);
    std::vector<char> clamped(m);
    for (std::size_t i = 0; i < m; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += a(i, j) * a(i, j);
        const double nrm = std::sqrt(sq);
        clamped[i] = nrm <= eps;
        norms[i] = clamped[i] ? eps : nrm;
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a(i, j) / norms[i];
    }
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, norms = std::move(norms), clamped = std::move(clamped), m, n] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = oi->grad.data() + i * n;
                const double* y = oi->data.data() + i * n;
                double* ga = ai->grad.data() + i * n;
                if (clamped[i]) {
                    // below eps the map is linear: y = x / eps
                    for (std::size_t j = 0; j < n; ++j) ga[j] += g[j] / norms[i];
                } else {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n; ++j) ga[j] += (g[j] - y[j] * dot) / norms[i];
                }
            }
        });
    }
    return out;
}

namespace {

constexpr double kGeluCoeff = 0.044715;
constexpr double kSqrt2OverPi = 0.7978845608028654;  // sqrt(2/pi)

double gelu_value(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    const double t = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// add and sub share this; b_sign is +1 for add, -1 for sub.
Tensor add_like(const Tensor& a, const Tensor& b, const char* name, double b_sign) {
    check_same_shape(a, b, name);
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_data()[i] = a.data()[i] + b_sign * b.data()[i];
    if (tracked(a) || tracked(b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record(out, [ai, bi, oi, n, b_sign] {
            if (receives_grad(*ai))
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
            if (receives_grad(*bi))
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += b_sign * oi->grad[i];
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like(a, b, "add", 1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_like(a, b, "sub", -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
    if (tracked(a) || tracked(b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record(out, [ai, bi, oi, n] {
            if (receives_grad(*ai))
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
            if (receives_grad(*bi))
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
        });
    }
    return out;
}

namespace {

// Unary pointwise with value-dependent derivative.
Tensor pointwise_unary(const Tensor& a, double (*fwd)(double), double (*deriv)(double)) {
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = fwd(a.data()[i]);
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, n, deriv] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * deriv(ai->data[i]);
        });
    }
    return out;
}

}  // namespace

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * s;
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, n, s] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * s;
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    return pointwise_unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) { return pointwise_unary(a, gelu_value, gelu_derivative); }

Tensor softplus(const Tensor& a) {
    return pointwise_unary(
        a,
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
        [](double x) { return sigmoid(x); });
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + s;
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, n] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
    switch (kind) {
        case Elementwise::add: return add(a, b);
        case Elementwise::sub: return sub(a, b);
        case Elementwise::mul: return mul(a, b);
        default: throw ShapeError("elementwise: kind needs a scalar or no second operand");
    }
}

Tensor elementwise(const Tensor& a, double s, Elementwise kind) {
    if (kind != Elementwise::scale) {
        throw ShapeError("elementwise: only scale takes a scalar operand");
    }
    return scale(a, s);
}

Tensor elementwise(const Tensor& a, Elementwise kind) {
    switch (kind) {
        case Elementwise::relu: return relu(a);
        case Elementwise::gelu: return gelu(a);
        default: throw ShapeError("elementwise: kind requires a second operand");
    }
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    check_rank2(a, "add_bias");
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.numel() != n) {
        throw ShapeError("add_bias: bias length " + std::to_string(bias.numel()) +
                         " does not match columns of " + shape_str(a.shape()));
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a(i, j) + bias.data()[j];
    if (tracked(a) || tracked(bias)) {
        auto ai = a.impl(), bi = bias.impl(), oi = out.impl();
        record(out, [ai, bi, oi, m, n] {
            if (receives_grad(*ai))
                for (std::size_t i = 0; i < m * n; ++i) ai->grad[i] += oi->grad[i];
            if (receives_grad(*bi))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bi->grad[j] += oi->grad[i * n + j];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    check_rank2(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin > end || end > m) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") out of bounds for " + shape_str(a.shape()));
    }
    Tensor out({end - begin, n});
    std::copy(a.data().begin() + begin * n, a.data().begin() + end * n,
              out.mutable_data().begin());
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, begin, n, count = end - begin] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < count * n; ++i) ai->grad[begin * n + i] += oi->grad[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    check_rank2(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin > end || end > n) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") out of bounds for " + shape_str(a.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = a(i, begin + j);
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, m, n, begin, w] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    ai->grad[i * n + begin + j] += oi->grad[i * w + j];
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no tensors given");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        check_rank2(p, "concat_rows");
        if (p.cols() != n) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total += p.rows();
    }
    Tensor out({total, n});
    std::size_t row = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.mutable_data().begin() + row * n);
        row += p.rows();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || tracked(p);
    if (any) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        record(out, [impls = std::move(impls), oi, n] {
            std::size_t row = 0;
            for (const auto& pi : impls) {
                const std::size_t count = pi->data.size();
                if (receives_grad(*pi))
                    for (std::size_t i = 0; i < count; ++i) pi->grad[i] += oi->grad[row * n + i];
                row += count / n;
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no tensors given");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        check_rank2(p, "concat_cols");
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        total += p.cols();
    }
    Tensor out({m, total});
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, col + j) = p(i, j);
        col += p.cols();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || tracked(p);
    if (any) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        record(out, [impls = std::move(impls), oi, m, total] {
            std::size_t col = 0;
            for (const auto& pi : impls) {
                const std::size_t w = pi->shape[1];
                if (receives_grad(*pi))
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            pi->grad[i * w + j] += oi->grad[i * total + col + j];
                col += w;
            }
        });
    }
    return out;
}

Tensor mean_axis0(const Tensor& a) {
    check_rank2(a, "mean_axis0");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({n});
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a(i, j);
        out.mutable_data()[j] = s / static_cast<double>(m);
    }
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, m, n] {
            if (!receives_grad(*ai)) return;
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[j] * inv;
        });
    }
    return out;
}

Tensor mean_axis1(const Tensor& a) {
    check_rank2(a, "mean_axis1");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a(i, j);
        out.mutable_data()[i] = s / static_cast<double>(n);
    }
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi, m, n] {
            if (!receives_grad(*ai)) return;
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += oi->grad[i] * inv;
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out({1}, {s});
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi] {
            if (!receives_grad(*ai)) return;
            for (double& g : ai->grad) g += oi->grad[0];
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out(std::move(shape), a.data());
    if (tracked(a)) {
        auto ai = a.impl(), oi = out.impl();
        record(out, [ai, oi] {
            if (!receives_grad(*ai)) return;
            for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor minmax_normalize(const Tensor& a) {
    double lo = a.data().empty() ? 0.0 : a.data()[0];
    double hi = lo;
    for (double v : a.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out(a.shape());
    if (hi == lo) return out;  // degenerate: no activation anywhere
    const double range = hi - lo;
    for (std::size_t i = 0; i < a.numel(); ++i)
        out.mutable_data()[i] = (a.data()[i] - lo) / range;
    return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b, double eps) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: length mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

double cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
    return cosine_similarity(a.data(), b.data(), eps);
}

// ---- binary dump ----

namespace {

constexpr char kTensorMagic[8] = {'D', 'O', 'E', 'I', 'T', 'N', 'S', 'R'};

template <typename T>
void write_le(std::ostream& out, T value) {
    // host is little-endian (x86/arm64); payload spec is little-endian
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("tensor dump: truncated payload");
    return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kTensorMagic, sizeof(kTensorMagic));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) write_le<std::uint64_t>(out, d);
    for (double v : t.data()) write_le<double>(out, v);
    if (!out) throw IoError("tensor dump: write failed");
}

Tensor read_tensor(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
        throw IoError("tensor dump: bad magic, not a DOEITNSR file");
    }
    const auto rank = read_le<std::uint32_t>(in);
    if (rank > 8) throw IoError("tensor dump: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(read_le<std::uint64_t>(in));
        n *= shape[i];
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = read_le<double>(in);
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_tensor(in);
}

}  // namespace doei
