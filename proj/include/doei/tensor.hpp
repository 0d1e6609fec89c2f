#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "doei/errors.hpp"

namespace doei {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

class Tensor;
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);
void check_rank2(const Tensor& a, const char* op);

class Tape;

// Shared storage behind Tensor. Values are immutable once an op has consumed
// the tensor; only the grad buffer is written afterwards (by backward()).
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless this tensor receives gradients
    bool requires_grad = false;
    Tape* tape = nullptr;  // tape this tensor was recorded on (op outputs only)
    long node_id = -1;
};

// Dense row-major f64 array with optional autodiff tracking. Copies share
// storage; ops return fresh tensors.
class Tensor {
  public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t rank() const { return impl_->shape.size(); }
    // Rank-2 helpers; throw on other ranks.
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return impl_->data; }
    // Construction-phase writes (fills, image buffers, tests). Not for
    // mutating a tensor that already feeds a recorded graph.
    std::vector<double>& mutable_data() { return impl_->data; }
    double operator()(std::size_t r, std::size_t c) const;
    double& at(std::size_t r, std::size_t c);
    double item() const;  // value of a one-element tensor

    Tensor& set_requires_grad(bool on);
    bool requires_grad() const { return impl_->requires_grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  private:
    std::shared_ptr<TensorImpl> impl_;
};

// Records one backprop step per op output, in execution order (which is a
// topological order of the graph by construction).
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Seeds d(loss)/d(loss)=1 and walks the tape once in reverse, accumulating
    // into every grad buffer reachable from the loss. loss must be a
    // one-element tensor recorded on this tape.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    long append(std::function<void()> backprop);

    static Tape* active();

  private:
    friend class TapeScope;
    std::vector<std::function<void()>> nodes_;
};

// RAII guard making a tape the active recorder for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Free-function form of Tape::backward.
void backward(const Tensor& loss, Tape& tape);

// ---- ops ----
// Every op records itself on the active tape when any input is tracked,
// except minmax_normalize (evaluation-time, not differentiable).

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);

Tensor softmax_rows(const Tensor& a);  // rows sum to 1; max-subtracted
// Normalizes the last axis to mean 0 / var 1, then gain*x + bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Divides each row by its sum.
Tensor normalize_rows_sum(const Tensor& a);
// Scales each row to unit L2 norm (norm clamped below by eps).
Tensor row_l2_normalize(const Tensor& a, double eps = 1e-12);

enum class Elementwise { add, sub, mul, scale, relu, gelu };

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind);
Tensor elementwise(const Tensor& a, double s, Elementwise kind);  // scale only
Tensor elementwise(const Tensor& a, Elementwise kind);            // relu / gelu

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor add_scalar(const Tensor& a, double s);
Tensor softplus(const Tensor& a);  // log(1+e^x), overflow-stable

Tensor add_bias(const Tensor& a, const Tensor& bias);  // [m,n] + [n] per row

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor mean_axis0(const Tensor& a);  // [m,n] -> [n]
Tensor mean_axis1(const Tensor& a);  // [m,n] -> [m]
Tensor sum_all(const Tensor& a);     // -> [1]
Tensor reshape(const Tensor& a, Shape shape);

// Affine map of the whole tensor onto [0,1]; constant input maps to zeros
// ("no activation"). Evaluation-time op: never recorded on a tape.
Tensor minmax_normalize(const Tensor& a);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b,
                         double eps = 1e-12);
double cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

// ---- binary dump ----
// Magic "DOEITNSR", u32 rank, u64 dims, little-endian f64 payload.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace doei
