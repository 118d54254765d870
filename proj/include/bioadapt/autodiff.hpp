#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "bioadapt/errors.hpp"
#include "bioadapt/rng.hpp"

namespace bioadapt::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // persistent, same size as values when allocated
    std::vector<double> adj;   // scratch adjoint used during one backward pass
    bool requires_grad = false;
};

/// Value-semantic handle onto a dense double array. Copies share storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->values.size(); }
    std::size_t rank() const { return d_->shape.size(); }
    bool is_scalar() const { return d_->values.size() == 1 && d_->shape.empty(); }
    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }
    double item() const;

    double& at(std::size_t i) { return d_->values[i]; }
    double at(std::size_t i) const { return d_->values[i]; }
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    std::size_t rows() const;
    std::size_t cols() const;

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    TensorData* data() const { return d_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;

    friend class Tape;
};

/// Define-by-run tape. Records one closure per operation; backward() replays
/// them in reverse, accumulating adjoints, then folds the adjoints into the
/// persistent grad of every requires_grad tensor it touched.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t num_ops() const { return ops_.size(); }

    /// Seeds d(loss)/d(loss)=1 and propagates. Loss must be a scalar created
    /// by an operation recorded on this tape. Repeated calls accumulate.
    void backward(const Tensor& loss);

    // -- recording interface used by the ops below --
    void track(const Tensor& t);
    void record(std::function<void()> op) { ops_.push_back(std::move(op)); }
    Tensor make(Shape shape, bool requires_grad);

  private:
    std::vector<std::function<void()>> ops_;
    std::vector<std::shared_ptr<TensorData>> tracked_;
    std::unordered_set<TensorData*> seen_;
};

// ---- differentiable operations -------------------------------------------
// Every op validates shapes, computes the forward value, and (when any input
// requires grad) records a reverse rule onto the tape.

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double c);
Tensor add_scalar(Tape& t, const Tensor& a, double c);
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& t, const Tensor& a);
Tensor add_bias(Tape& t, const Tensor& a, const Tensor& bias);
Tensor reshape(Tape& t, const Tensor& a, Shape shape);
Tensor slice(Tape& t, const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor row(Tape& t, const Tensor& a, std::size_t r);
Tensor concatenate(Tape& t, const std::vector<Tensor>& parts, std::size_t axis);
Tensor softmax(Tape& t, const Tensor& a, std::size_t axis = 0);
Tensor masked_softmax(Tape& t, const Tensor& a, const std::vector<bool>& key_valid);
Tensor log(Tape& t, const Tensor& a);
Tensor relu(Tape& t, const Tensor& a);
Tensor gelu(Tape& t, const Tensor& a);
Tensor layer_norm(Tape& t, const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor dropout(Tape& t, const Tensor& a, double p, bool train_flag, Rng& rng);
Tensor embedding_lookup(Tape& t, const Tensor& table, const std::vector<std::size_t>& ids);
Tensor sum(Tape& t, const Tensor& a);
Tensor mean(Tape& t, const Tensor& a);
Tensor pick(Tape& t, const Tensor& a, std::size_t flat_index);
Tensor cosine_similarity(Tape& t, const Tensor& u, const Tensor& v);
Tensor cross_entropy_from_logprobs(Tape& t, const Tensor& logp, std::size_t golden);

/// Identity forward; backward multiplies the incoming gradient by -lambda.
Tensor gradient_reversal(Tape& t, const Tensor& x, double lambda);

}  // namespace bioadapt::ad
