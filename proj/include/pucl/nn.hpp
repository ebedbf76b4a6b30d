#pragma once

// Dense-network numerics shared by the policy, value and constraint networks.
// Everything is 64-bit and single-threaded; a forward pass keeps what the
// backward pass needs in a ForwardCache.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace pucl::nn {

using Rng = std::mt19937_64;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { identity, leaky_relu, sigmoid, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Layer k maps size[k] -> size[k+1] with weight (size[k] x size[k+1]).
struct MlpParams {
  std::vector<std::size_t> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  Activation hidden_activation = Activation::leaky_relu;
  Activation output_activation = Activation::identity;
  double leaky_slope = 0.01;
  // Bumped on every in-place update so caches from older parameters are detectable.
  std::uint64_t revision = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;

  // Throws ConfigError when shapes do not chain.
  void validate() const;
};

bool same_values(const MlpParams& a, const MlpParams& b);

// Glorot-uniform weights, zero biases.
MlpParams make_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                   Activation output, Rng& rng, double leaky_slope = 0.01);

// Parameter-shaped accumulator used for gradients and Adam moments.
struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  static MlpGrads zeros_like(const MlpParams& params);
  void set_zero();
  void add_scaled(const MlpGrads& other, double scale);
  bool all_finite() const;
};

struct ForwardCache {
  std::uint64_t revision = 0;
  std::vector<std::size_t> layer_sizes;
  Matrix input;
  std::vector<Matrix> pre;   // per layer, before activation
  std::vector<Matrix> post;  // per layer, after activation; post.back() is the output

  const Matrix& output() const { return post.back(); }
};

double activate(Activation a, double x, double leaky_slope);
double activate_derivative(Activation a, double pre, double post, double leaky_slope);

ForwardCache mlp_forward(const MlpParams& params, const Matrix& inputs);

// Output only; skips keeping intermediate layers alive past their use.
Matrix mlp_predict(const MlpParams& params, const Matrix& inputs);

struct BackwardResult {
  MlpGrads param_grads;
  Matrix input_grads;
};

// Reverse-mode gradients of sum(output_grad .* output) with respect to the
// parameters and the inputs.
BackwardResult mlp_backward(const MlpParams& params, const ForwardCache& cache,
                            const Matrix& output_grad);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  MlpGrads first_moment;
  MlpGrads second_moment;
  std::int64_t step = 0;
  AdamConfig config;

  static AdamState for_params(const MlpParams& params, AdamConfig config = {});
};

// Bias-corrected Adam on flat storage; `step` is the already incremented counter.
void adam_update(std::span<double> params, std::span<const double> grads,
                 std::span<double> m, std::span<double> v, std::int64_t step,
                 double lr, const AdamConfig& cfg);

// Throws TrainingError on a non-finite gradient, naming `context`.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr,
               const std::string& context = "adam_step");

// Adam state for a loose parameter vector (e.g. a policy log-std).
struct VectorAdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;
  AdamConfig config;
};

void adam_step(std::vector<double>& params, std::span<const double> grads,
               VectorAdamState& state, double lr, const std::string& context = "adam_step");

// Versioned snapshot document; reals round-trip exactly.
nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& doc);

}  // namespace pucl::nn
