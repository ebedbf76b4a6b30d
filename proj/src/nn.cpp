#include "pucl/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pucl/errors.hpp"

namespace pucl::nn {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ConfigError("matrix data length " + std::to_string(data_.size()) + " != " +
                      std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t MlpParams::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].data().size() + biases[k].size();
  return n;
}

void MlpParams::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least an input and an output layer");
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
    throw ConfigError("mlp layer count does not match layer_sizes");
  }
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (layer_sizes[k] == 0 || layer_sizes[k + 1] == 0) throw ConfigError("mlp layer of size 0");
    if (weights[k].rows() != layer_sizes[k] || weights[k].cols() != layer_sizes[k + 1] ||
        biases[k].size() != layer_sizes[k + 1]) {
      throw ConfigError("mlp layer " + std::to_string(k) + " shape does not chain");
    }
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in [0,1)");
}

bool same_values(const MlpParams& a, const MlpParams& b) {
  return a.layer_sizes == b.layer_sizes && a.weights == b.weights && a.biases == b.biases &&
         a.hidden_activation == b.hidden_activation &&
         a.output_activation == b.output_activation && a.leaky_slope == b.leaky_slope;
}

MlpParams make_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                   Activation output, Rng& rng, double leaky_slope) {
  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.hidden_activation = hidden;
  p.output_activation = output;
  p.leaky_slope = leaky_slope;
  if (layer_sizes.size() < 2) throw ConfigError("mlp needs at least an input and an output layer");
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const std::size_t fan_in = layer_sizes[k];
    const std::size_t fan_out = layer_sizes[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(fan_in, fan_out);
    for (double& v : w.data()) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  p.validate();
  return p;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    g.weights.emplace_back(params.weights[k].rows(), params.weights[k].cols());
    g.biases.emplace_back(params.biases[k].size(), 0.0);
  }
  return g;
}

void MlpGrads::set_zero() {
  for (auto& w : weights) std::fill(w.data().begin(), w.data().end(), 0.0);
  for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    auto& dst = weights[k].data();
    const auto& src = other.weights[k].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    for (std::size_t i = 0; i < biases[k].size(); ++i) biases[k][i] += scale * other.biases[k][i];
  }
}

bool MlpGrads::all_finite() const {
  for (const auto& w : weights)
    if (!w.all_finite()) return false;
  for (const auto& b : biases)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

double activate(Activation a, double x, double leaky_slope) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::leaky_relu: return x > 0.0 ? x : leaky_slope * x;
    case Activation::sigmoid:
      // Split by sign so neither branch overflows.
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

double activate_derivative(Activation a, double pre, double post, double leaky_slope) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::leaky_relu: return pre > 0.0 ? 1.0 : leaky_slope;
    case Activation::sigmoid: return post * (1.0 - post);
    case Activation::tanh: return 1.0 - post * post;
  }
  return 1.0;
}

namespace {

void check_input(const MlpParams& params, const Matrix& inputs) {
  if (params.weights.empty()) throw ConfigError("mlp has no layers");
  if (inputs.cols() != params.input_dim()) {
    throw ConfigError("mlp input has " + std::to_string(inputs.cols()) + " columns, expected " +
                      std::to_string(params.input_dim()));
  }
}

// out = act(in * W + b), also returning the pre-activation when requested.
void affine_layer(const MlpParams& params, std::size_t k, const Matrix& in, Matrix& pre,
                  Matrix& post) {
  const Matrix& w = params.weights[k];
  const auto& b = params.biases[k];
  const std::size_t n_in = w.rows();
  const std::size_t n_out = w.cols();
  const bool last = k + 1 == params.weights.size();
  const Activation act = last ? params.output_activation : params.hidden_activation;
  pre = Matrix(in.rows(), n_out);
  post = Matrix(in.rows(), n_out);
  const double* wd = w.data().data();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double* z = &pre(r, 0);
    std::copy(b.begin(), b.end(), z);
    const double* x = in.row(r).data();
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = x[i];
      const double* wrow = wd + i * n_out;
      for (std::size_t j = 0; j < n_out; ++j) z[j] += xi * wrow[j];
    }
    double* y = &post(r, 0);
    for (std::size_t j = 0; j < n_out; ++j) y[j] = activate(act, z[j], params.leaky_slope);
  }
}

}  // namespace

ForwardCache mlp_forward(const MlpParams& params, const Matrix& inputs) {
  check_input(params, inputs);
  ForwardCache cache;
  cache.revision = params.revision;
  cache.layer_sizes = params.layer_sizes;
  cache.input = inputs;
  cache.pre.resize(params.num_layers());
  cache.post.resize(params.num_layers());
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    affine_layer(params, k, k == 0 ? inputs : cache.post[k - 1], cache.pre[k], cache.post[k]);
  }
  return cache;
}

Matrix mlp_predict(const MlpParams& params, const Matrix& inputs) {
  check_input(params, inputs);
  Matrix current = inputs;
  Matrix pre;
  Matrix post;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    affine_layer(params, k, current, pre, post);
    current = std::move(post);
  }
  return current;
}

BackwardResult mlp_backward(const MlpParams& params, const ForwardCache& cache,
                            const Matrix& output_grad) {
  if (cache.revision != params.revision || cache.layer_sizes != params.layer_sizes ||
      cache.post.size() != params.num_layers()) {
    throw UsageError("mlp_backward: forward cache is stale for these parameters");
  }
  const std::size_t batch = cache.input.rows();
  if (output_grad.rows() != batch || output_grad.cols() != params.output_dim()) {
    throw UsageError("mlp_backward: output gradient shape does not match the forward output");
  }
  BackwardResult result{MlpGrads::zeros_like(params), Matrix()};
  Matrix delta = output_grad;
  for (std::size_t kk = params.num_layers(); kk-- > 0;) {
    const bool last = kk + 1 == params.num_layers();
    const Activation act = last ? params.output_activation : params.hidden_activation;
    const Matrix& pre = cache.pre[kk];
    const Matrix& post = cache.post[kk];
    const Matrix& in = kk == 0 ? cache.input : cache.post[kk - 1];
    const Matrix& w = params.weights[kk];
    const std::size_t n_in = w.rows();
    const std::size_t n_out = w.cols();
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t j = 0; j < n_out; ++j) {
        delta(r, j) *= activate_derivative(act, pre(r, j), post(r, j), params.leaky_slope);
      }
    }
    Matrix& gw = result.param_grads.weights[kk];
    auto& gb = result.param_grads.biases[kk];
    Matrix next(batch, n_in);
    for (std::size_t r = 0; r < batch; ++r) {
      const double* d = &delta(r, 0);
      const double* x = in.row(r).data();
      for (std::size_t j = 0; j < n_out; ++j) gb[j] += d[j];
      for (std::size_t i = 0; i < n_in; ++i) {
        const double xi = x[i];
        double* grow = &gw(i, 0);
        const double* wrow = w.row(i).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < n_out; ++j) {
          grow[j] += xi * d[j];
          acc += wrow[j] * d[j];
        }
        next(r, i) = acc;
      }
    }
    delta = std::move(next);
  }
  result.input_grads = std::move(delta);
  return result;
}

AdamState AdamState::for_params(const MlpParams& params, AdamConfig config) {
  return AdamState{MlpGrads::zeros_like(params), MlpGrads::zeros_like(params), 0, config};
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, std::int64_t step, double lr, const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr,
               const std::string& context) {
  if (grads.weights.size() != params.num_layers() ||
      state.first_moment.weights.size() != params.num_layers()) {
    throw UsageError(context + ": gradient/optimizer shapes do not match parameters");
  }
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    if (grads.weights[k].data().size() != params.weights[k].data().size() ||
        grads.biases[k].size() != params.biases[k].size()) {
      throw UsageError(context + ": gradient shape mismatch in layer " + std::to_string(k));
    }
  }
  if (!grads.all_finite()) {
    throw TrainingError(context + ": non-finite gradient at optimizer step " +
                        std::to_string(state.step + 1));
  }
  ++state.step;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    adam_update(params.weights[k].data(), grads.weights[k].data(),
                state.first_moment.weights[k].data(), state.second_moment.weights[k].data(),
                state.step, lr, state.config);
    adam_update(params.biases[k], grads.biases[k], state.first_moment.biases[k],
                state.second_moment.biases[k], state.step, lr, state.config);
  }
  ++params.revision;
}

void adam_step(std::vector<double>& params, std::span<const double> grads,
               VectorAdamState& state, double lr, const std::string& context) {
  if (grads.size() != params.size()) throw UsageError(context + ": gradient size mismatch");
  for (double g : grads) {
    if (!std::isfinite(g)) {
      throw TrainingError(context + ": non-finite gradient at optimizer step " +
                          std::to_string(state.step + 1));
    }
  }
  state.first_moment.resize(params.size(), 0.0);
  state.second_moment.resize(params.size(), 0.0);
  ++state.step;
  adam_update(params, grads, state.first_moment, state.second_moment, state.step, lr,
              state.config);
}

nlohmann::json to_json(const MlpParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    layers.push_back({{"weight", params.weights[k].data()}, {"bias", params.biases[k]}});
  }
  return {{"format", "pucl-mlp"},
          {"version", 1},
          {"layer_sizes", params.layer_sizes},
          {"hidden_activation", to_string(params.hidden_activation)},
          {"output_activation", to_string(params.output_activation)},
          {"leaky_slope", params.leaky_slope},
          {"layers", layers}};
}

MlpParams mlp_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "pucl-mlp") throw ConfigError("not an mlp snapshot");
    if (doc.at("version").get<int>() != 1) throw ConfigError("unsupported mlp snapshot version");
    MlpParams p;
    p.layer_sizes = doc.at("layer_sizes").get<std::vector<std::size_t>>();
    p.hidden_activation = activation_from_string(doc.at("hidden_activation").get<std::string>());
    p.output_activation = activation_from_string(doc.at("output_activation").get<std::string>());
    p.leaky_slope = doc.at("leaky_slope").get<double>();
    const auto& layers = doc.at("layers");
    if (p.layer_sizes.size() < 2 || layers.size() != p.layer_sizes.size() - 1) {
      throw ConfigError("mlp snapshot layer count does not match layer_sizes");
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
      p.weights.emplace_back(p.layer_sizes[k], p.layer_sizes[k + 1],
                             layers[k].at("weight").get<std::vector<double>>());
      p.biases.push_back(layers[k].at("bias").get<std::vector<double>>());
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mlp snapshot: ") + e.what());
  }
}

}  // namespace pucl::nn
