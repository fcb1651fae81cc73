#include "clalign/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "clalign/format.hpp"
#include "clalign/metrics.hpp"
#include "clalign/rng.hpp"

namespace clalign {
namespace {

Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

Layer zero_layer_like(const Layer& layer) {
  return Layer{Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
               Eigen::VectorXd::Zero(layer.bias.size()), layer.activation};
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& a, Activation act) {
  return act == Activation::kTanh ? Eigen::MatrixXd(a.array().tanh()) : a;
}

Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& a, Activation act) {
  if (act == Activation::kIdentity) return Eigen::MatrixXd::Ones(a.rows(), a.cols());
  return (1.0 - a.array().tanh().square()).matrix();
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input rows of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activations
  Eigen::MatrixXd y;
  Eigen::VectorXd norms;
  Eigen::MatrixXd z;
};

ForwardCache run_forward(const EncoderParams& params, const Eigen::MatrixXd& x) {
  if (x.cols() != params.input_dim()) throw std::invalid_argument("encoder input dimension mismatch");
  ForwardCache cache;
  Eigen::MatrixXd h = x;
  for (const auto& layer : params.layers) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd a = h * layer.weight.transpose();
    a.rowwise() += layer.bias.transpose();
    h = activate(a, layer.activation);
    cache.pre.push_back(std::move(a));
  }
  cache.y = h;
  cache.norms = h.rowwise().norm();
  cache.z = h;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    if (!(cache.norms[i] > 0.0)) throw std::runtime_error("encoder output has zero norm");
    cache.z.row(i) /= cache.norms[i];
  }
  return cache;
}

// Gradient of a scalar with respect to the encoder parameters given dL/dZ.
EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const Eigen::MatrixXd& dz) {
  Eigen::MatrixXd dh(dz.rows(), dz.cols());
  for (Eigen::Index i = 0; i < dz.rows(); ++i) {
    const auto zi = cache.z.row(i);
    dh.row(i) = (dz.row(i) - zi * zi.dot(dz.row(i))) / cache.norms[i];
  }
  EncoderParams grad;
  grad.layers.resize(params.layers.size());
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = params.layers[l];
    const Eigen::MatrixXd da = dh.cwiseProduct(activation_slope(cache.pre[l], layer.activation));
    grad.layers[l].weight = da.transpose() * cache.inputs[l];
    grad.layers[l].bias = da.colwise().sum().transpose();
    grad.layers[l].activation = layer.activation;
    if (l > 0) dh = da * layer.weight;
  }
  if (params.head) grad.head = zero_layer_like(*params.head);
  return grad;
}

double log_sum_exp_subset(const AnchorView& av, bool skip_positive, bool positives_only) {
  std::vector<double> logits;
  for (int k = 0; k < av.size(); ++k) {
    if (skip_positive && k == av.positive) continue;
    if (positives_only && !av.same_class[k]) continue;
    logits.push_back(av.logits[k]);
  }
  return log_sum_exp_tau(logits, av.tau);
}

void check_contrastive(Objective objective) {
  if (objective == Objective::kCE) {
    throw std::invalid_argument("CE has no similarity-space gradient");
  }
}

}  // namespace

const char* to_string(Objective objective) {
  switch (objective) {
    case Objective::kCL: return "CL";
    case Objective::kNSCL: return "NSCL";
    case Objective::kSCL: return "SCL";
    case Objective::kCE: return "CE";
    case Objective::kDCL: return "DCL";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto o : {Objective::kCL, Objective::kNSCL, Objective::kSCL, Objective::kCE,
                 Objective::kDCL}) {
    if (upper == to_string(o)) return o;
  }
  throw std::invalid_argument("unknown objective '" + name + "'");
}

Eigen::Index EncoderParams::num_params(bool include_head) const {
  Eigen::Index n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  if (include_head && head) n += head->weight.size() + head->bias.size();
  return n;
}

Eigen::VectorXd EncoderParams::flatten(bool include_head) const {
  Eigen::VectorXd flat(num_params(include_head));
  Eigen::Index k = 0;
  auto put = [&](const Layer& layer) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) flat[k++] = layer.weight(i, j);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) flat[k++] = layer.bias[i];
  };
  for (const auto& layer : layers) put(layer);
  if (include_head && head) put(*head);
  return flat;
}

void EncoderParams::assign(const Eigen::VectorXd& flat, bool include_head) {
  if (flat.size() != num_params(include_head)) throw std::invalid_argument("assign: size mismatch");
  Eigen::Index k = 0;
  auto take = [&](Layer& layer) {
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = flat[k++];
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = flat[k++];
  };
  for (auto& layer : layers) take(layer);
  if (include_head && head) take(*head);
}

bool EncoderParams::is_finite() const { return flatten().allFinite(); }

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams out;
  for (const auto& layer : layers) out.layers.push_back(zero_layer_like(layer));
  if (head) out.head = zero_layer_like(*head);
  return out;
}

void EncoderParams::axpy(double a, const EncoderParams& other) {
  if (other.layers.size() != layers.size()) throw std::invalid_argument("axpy: layer mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight += a * other.layers[l].weight;
    layers[l].bias += a * other.layers[l].bias;
  }
  if (head && other.head) {
    head->weight += a * other.head->weight;
    head->bias += a * other.head->bias;
  }
}

EncoderParams init_encoder(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("init_encoder: dimensions must be positive");
  }
  auto rng = make_rng(seed, Stream::kInit, 0);
  EncoderParams params;
  params.layers.push_back({gaussian_matrix(rng, hidden_dim, input_dim, 1.0 / std::sqrt(input_dim)),
                           Eigen::VectorXd::Zero(hidden_dim), Activation::kTanh});
  params.layers.push_back(
      {gaussian_matrix(rng, output_dim, hidden_dim, 1.0 / std::sqrt(hidden_dim)),
       Eigen::VectorXd::Zero(output_dim), Activation::kIdentity});
  return params;
}

EncoderParams linear_encoder(const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias) {
  EncoderParams params;
  Eigen::VectorXd b = bias.size() == 0 ? Eigen::VectorXd::Zero(weight.rows()) : bias;
  if (b.size() != weight.rows()) throw std::invalid_argument("linear_encoder: bias size");
  params.layers.push_back({weight, b, Activation::kIdentity});
  return params;
}

void attach_head(EncoderParams& params, int num_classes, std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::kInit, 1);
  const int d = params.output_dim();
  params.head = Layer{gaussian_matrix(rng, num_classes, d, 1.0 / std::sqrt(d)),
                      Eigen::VectorXd::Zero(num_classes), Activation::kIdentity};
}

Eigen::VectorXd forward(const EncoderParams& params, const Eigen::VectorXd& x) {
  return run_forward(params, x.transpose()).z.row(0).transpose();
}

Eigen::MatrixXd embed(const EncoderParams& params, const Eigen::MatrixXd& inputs, int layer) {
  if (layer < 0) return run_forward(params, inputs).z;
  if (layer >= static_cast<int>(params.layers.size())) {
    throw std::invalid_argument("embed: layer index out of range");
  }
  Eigen::MatrixXd h = inputs;
  for (int l = 0; l <= layer; ++l) {
    Eigen::MatrixXd a = h * params.layers[l].weight.transpose();
    a.rowwise() += params.layers[l].bias.transpose();
    h = activate(a, params.layers[l].activation);
  }
  return h;
}

EncoderBatch make_encoder_batch(const Dataset& data, const AugmentationKernel& kernel,
                                const BatchDraw& batch) {
  EncoderBatch out;
  out.labels = batch.labels;
  out.views.resize(2 * static_cast<Eigen::Index>(batch.size()), data.dim());
  for (int s = 0; s < batch.size(); ++s) {
    const Eigen::VectorXd x = data.points.row(batch.base_indices[s]).transpose();
    for (int v = 0; v < 2; ++v) {
      out.views.row(2 * s + v) = apply_augmentation(x, kernel, {batch.step, s, v}).transpose();
    }
  }
  return out;
}

double scl_anchor_loss(const AnchorView& av) {
  double pos_sum = 0.0;
  int pos_count = 0;
  for (int k = 0; k < av.size(); ++k) {
    if (av.same_class[k]) {
      pos_sum += av.logits[k];
      ++pos_count;
    }
  }
  return -pos_sum / (pos_count * av.tau) + log_sum_exp_tau(av.logits, av.tau);
}

std::vector<double> scl_anchor_grad(const AnchorView& av) {
  auto g = softmax_tau(av.logits, av.tau);
  int pos_count = 0;
  for (char c : av.same_class) pos_count += c ? 1 : 0;
  for (int k = 0; k < av.size(); ++k) {
    if (av.same_class[k]) g[k] -= 1.0 / pos_count;
    g[k] /= av.tau;
  }
  return g;
}

double dcl_anchor_loss(const AnchorView& av) {
  if (av.size() < 2) throw std::invalid_argument("DCL needs at least one key besides the positive");
  return -av.logits[av.positive] / av.tau + log_sum_exp_subset(av, true, false);
}

std::vector<double> dcl_anchor_grad(const AnchorView& av) {
  if (av.size() < 2) throw std::invalid_argument("DCL needs at least one key besides the positive");
  std::vector<double> others;
  for (int k = 0; k < av.size(); ++k) {
    if (k != av.positive) others.push_back(av.logits[k]);
  }
  const auto r = softmax_tau(others, av.tau);
  std::vector<double> g(av.logits.size(), 0.0);
  std::size_t j = 0;
  for (int k = 0; k < av.size(); ++k) {
    g[k] = (k == av.positive ? -1.0 : r[j++]) / av.tau;
  }
  return g;
}

Eigen::MatrixXd similarity_gradient(Objective objective, std::span<const int> labels,
                                    const Eigen::MatrixXd& view_sim, double tau, double* loss,
                                    int* skipped) {
  check_contrastive(objective);
  const auto anchors = make_anchor_views(labels, view_sim, tau);
  const int batch = static_cast<int>(anchors.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2 * batch, 2 * batch);
  double total = 0.0;
  int skip_count = 0;
  for (const auto& av : anchors) {
    std::vector<double> values;
    switch (objective) {
      case Objective::kCL:
        total += cl_anchor_loss(av);
        values = anchor_grad(LossKind::kCL, av);
        break;
      case Objective::kNSCL:
        if (av.num_negatives() == 0) {
          ++skip_count;
          continue;
        }
        total += nscl_anchor_loss(av);
        values = anchor_grad(LossKind::kNSCL, av);
        break;
      case Objective::kSCL:
        total += scl_anchor_loss(av);
        values = scl_anchor_grad(av);
        break;
      case Objective::kDCL:
        total += dcl_anchor_loss(av);
        values = dcl_anchor_grad(av);
        break;
      case Objective::kCE:
        break;
    }
    for (int k = 0; k < av.size(); ++k) g(av.anchor, av.keys[k]) = values[k] / batch;
  }
  if (loss) *loss = total / batch;
  if (skipped) *skipped = skip_count;
  return g;
}

LossGrad loss_and_grad(Objective objective, const EncoderParams& params,
                       const EncoderBatch& batch, double tau) {
  const auto cache = run_forward(params, batch.views);
  LossGrad out;
  if (objective == Objective::kCE) {
    if (!params.head) throw std::invalid_argument("CE objective needs a classification head");
    const auto& head = *params.head;
    const Eigen::Index n = cache.z.rows();
    Eigen::MatrixXd logits = cache.z * head.weight.transpose();
    logits.rowwise() += head.bias.transpose();
    Eigen::MatrixXd dlogits(n, head.weight.rows());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = batch.labels[i / 2];
      std::vector<double> row(static_cast<std::size_t>(logits.cols()));
      for (Eigen::Index c = 0; c < logits.cols(); ++c) row[c] = logits(i, c);
      const auto p = softmax_tau(row, 1.0);
      total -= std::log(p[y]);
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        dlogits(i, c) = (p[c] - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
    out.loss = total / static_cast<double>(n);
    out.grad = backward(params, cache, dlogits * head.weight);
    out.grad.head = Layer{dlogits.transpose() * cache.z, dlogits.colwise().sum().transpose(),
                          Activation::kIdentity};
    return out;
  }
  const Eigen::MatrixXd sim = cache.z * cache.z.transpose();
  const Eigen::MatrixXd g =
      similarity_gradient(objective, batch.labels, sim, tau, &out.loss, &out.skipped_anchors);
  out.grad = backward(params, cache, (g + g.transpose()) * cache.z);
  return out;
}

EncoderParams similarity_vjp(const EncoderParams& params, const Eigen::MatrixXd& inputs,
                             const Eigen::MatrixXd& weights) {
  const auto cache = run_forward(params, inputs);
  return backward(params, cache, (weights + weights.transpose()) * cache.z);
}

Eigen::MatrixXd similarity_jvp(const EncoderParams& params, const Eigen::MatrixXd& inputs,
                               const EncoderParams& direction) {
  const auto cache = run_forward(params, inputs);
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(inputs.rows(), inputs.cols());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const auto& dlayer = direction.layers[l];
    Eigen::MatrixXd da = dh * layer.weight.transpose() + cache.inputs[l] * dlayer.weight.transpose();
    da.rowwise() += dlayer.bias.transpose();
    dh = da.cwiseProduct(activation_slope(cache.pre[l], layer.activation));
  }
  Eigen::MatrixXd dz(dh.rows(), dh.cols());
  for (Eigen::Index i = 0; i < dh.rows(); ++i) {
    const auto zi = cache.z.row(i);
    dz.row(i) = (dh.row(i) - zi * zi.dot(dh.row(i))) / cache.norms[i];
  }
  Eigen::MatrixXd ds = dz * cache.z.transpose();
  ds += ds.transpose().eval();
  ds.diagonal().setZero();
  return ds;
}

EncoderParams sim_param_gradient(const EncoderParams& params, const Eigen::VectorXd& u,
                                  const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw std::invalid_argument("sim_param_gradient: size mismatch");
  if ((u - v).norm() == 0.0) throw std::invalid_argument("sim_param_gradient: u == v");
  Eigen::MatrixXd inputs(2, u.size());
  inputs.row(0) = u.transpose();
  inputs.row(1) = v.transpose();
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(2, 2);
  weights(0, 1) = 1.0;
  return similarity_vjp(params, inputs, weights);
}

double weight_distance(const EncoderParams& a, const EncoderParams& b) {
  return (a.flatten(false) - b.flatten(false)).norm();
}

double relative_layer_gap(const EncoderParams& a, const EncoderParams& b) {
  if (a.layers.size() != b.layers.size()) throw std::invalid_argument("layer count mismatch");
  double total = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& la = a.layers[l];
    const auto& lb = b.layers[l];
    const double diff = std::sqrt((la.weight - lb.weight).squaredNorm() +
                                  (la.bias - lb.bias).squaredNorm());
    const double na = std::sqrt(la.weight.squaredNorm() + la.bias.squaredNorm());
    const double nb = std::sqrt(lb.weight.squaredNorm() + lb.bias.squaredNorm());
    const double scale = 0.5 * (na + nb);
    if (scale > 0.0) total += diff / scale;
  }
  return total;
}

double max_pair_gradient_norm(const EncoderParams& params, const EncoderBatch& batch) {
  double best = 0.0;
  const Eigen::Index n = batch.views.rows();
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const Eigen::VectorXd u = batch.views.row(a).transpose();
      const Eigen::VectorXd v = batch.views.row(b).transpose();
      if ((u - v).norm() == 0.0) continue;
      best = std::max(best, sim_param_gradient(params, u, v).flatten(false).norm());
    }
  }
  return best;
}

SmoothnessEstimate estimate_smoothness_constants(const EncoderParams& center, const Dataset& data,
                                                 const AugmentationKernel& kernel,
                                                 const SmoothnessOptions& options) {
  if (options.pairs < 1) throw std::invalid_argument("estimate_smoothness_constants: pairs >= 1");
  if (options.radius < 0.0) throw std::invalid_argument("estimate_smoothness_constants: radius");
  if (options.objective == Objective::kCE) {
    throw std::invalid_argument("estimate_smoothness_constants: contrastive objective required");
  }
  std::vector<EncoderBatch> batches;
  for (int b = 0; b < options.batches; ++b) {
    batches.push_back(make_encoder_batch(
        data, kernel, draw_batch(data, options.batch_size, b, options.seed)));
  }
  const Eigen::VectorXd w0 = center.flatten(false);
  auto rng = make_rng(options.seed, Stream::kTrial, 0x5400);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sample_point = [&]() {
    Eigen::VectorXd dir(w0.size());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir[k] = normal(rng);
    EncoderParams p = center;
    p.assign(w0 + options.radius * unit(rng) * dir.normalized(), false);
    return p;
  };
  auto grad_of = [&](const EncoderParams& p, const EncoderBatch& batch) {
    return loss_and_grad(options.objective, p, batch, options.tau).grad.flatten(false);
  };

  SmoothnessEstimate est;
  for (int k = 0; k < options.pairs; ++k) {
    const auto& batch = batches[k % batches.size()];
    const EncoderParams w = sample_point();
    if (options.radius > 0.0) {
      const EncoderParams v = sample_point();
      const double dist = weight_distance(w, v);
      if (dist == 0.0) throw std::invalid_argument("estimate_smoothness_constants: zero-distance pair");
      est.beta = std::max(est.beta, (grad_of(w, batch) - grad_of(v, batch)).norm() / dist);
    }
    const int n = static_cast<int>(batch.views.rows());
    std::uniform_int_distribution<int> pick(0, n - 1);
    const int a = pick(rng);
    int b = pick(rng);
    if (b == a) b = (a + 1) % n;
    const Eigen::VectorXd u = batch.views.row(a).transpose();
    const Eigen::VectorXd v = batch.views.row(b).transpose();
    if ((u - v).norm() > 0.0) {
      est.g = std::max(est.g, sim_param_gradient(w, u, v).flatten(false).norm());
    }
    ++est.pairs;
  }
  est.note = "estimated lower bound of a supremum";
  return est;
}

ProbeSet make_probe_set(const Dataset& data, int size, double class_separation,
                        std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("make_probe_set: size must be positive");
  ProbeSet probe;
  probe.points.resize(size, data.dim());
  probe.labels.resize(size);
  const double noise = std::isinf(class_separation) ? 0.0 : 1.0 / class_separation;
  for (int i = 0; i < size; ++i) {
    const int c = i % data.num_classes;
    auto rng = make_rng(seed, Stream::kProbe, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd x = data.class_means.row(c).transpose();
    if (noise > 0.0) {
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] += noise * normal(rng);
    }
    probe.points.row(i) = x.normalized().transpose();
    probe.labels[i] = c;
  }
  return probe;
}

std::vector<EncoderRecord> CoupledEncoderTrace::series(Objective objective) const {
  std::vector<EncoderRecord> out;
  for (const auto& r : records) {
    if (r.objective == objective) out.push_back(r);
  }
  return out;
}

CoupledEncoderTrace run_coupled_encoders(const Dataset& data, const AugmentationKernel& kernel,
                                         const Eigen::MatrixXd& probe,
                                         const CoupledEncoderConfig& config) {
  if (config.objectives.empty() || config.objectives.front() != Objective::kCL) {
    throw std::invalid_argument("run_coupled_encoders: objectives must start with CL");
  }
  if (config.batch_size < 2) throw std::invalid_argument("run_coupled_encoders: B must be >= 2");
  const int horizon = config.schedule.total_steps;
  const auto etas = config.schedule.etas();
  const int per_epoch = config.steps_per_epoch > 0
                            ? config.steps_per_epoch
                            : (data.size() + config.batch_size - 1) / config.batch_size;
  const AugmentationKernel run_kernel{kernel.noise_scale, config.master_seed};

  CoupledEncoderTrace trace;
  trace.objectives = config.objectives;
  const EncoderParams base =
      init_encoder(data.dim(), config.hidden_dim, config.output_dim, config.master_seed);
  std::vector<EncoderParams> models;
  for (auto objective : config.objectives) {
    EncoderParams p = base;
    if (objective == Objective::kCE) attach_head(p, data.num_classes, config.master_seed);
    models.push_back(std::move(p));
  }
  trace.initial = models;

  auto record = [&](int t, const EncoderBatch& batch) {
    const Eigen::MatrixXd z_cl = embed(models[0], probe, config.metric_layer);
    for (std::size_t k = 0; k < models.size(); ++k) {
      EncoderRecord r;
      r.epoch = t / per_epoch;
      r.step = t;
      r.objective = config.objectives[k];
      r.loss = loss_and_grad(r.objective, models[k], batch, config.tau).loss;
      if (k > 0) {
        const Eigen::MatrixXd z = embed(models[k], probe, config.metric_layer);
        r.e_t = weight_distance(models[0], models[k]);
        r.relative_gap = relative_layer_gap(models[0], models[k]);
        r.cka = metrics::linear_cka(z_cl, z);
        r.rsa = metrics::rsa(z_cl, z);
      }
      trace.records.push_back(r);
    }
  };

  for (int t = 0; t <= horizon; ++t) {
    const auto draw = draw_batch(data, config.batch_size, t, config.master_seed);
    const auto batch = make_encoder_batch(data, run_kernel, draw);
    if (t % per_epoch == 0 || t == horizon) record(t, batch);
    if (t == horizon) break;
    for (std::size_t k = 0; k < models.size(); ++k) {
      const auto lg = loss_and_grad(config.objectives[k], models[k], batch, config.tau);
      models[k].axpy(-etas[t], lg.grad);
    }
  }
  trace.final_params = std::move(models);
  return trace;
}

void write_encoder_trace_csv(const CoupledEncoderTrace& trace, std::ostream& out) {
  out << "epoch,objective,e_t,relative_weight_gap,cka_vs_cl,rsa_vs_cl,loss\n";
  for (const auto& r : trace.records) {
    out << r.epoch << ',' << to_string(r.objective) << ',' << fmt_double(r.e_t) << ','
        << fmt_double(r.relative_gap) << ',' << fmt_double(r.cka) << ',' << fmt_double(r.rsa)
        << ',' << fmt_double(r.loss) << '\n';
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'L', 'A', 'E', 'N', 'C', 'O', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void write_layer(std::ostream& out, const Layer& layer) {
  write_pod(out, static_cast<std::uint32_t>(layer.weight.rows()));
  write_pod(out, static_cast<std::uint32_t>(layer.weight.cols()));
  write_pod(out, static_cast<std::uint8_t>(layer.activation == Activation::kTanh ? 1 : 0));
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) write_pod(out, layer.weight(i, j));
  }
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) write_pod(out, layer.bias[i]);
}

Layer read_layer(std::istream& in) {
  const auto rows = read_pod<std::uint32_t>(in);
  const auto cols = read_pod<std::uint32_t>(in);
  const auto act = read_pod<std::uint8_t>(in);
  if (act > 1) throw std::runtime_error("checkpoint: bad activation tag");
  Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows),
              act == 1 ? Activation::kTanh : Activation::kIdentity};
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = read_pod<double>(in);
  }
  for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = read_pod<double>(in);
  return layer;
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& layer : params.layers) write_layer(out, layer);
  write_pod(out, static_cast<std::uint8_t>(params.head ? 1 : 0));
  if (params.head) write_layer(out, *params.head);
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw std::runtime_error("not an encoder checkpoint: " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  EncoderParams params;
  const auto count = read_pod<std::uint32_t>(in);
  for (std::uint32_t l = 0; l < count; ++l) params.layers.push_back(read_layer(in));
  if (read_pod<std::uint8_t>(in) == 1) params.head = read_layer(in);
  return params;
}

}  // namespace clalign
