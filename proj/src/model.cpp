#include "ulab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "ulab/errors.hpp"
#include "ulab/rng.hpp"

namespace ulab {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr char kMagic[8] = {'U', 'L', 'A', 'B', '0', '0', '0', '1'};

void apply_activation(Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::kRelu) z = z.cwiseMax(0.0);
}

}  // namespace

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    n += static_cast<std::size_t>(l.weights.size()) + static_cast<std::size_t>(l.bias.size());
  }
  return n;
}

ClassifierModel init_model(const std::vector<int>& arch, std::uint64_t seed, Activation activation) {
  if (arch.size() < 2) {
    throw ConfigError("init_model: architecture needs at least an input and an output size");
  }
  for (int s : arch) {
    if (s < 1) throw ConfigError("init_model: layer sizes must be >= 1");
  }
  ClassifierModel m;
  m.activation = activation;
  m.num_classes = arch.back();
  m.seed = seed;
  rng::Prng prng(seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const int fan_in = arch[l];
    const int fan_out = arch[l + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Layer layer;
    layer.weights.resize(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i) {
      for (int j = 0; j < fan_in; ++j) {
        layer.weights(i, j) = prng.uniform(-a, a);
      }
    }
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Eigen::VectorXd forward(const ClassifierModel& m, const Eigen::VectorXd& x) {
  if (m.layers.empty()) throw UsageError("forward: empty model");
  if (x.size() != m.input_dim()) {
    throw ShapeError("forward: input size " + std::to_string(x.size()) + " != model input dim " +
                     std::to_string(m.input_dim()));
  }
  if (!x.allFinite()) throw UsageError("forward: non-finite input");
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Eigen::VectorXd z = m.layers[l].weights * a + m.layers[l].bias;
    if (l + 1 < m.layers.size() && m.activation == Activation::kRelu) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd forward_batch(const ClassifierModel& m, const Eigen::MatrixXd& x) {
  if (m.layers.empty()) throw UsageError("forward_batch: empty model");
  if (x.cols() != m.input_dim()) {
    throw ShapeError("forward_batch: input dim " + std::to_string(x.cols()) +
                     " != model input dim " + std::to_string(m.input_dim()));
  }
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Eigen::MatrixXd z = (a * m.layers[l].weights.transpose()).rowwise() + m.layers[l].bias.transpose();
    if (l + 1 < m.layers.size()) apply_activation(z, m.activation);
    a = std::move(z);
  }
  return a;
}

ProbVector softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw UsageError("softmax: empty logits");
  if (!logits.allFinite()) throw UsageError("softmax: non-finite logits");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp();
  return make_prob(e / e.sum());
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

namespace {

struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input, one per layer after
  std::vector<Eigen::MatrixXd> pre_acts;     // z per layer
};

ForwardTrace forward_trace(const ClassifierModel& m, const Eigen::MatrixXd& x) {
  ForwardTrace t;
  t.activations.reserve(m.layers.size() + 1);
  t.pre_acts.reserve(m.layers.size());
  t.activations.push_back(x);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Eigen::MatrixXd z =
        (t.activations.back() * m.layers[l].weights.transpose()).rowwise() + m.layers[l].bias.transpose();
    t.pre_acts.push_back(z);
    if (l + 1 < m.layers.size()) apply_activation(z, m.activation);
    t.activations.push_back(std::move(z));
  }
  return t;
}

}  // namespace

std::pair<double, Gradients> loss_and_grad(const ClassifierModel& m, const Eigen::MatrixXd& batch,
                                           const Eigen::MatrixXd& targets,
                                           const Eigen::VectorXd* sample_weights) {
  if (batch.rows() == 0) throw UsageError("loss_and_grad: empty batch");
  if (batch.rows() != targets.rows()) {
    throw ShapeError("loss_and_grad: batch rows != target rows");
  }
  if (targets.cols() != m.num_classes) {
    throw ShapeError("loss_and_grad: target length != number of classes");
  }
  if (sample_weights != nullptr && sample_weights->size() != batch.rows()) {
    throw ShapeError("loss_and_grad: weight length != batch rows");
  }
  for (Eigen::Index r = 0; r < targets.rows(); ++r) {
    if (std::abs(targets.row(r).sum() - 1.0) > 1e-6) {
      throw UsageError("loss_and_grad: target row " + std::to_string(r) + " is not a distribution");
    }
  }

  const auto n = static_cast<double>(batch.rows());
  ForwardTrace trace = forward_trace(m, batch);
  Eigen::MatrixXd probs = softmax_rows(trace.pre_acts.back());

  const Eigen::ArrayXd per_sample =
      -(targets.array() * probs.array().max(kProbFloor).min(1.0).log()).rowwise().sum();
  const double loss = sample_weights != nullptr
                          ? (per_sample * sample_weights->array()).sum()
                          : per_sample.sum() / n;

  Gradients g;
  g.layers.resize(m.layers.size());
  // Softmax cross-entropy: dL/dz = w * (p - q) at the output layer, with
  // w = 1/n in the unweighted case.
  Eigen::MatrixXd delta = probs - targets;
  if (sample_weights != nullptr) {
    delta.array().colwise() *= sample_weights->array();
  } else {
    delta /= n;
  }
  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    g.layers[lu].weights = delta.transpose() * trace.activations[lu];
    g.layers[lu].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = delta * m.layers[lu].weights;
      if (m.activation == Activation::kRelu) {
        delta.array() *= (trace.pre_acts[lu - 1].array() > 0.0).cast<double>();
      }
    }
  }
  return {loss, std::move(g)};
}

namespace detail {

std::vector<double> run_sgd(ClassifierModel& model, const Eigen::MatrixXd& data,
                            const Eigen::MatrixXd& targets, double learning_rate, int epochs,
                            int batch_size, std::uint64_t seed, bool shuffle,
                            const std::vector<char>* layer_mask, bool ascend, double clip_norm,
                            const Eigen::VectorXd* sample_weights) {
  if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("training: batch size must be >= 1");
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
    throw ConfigError("training: learning rate must be finite and >= 0");
  }
  if (data.rows() == 0) throw UsageError("training: empty dataset");
  if (data.rows() != targets.rows()) throw ShapeError("training: data/target row mismatch");
  if (layer_mask != nullptr && layer_mask->size() != model.layers.size()) {
    throw ShapeError("training: layer mask size mismatch");
  }
  if (sample_weights != nullptr && sample_weights->size() != data.rows()) {
    throw ShapeError("training: weight length mismatch");
  }

  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<std::size_t> order(n);
  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(epochs));

  Eigen::MatrixXd bx, bt;
  Eigen::VectorXd bw;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle) {
      rng::Prng prng(rng::mix(seed, static_cast<std::uint64_t>(epoch)));
      prng.shuffle(order);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t len = std::min(static_cast<std::size_t>(batch_size), n - start);
      bx.resize(static_cast<Eigen::Index>(len), data.cols());
      bt.resize(static_cast<Eigen::Index>(len), targets.cols());
      if (sample_weights != nullptr) bw.resize(static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        bx.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(order[start + i]));
        bt.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(order[start + i]));
        if (sample_weights != nullptr) {
          bw(static_cast<Eigen::Index>(i)) = (*sample_weights)(static_cast<Eigen::Index>(order[start + i]));
        }
      }
      auto [loss, grads] =
          loss_and_grad(model, bx, bt, sample_weights != nullptr ? &bw : nullptr);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged (non-finite loss) at epoch " +
                              std::to_string(epoch));
      }
      loss_sum += loss;
      ++batches;

      double scale = 1.0;
      if (clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& gl : grads.layers) {
          sq += gl.weights.squaredNorm() + gl.bias.squaredNorm();
        }
        const double norm = std::sqrt(sq);
        if (norm > clip_norm) scale = clip_norm / norm;
      }
      const double step = (ascend ? learning_rate : -learning_rate) * scale;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (layer_mask != nullptr && !(*layer_mask)[l]) continue;
        model.layers[l].weights += step * grads.layers[l].weights;
        model.layers[l].bias += step * grads.layers[l].bias;
      }
    }
    // Weighted batches already carry their share of the objective; summing
    // them reconstructs the full weighted loss for the epoch.
    epoch_losses.push_back(sample_weights != nullptr ? loss_sum
                                                     : loss_sum / static_cast<double>(batches));
  }
  return epoch_losses;
}

}  // namespace detail

TrainResult train_epochs(ClassifierModel model, const Eigen::MatrixXd& data,
                         const Eigen::MatrixXd& targets, const TrainConfig& cfg) {
  TrainResult r;
  r.epoch_losses = detail::run_sgd(model, data, targets, cfg.learning_rate, cfg.epochs,
                                   cfg.batch_size, cfg.seed, cfg.shuffle);
  r.model = std::move(model);
  return r;
}

int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

double eval_accuracy(const ClassifierModel& m, const Eigen::MatrixXd& features,
                     const Eigen::VectorXi& labels) {
  if (features.rows() == 0) throw UsageError("eval_accuracy: empty subset");
  if (features.rows() != labels.size()) throw ShapeError("eval_accuracy: feature/label mismatch");
  const Eigen::MatrixXd logits = forward_batch(m, features);
  Eigen::Index correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (argmax_lowest(logits.row(r).transpose()) == labels(r)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.rows());
}

Eigen::MatrixXd to_target_matrix(const std::vector<ProbVector>& targets) {
  if (targets.empty()) throw UsageError("to_target_matrix: empty target list");
  const int k = targets.front().size();
  Eigen::MatrixXd t(static_cast<Eigen::Index>(targets.size()), k);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() != k) throw ShapeError("to_target_matrix: inconsistent target lengths");
    t.row(static_cast<Eigen::Index>(i)) = targets[i].mass.transpose();
  }
  return t;
}

namespace {

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64le(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

std::uint32_t get_u32le(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
  }
  return v;
}

double get_f64le(const std::string& in, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_model(const ClassifierModel& m, const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32le(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& layer : m.layers) {
    put_u32le(out, static_cast<std::uint32_t>(layer.weights.rows()));
    put_u32le(out, static_cast<std::uint32_t>(layer.weights.cols()));
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j) {
        put_f64le(out, layer.weights(i, j));
      }
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) put_f64le(out, layer.bias(i));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("save_model: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("save_model: write failed for " + path.string());
}

ClassifierModel load_model(const std::filesystem::path& path, Activation activation) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_model: cannot open " + path.string());
  std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  std::size_t off = 0;
  auto need = [&](std::size_t bytes, const char* what) {
    if (in.size() - off < bytes) {
      throw FormatError("load_model: truncated " + std::string(what) + " at byte " +
                        std::to_string(off) + " in " + path.string());
    }
  };
  need(sizeof(kMagic), "magic");
  if (std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("load_model: bad magic at byte 0 in " + path.string());
  }
  off = sizeof(kMagic);
  need(4, "layer count");
  const std::uint32_t layer_count = get_u32le(in, off);
  off += 4;
  if (layer_count == 0) throw FormatError("load_model: zero layers in " + path.string());

  ClassifierModel m;
  m.activation = activation;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    need(8, "layer header");
    const std::uint32_t rows = get_u32le(in, off);
    const std::uint32_t cols = get_u32le(in, off + 4);
    off += 8;
    if (rows == 0 || cols == 0) {
      throw FormatError("load_model: zero-sized layer at byte " + std::to_string(off - 8));
    }
    if (!m.layers.empty() &&
        static_cast<Eigen::Index>(cols) != m.layers.back().weights.rows()) {
      throw FormatError("load_model: layer dimensions do not chain at byte " +
                        std::to_string(off - 8));
    }
    Layer layer;
    layer.weights.resize(rows, cols);
    const std::size_t wbytes = static_cast<std::size_t>(rows) * cols * 8;
    need(wbytes + static_cast<std::size_t>(rows) * 8, "layer payload");
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        layer.weights(i, j) = get_f64le(in, off);
        off += 8;
      }
    }
    layer.bias.resize(rows);
    for (std::uint32_t i = 0; i < rows; ++i) {
      layer.bias(i) = get_f64le(in, off);
      off += 8;
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw FormatError("load_model: non-finite parameters in " + path.string());
    }
    m.layers.push_back(std::move(layer));
  }
  if (off != in.size()) {
    throw FormatError("load_model: trailing bytes at byte " + std::to_string(off) + " in " +
                      path.string());
  }
  m.num_classes = static_cast<int>(m.layers.back().weights.rows());
  m.seed = 0;
  return m;
}

bool models_equal(const ClassifierModel& a, const ClassifierModel& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weights.rows() != b.layers[l].weights.rows() ||
        a.layers[l].weights.cols() != b.layers[l].weights.cols()) {
      return false;
    }
    if (std::memcmp(a.layers[l].weights.data(), b.layers[l].weights.data(),
                    static_cast<std::size_t>(a.layers[l].weights.size()) * sizeof(double)) != 0) {
      return false;
    }
    if (std::memcmp(a.layers[l].bias.data(), b.layers[l].bias.data(),
                    static_cast<std::size_t>(a.layers[l].bias.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace ulab
