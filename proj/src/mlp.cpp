#include "selena/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace selena {

namespace {

constexpr double kProbFloor = 1e-12;

void apply_activation(Matrix& z, Activation act) {
  if (act == Activation::kTanh) {
    z = z.array().tanh();
  } else {
    z = z.cwiseMax(Scalar(0));
  }
}

// Derivative expressed through the activation output h.
Matrix activation_grad(const Matrix& h, Activation act) {
  if (act == Activation::kTanh) return (1.0 - h.array().square()).matrix();
  return (h.array() > 0.0).cast<Scalar>().matrix();
}

void check_finite(const Mlp& net, int epoch, int batch) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (!net.weights[l].allFinite() || !net.biases[l].allFinite()) {
      std::ostringstream msg;
      msg << "train: non-finite parameters in layer " << l << " after epoch " << epoch
          << " batch " << batch;
      throw Error(msg.str());
    }
  }
}

}  // namespace

std::string activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw Error("unknown activation: " + s);
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw Error("unknown optimizer: " + s);
}

Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix p = logits;
  p.colwise() -= p.rowwise().maxCoeff();
  p = p.array().exp();
  const Vector sums = p.rowwise().sum();
  p.array().colwise() /= sums.array();
  return p;
}

Index argmax_lowest(const Eigen::Ref<const Vector>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double soft_cross_entropy(const Eigen::Ref<const Matrix>& probs,
                          const Eigen::Ref<const Matrix>& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw Error("soft_cross_entropy: shape mismatch");
  }
  const double total =
      -(targets.array() * probs.array().max(kProbFloor).log()).sum();
  return total / static_cast<double>(probs.rows());
}

Matrix one_hot(const std::vector<int>& labels, int n_classes) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) {
      std::ostringstream msg;
      msg << "one_hot: label " << labels[i] << " outside [0, " << n_classes << ") at row " << i;
      throw Error(msg.str());
    }
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

Matrix Mlp::predict_batch(const Eigen::Ref<const Matrix>& X) const {
  if (weights.empty()) throw Error("predict: untrained model");
  if (X.cols() != n_in()) {
    std::ostringstream msg;
    msg << "predict: input has " << X.cols() << " features, model expects " << n_in();
    throw Error(msg.str());
  }
  Matrix h = X;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix z = h * weights[l].transpose();
    z.rowwise() += biases[l].transpose();
    if (l + 1 < weights.size()) apply_activation(z, activation);
    h = std::move(z);
  }
  return softmax_rows(h);
}

Vector Mlp::predict(const Eigen::Ref<const Vector>& x) const {
  Matrix row(1, x.size());
  row.row(0) = x.transpose();
  return predict_batch(row).row(0).transpose();
}

Mlp train_soft(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& targets,
               const TrainConfig& cfg, const EpochCallback& on_epoch, TrainStats* stats) {
  const Index n = X.rows();
  const Index d = X.cols();
  const Index k = targets.cols();
  if (n == 0) throw Error("train: empty training set");
  if (targets.rows() != n) throw Error("train: feature/target row count mismatch");
  if (k < 2) throw Error("train: need at least 2 classes");
  if (cfg.epochs <= 0) throw Error("train: epochs must be positive");
  if (cfg.batch_size <= 0) throw Error("train: batch_size must be positive");
  if (cfg.batch_size > n) {
    std::ostringstream msg;
    msg << "train: batch_size " << cfg.batch_size << " exceeds training-set size " << n;
    throw Error(msg.str());
  }
  if (cfg.learning_rate <= 0) throw Error("train: learning_rate must be positive");
  for (int h : cfg.hidden_sizes) {
    if (h <= 0) throw Error("train: hidden sizes must be positive");
  }

  Rng rng(cfg.seed);

  std::vector<Index> dims;
  dims.push_back(d);
  for (int h : cfg.hidden_sizes) dims.push_back(h);
  dims.push_back(k);

  Mlp net;
  net.activation = cfg.activation;
  const std::size_t n_layers = dims.size() - 1;
  net.weights.resize(n_layers);
  net.biases.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Index fan_in = dims[l], fan_out = dims[l + 1];
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(fan_in));
    net.weights[l].resize(fan_out, fan_in);
    for (Index o = 0; o < fan_out; ++o) {
      for (Index i = 0; i < fan_in; ++i) net.weights[l](o, i) = rng.uniform(-bound, bound);
    }
    net.biases[l] = Vector::Zero(fan_out);
  }

  std::vector<Matrix> adam_mw, adam_vw;
  std::vector<Vector> adam_mb, adam_vb;
  if (cfg.optimizer == Optimizer::kAdam) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      adam_mw.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      adam_vw.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
      adam_mb.push_back(Vector::Zero(net.biases[l].size()));
      adam_vb.push_back(Vector::Zero(net.biases[l].size()));
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  long step = 0;
  std::vector<Matrix> h(n_layers + 1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    int batch_id = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batch_id) {
      const Index bs = std::min<Index>(cfg.batch_size, n - start);

      Matrix xb(bs, d), yb(bs, k);
      for (Index r = 0; r < bs; ++r) {
        const Index src = order[static_cast<std::size_t>(start + r)];
        xb.row(r) = X.row(src);
        yb.row(r) = targets.row(src);
      }

      h[0] = std::move(xb);
      for (std::size_t l = 0; l < n_layers; ++l) {
        Matrix z = h[l] * net.weights[l].transpose();
        z.rowwise() += net.biases[l].transpose();
        if (l + 1 < n_layers) apply_activation(z, cfg.activation);
        h[l + 1] = std::move(z);
      }
      Matrix p = softmax_rows(h[n_layers]);

      const double loss = soft_cross_entropy(p, yb);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " batch " << batch_id;
        throw Error(msg.str());
      }

      Matrix dz = (p - yb) / static_cast<Scalar>(bs);
      ++step;
      for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix gw = dz.transpose() * h[l];
        const Vector gb = dz.colwise().sum().transpose();
        if (l > 0) {
          const Matrix dh = dz * net.weights[l];
          dz = dh.cwiseProduct(activation_grad(h[l], cfg.activation));
        }
        if (cfg.optimizer == Optimizer::kSgd) {
          net.weights[l] -= cfg.learning_rate * gw;
          net.biases[l] -= cfg.learning_rate * gb;
        } else {
          const Scalar b1 = cfg.adam.beta1, b2 = cfg.adam.beta2;
          const Scalar corr1 = 1.0 - std::pow(b1, static_cast<Scalar>(step));
          const Scalar corr2 = 1.0 - std::pow(b2, static_cast<Scalar>(step));
          adam_mw[l] = b1 * adam_mw[l] + (1.0 - b1) * gw;
          adam_vw[l] = b2 * adam_vw[l] + (1.0 - b2) * gw.cwiseProduct(gw);
          adam_mb[l] = b1 * adam_mb[l] + (1.0 - b1) * gb;
          adam_vb[l] = b2 * adam_vb[l] + (1.0 - b2) * gb.cwiseProduct(gb);
          net.weights[l].array() -=
              cfg.learning_rate * (adam_mw[l].array() / corr1) /
              ((adam_vw[l].array() / corr2).sqrt() + cfg.adam.eps);
          net.biases[l].array() -=
              cfg.learning_rate * (adam_mb[l].array() / corr1) /
              ((adam_vb[l].array() / corr2).sqrt() + cfg.adam.eps);
        }
      }
      check_finite(net, epoch, batch_id);
    }
    if (stats) stats->epoch_loss.push_back(soft_cross_entropy(net.predict_batch(X), targets));
    if (on_epoch) on_epoch(epoch, net);
  }
  return net;
}

Mlp train_hard(const Eigen::Ref<const Matrix>& X, const std::vector<int>& labels, int n_classes,
               const TrainConfig& cfg, const EpochCallback& on_epoch, TrainStats* stats) {
  if (static_cast<Index>(labels.size()) != X.rows()) {
    throw Error("train: feature/label row count mismatch");
  }
  return train_soft(X, one_hot(labels, n_classes), cfg, on_epoch, stats);
}

namespace {

constexpr char kMlpMagic[4] = {'S', 'L', 'N', 'M'};
constexpr std::uint32_t kMlpVersion = 1;

template <class T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(std::string("load_mlp: truncated file reading ") + what);
  return v;
}

}  // namespace

void save_mlp(const Mlp& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_mlp: cannot open " + path.string());
  out.write(kMlpMagic, 4);
  write_raw(out, kMlpVersion);
  write_raw(out, static_cast<std::uint8_t>(model.activation));
  write_raw(out, static_cast<std::uint32_t>(model.weights.size()));
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const Matrix& w = model.weights[l];
    write_raw(out, static_cast<std::uint64_t>(w.rows()));
    write_raw(out, static_cast<std::uint64_t>(w.cols()));
    out.write(reinterpret_cast<const char*>(w.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(w.size())));
    const Vector& b = model.biases[l];
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(b.size())));
  }
  if (!out) throw Error("save_mlp: short write to " + path.string());
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_mlp: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMlpMagic, 4) != 0) {
    throw Error("load_mlp: " + path.string() + " is not a model parameter file");
  }
  const auto version = read_raw<std::uint32_t>(in, "version");
  if (version != kMlpVersion) {
    throw Error("load_mlp: unsupported format version in " + path.string());
  }
  Mlp model;
  model.activation = static_cast<Activation>(read_raw<std::uint8_t>(in, "activation"));
  const auto n_layers = read_raw<std::uint32_t>(in, "layer count");
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rows = static_cast<Index>(read_raw<std::uint64_t>(in, "rows"));
    const auto cols = static_cast<Index>(read_raw<std::uint64_t>(in, "cols"));
    Matrix w(rows, cols);
    in.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(w.size())));
    Vector b(rows);
    in.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(b.size())));
    if (!in) throw Error("load_mlp: truncated parameters in " + path.string());
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

std::uint64_t mlp_fingerprint(const Mlp& model) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(model.weights.size()));
  auto fold = [&h](const Scalar* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &data[i], 8);
      h = mix64(h ^ bits);
    }
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    fold(model.weights[l].data(), static_cast<std::size_t>(model.weights[l].size()));
    fold(model.biases[l].data(), static_cast<std::size_t>(model.biases[l].size()));
  }
  return h;
}

double accuracy(const Mlp& model, const Eigen::Ref<const Matrix>& X,
                const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != X.rows()) {
    throw Error("accuracy: feature/label row count mismatch");
  }
  if (X.rows() == 0) throw Error("accuracy: empty set");
  const Matrix p = model.predict_batch(X);
  Index hits = 0;
  for (Index i = 0; i < p.rows(); ++i) {
    if (argmax_lowest(p.row(i).transpose()) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

}  // namespace selena
