#pragma once

// Fully connected attack detector: ReLU hidden layers, two-way softmax
// output, per-feature input standardisation stored with the weights.
//
// Activations are kept column-major as (features x batch) so every layer is
// one GEMM. Backpropagation is written out by hand; input_gradient reuses the
// same backward pass and carries the gradient through the standardisation,
// so attacks differentiate the whole model boundary.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtdgrid/error.hpp"
#include "mtdgrid/random.hpp"

namespace mtdgrid {

inline constexpr double kProbabilityClip = 1e-7;

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

/// Hidden widths used for the bundled cases, keyed by input size.
inline std::vector<int> default_layer_sizes(int input) {
  if (input <= 60) return {input, 100, 50, 25, 2};
  if (input <= 120) return {input, 200, 100, 50, 2};
  return {input, 800, 400, 100, 2};
}

class Mlp {
 public:
  Mlp() = default;

  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); identity
  /// standardisation.
  static Mlp init(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw PreconditionError("an MLP needs at least two layer sizes");
    for (int s : sizes)
      if (s < 1) throw PreconditionError("layer sizes must be positive");
    if (sizes.back() != 2) throw PreconditionError("detector output layer must have 2 units");
    Mlp m;
    m.sizes_ = sizes;
    Rng rng = make_rng(seed);
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[k]));
      std::uniform_real_distribution<double> u(-bound, bound);
      DenseLayer layer;
      layer.w.resize(sizes[k + 1], sizes[k]);
      layer.b.resize(sizes[k + 1]);
      for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.w.cols(); ++j) layer.w(i, j) = u(rng);
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b[i] = u(rng);
      m.layers_.push_back(std::move(layer));
    }
    m.mean_ = Eigen::VectorXd::Zero(sizes.front());
    m.scale_ = Eigen::VectorXd::Ones(sizes.front());
    return m;
  }

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  int input_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const Eigen::VectorXd& mean() const noexcept { return mean_; }
  const Eigen::VectorXd& scale() const noexcept { return scale_; }  // feature std

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  /// Fits mean/std per feature on rows of `z`. Constant features get std 1.
  void fit_standardization(const Eigen::MatrixXd& z) {
    if (z.cols() != input_size()) throw PreconditionError("standardisation: width mismatch");
    mean_ = z.colwise().mean().transpose();
    scale_.resize(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double var = (z.col(j).array() - mean_[j]).square().mean();
      scale_[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  }

  void set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale) {
    if (mean.size() != input_size() || scale.size() != input_size())
      throw PreconditionError("standardisation: width mismatch");
    mean_ = std::move(mean);
    scale_ = std::move(scale);
  }

  /// Flat parameter vector: per layer, W row-major then b.
  Eigen::VectorXd flat() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.w.rows(); ++i)
        for (Eigen::Index j = 0; j < l.w.cols(); ++j) v[k++] = l.w(i, j);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) v[k++] = l.b[i];
    }
    return v;
  }

  void set_flat(const Eigen::VectorXd& v) {
    if (v.size() != static_cast<Eigen::Index>(parameter_count()))
      throw PreconditionError("set_flat: parameter count mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.w.rows(); ++i)
        for (Eigen::Index j = 0; j < l.w.cols(); ++j) l.w(i, j) = v[k++];
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = v[k++];
    }
  }

  // Forward ------------------------------------------------------------------

  /// Standardised inputs, (features x batch), from measurement rows.
  Eigen::MatrixXd standardize(const Eigen::MatrixXd& rows) const {
    check_width(rows.cols());
    return ((rows.rowwise() - mean_.transpose()).array().rowwise() /
            scale_.transpose().array())
        .matrix()
        .transpose();
  }

  /// Logits for each row of `rows`; result is batch x 2.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& rows) const {
    Tape tape;
    forward(standardize(rows), tape);
    return tape.acts.back().transpose();
  }

  Eigen::Vector2d logits(const Eigen::VectorXd& z) const {
    const Eigen::MatrixXd out = logits(Eigen::MatrixXd(z.transpose()));
    return out.row(0).transpose();
  }

  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& rows) const {
    return softmax_rows(logits(rows));
  }

  Eigen::Vector2d probabilities(const Eigen::VectorXd& z) const {
    const Eigen::MatrixXd p = softmax_rows(Eigen::MatrixXd(logits(z).transpose()));
    return p.row(0).transpose();
  }

  /// argmax label; ties (equal logits) resolve to 0.
  int predict(const Eigen::VectorXd& z) const {
    const Eigen::Vector2d r = logits(z);
    return r[1] > r[0] ? 1 : 0;
  }

  std::vector<int> predict(const Eigen::MatrixXd& rows) const {
    const Eigen::MatrixXd r = logits(rows);
    std::vector<int> out(static_cast<std::size_t>(r.rows()));
    for (Eigen::Index i = 0; i < r.rows(); ++i) out[i] = r(i, 1) > r(i, 0) ? 1 : 0;
    return out;
  }

  /// Mean binary cross-entropy with f = P(class 1) clipped to [1e-7, 1 - 1e-7].
  double loss(const Eigen::MatrixXd& rows, const std::vector<int>& labels) const {
    if (static_cast<Eigen::Index>(labels.size()) != rows.rows())
      throw PreconditionError("loss: label count differs from row count");
    const Eigen::MatrixXd p = probabilities(rows);
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) total += cross_entropy(p(i, 1), labels[i]);
    return total / static_cast<double>(p.rows());
  }

  // Gradients -----------------------------------------------------------------

  /// d(scalar)/dz where scalar = fn(logits) and fn returns its value and
  /// gradient with respect to the two logits.
  using LogitFunction = std::function<std::pair<double, Eigen::Vector2d>(const Eigen::Vector2d&)>;

  Eigen::VectorXd input_gradient(const Eigen::VectorXd& z, const LogitFunction& fn,
                                 double* value = nullptr) const {
    Tape tape;
    forward(standardize(Eigen::MatrixXd(z.transpose())), tape);
    const Eigen::Vector2d r = tape.acts.back().col(0);
    const auto [v, dr] = fn(r);
    if (value) *value = v;
    const Eigen::MatrixXd g = backward_input(tape, Eigen::MatrixXd(dr));
    return g.col(0).cwiseQuotient(scale_);
  }

  /// Batched form: `dlogits` is batch x 2 (gradient of a per-row scalar);
  /// returns batch x M. Also returns the logits through `out_logits`.
  Eigen::MatrixXd input_gradients(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& dlogits) const {
    Tape tape;
    forward(standardize(rows), tape);
    Eigen::MatrixXd g = backward_input(tape, dlogits.transpose());
    return (g.array().colwise() / scale_.array()).matrix().transpose();
  }

  /// Forward pass that keeps the tape for a later input_gradients_from call.
  struct Tape {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = standardised input, last = logits
  };

  Eigen::MatrixXd logits_with_tape(const Eigen::MatrixXd& rows, Tape& tape) const {
    forward(standardize(rows), tape);
    return tape.acts.back().transpose();
  }

  Eigen::MatrixXd input_gradients_from(const Tape& tape, const Eigen::MatrixXd& dlogits) const {
    Eigen::MatrixXd g = backward_input(tape, dlogits.transpose());
    return (g.array().colwise() / scale_.array()).matrix().transpose();
  }

  /// Parameter gradients of sum over the batch of (dlogits . logits), given
  /// a tape. Returned in layer order.
  std::vector<DenseLayer> parameter_gradients(const Tape& tape, Eigen::MatrixXd delta) const {
    std::vector<DenseLayer> grads(layers_.size());
    for (std::size_t k = layers_.size(); k-- > 0;) {
      grads[k].w.noalias() = delta * tape.acts[k].transpose();
      grads[k].b = delta.rowwise().sum();
      if (k == 0) break;
      Eigen::MatrixXd back = layers_[k].w.transpose() * delta;
      delta = (tape.acts[k].array() > 0.0).select(back, 0.0);
    }
    return grads;
  }

  static Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
      p.row(i) = e / e.sum();
    }
    return p;
  }

  static double cross_entropy(double f, int y) {
    const double fc = std::clamp(f, kProbabilityClip, 1.0 - kProbabilityClip);
    return y == 1 ? -std::log(fc) : -std::log(1.0 - fc);
  }

  // Serialisation ---------------------------------------------------------------

  void save(std::ostream& os) const {
    os << "mtdgrid-mlp 1\nlayers";
    for (int s : sizes_) os << ' ' << s;
    os << '\n' << std::setprecision(17);
    auto write_vec = [&](const char* tag, const Eigen::VectorXd& v) {
      os << tag;
      for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << v[i];
      os << '\n';
    };
    write_vec("mean", mean_);
    write_vec("scale", scale_);
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      os << "layer " << k << '\n';
      for (Eigen::Index i = 0; i < layers_[k].w.rows(); ++i) {
        for (Eigen::Index j = 0; j < layers_[k].w.cols(); ++j) os << (j ? " " : "") << layers_[k].w(i, j);
        os << '\n';
      }
      write_vec("bias", layers_[k].b);
    }
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write model " + path);
    save(f);
  }

  static Mlp load(std::istream& is) {
    std::size_t lineno = 0;
    std::string line;
    auto next = [&]() -> std::istringstream {
      if (!std::getline(is, line)) throw ParseError(lineno + 1, "unexpected end of model file");
      ++lineno;
      return std::istringstream(line);
    };
    auto expect = [&](std::istringstream& ss, const std::string& word) {
      std::string w;
      if (!(ss >> w) || w != word) throw ParseError(lineno, "expected '" + word + "'");
    };
    auto read_values = [&](std::istringstream& ss, Eigen::Index n) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i)
        if (!(ss >> v[i])) throw ParseError(lineno, "expected " + std::to_string(n) + " values");
      std::string extra;
      if (ss >> extra) throw ParseError(lineno, "trailing data");
      return v;
    };

    auto header = next();
    int version = 0;
    expect(header, "mtdgrid-mlp");
    if (!(header >> version) || version != 1) throw ParseError(lineno, "unsupported model version");
    auto ls = next();
    expect(ls, "layers");
    std::vector<int> sizes;
    for (int s; ls >> s;) sizes.push_back(s);
    if (sizes.size() < 2 || sizes.back() != 2) throw ParseError(lineno, "bad layer sizes");
    Mlp m = init(sizes, 0);
    auto ms = next();
    expect(ms, "mean");
    m.mean_ = read_values(ms, sizes.front());
    auto ss = next();
    expect(ss, "scale");
    m.scale_ = read_values(ss, sizes.front());
    for (std::size_t k = 0; k < m.layers_.size(); ++k) {
      auto lh = next();
      expect(lh, "layer");
      DenseLayer& l = m.layers_[k];
      for (Eigen::Index i = 0; i < l.w.rows(); ++i) {
        auto row = next();
        l.w.row(i) = read_values(row, l.w.cols()).transpose();
      }
      auto bs = next();
      expect(bs, "bias");
      l.b = read_values(bs, l.b.size());
    }
    return m;
  }

  static Mlp load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open model " + path);
    return load(f);
  }

 private:
  void check_width(Eigen::Index cols) const {
    if (cols != input_size())
      throw PreconditionError("input width " + std::to_string(cols) + " differs from model input " +
                              std::to_string(input_size()));
  }

  void forward(Eigen::MatrixXd x, Tape& tape) const {
    if (!x.allFinite()) throw PreconditionError("non-finite detector input");
    tape.acts.clear();
    tape.acts.push_back(std::move(x));
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Eigen::MatrixXd a = layers_[k].w * tape.acts.back();
      a.colwise() += layers_[k].b;
      if (k + 1 < layers_.size()) a = a.cwiseMax(0.0);
      tape.acts.push_back(std::move(a));
    }
  }

  // Gradient w.r.t. the standardised input. ReLU derivative is 0 at 0.
  Eigen::MatrixXd backward_input(const Tape& tape, Eigen::MatrixXd delta) const {
    for (std::size_t k = layers_.size(); k-- > 0;) {
      Eigen::MatrixXd back = layers_[k].w.transpose() * delta;
      if (k == 0) return back;
      delta = (tape.acts[k].array() > 0.0).select(back, 0.0);
    }
    return delta;
  }

  std::vector<int> sizes_;
  std::vector<DenseLayer> layers_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

// Training --------------------------------------------------------------------

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double validation_fraction = 0.1;
  bool fit_standardization = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
        !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0) ||
        !(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw PreconditionError("invalid training configuration");
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

inline double accuracy(const Mlp& model, const Eigen::MatrixXd& rows, const std::vector<int>& labels) {
  if (rows.rows() == 0) return 0.0;
  const std::vector<int> pred = model.predict(rows);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

/// Adam on softmax cross-entropy. The last validation_fraction of a seeded
/// permutation is held out for the reported validation accuracy.
inline TrainReport train(Mlp& model, const Eigen::MatrixXd& rows, const std::vector<int>& labels,
                         const TrainConfig& config) {
  config.validate();
  const Eigen::Index n = rows.rows();
  if (n == 0) throw PreconditionError("training set is empty");
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw PreconditionError("label count differs from row count");
  if (std::find(labels.begin(), labels.end(), 0) == labels.end() ||
      std::find(labels.begin(), labels.end(), 1) == labels.end())
    throw PreconditionError("training set must contain both classes");

  Rng rng = make_rng(config.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<Eigen::Index>(std::floor(config.validation_fraction * n));
  const Eigen::Index n_train = n - n_val;
  if (n_train < 1) throw PreconditionError("no training rows after validation split");

  Eigen::MatrixXd train_rows(n_train, rows.cols()), val_rows(n_val, rows.cols());
  std::vector<int> train_labels(n_train), val_labels(n_val);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    if (i < n_train) {
      train_rows.row(i) = rows.row(src);
      train_labels[i] = labels[src];
    } else {
      val_rows.row(i - n_train) = rows.row(src);
      val_labels[i - n_train] = labels[src];
    }
  }
  if (config.fit_standardization) model.fit_standardization(train_rows);
  const Eigen::MatrixXd x_all = model.standardize(train_rows);  // features x n_train

  auto& layers = model.layers();
  std::vector<DenseLayer> m1(layers.size()), m2(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    m1[k].w = m2[k].w = Eigen::MatrixXd::Zero(layers[k].w.rows(), layers[k].w.cols());
    m1[k].b = m2[k].b = Eigen::VectorXd::Zero(layers[k].b.size());
  }

  TrainReport report;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_train));
  std::iota(idx.begin(), idx.end(), 0);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n_train; start += config.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n_train - start);
      Eigen::MatrixXd xb(x_all.rows(), bs);
      for (Eigen::Index j = 0; j < bs; ++j) xb.col(j) = x_all.col(idx[start + j]);

      Mlp::Tape tape;
      tape.acts.push_back(std::move(xb));
      for (std::size_t k = 0; k < layers.size(); ++k) {
        Eigen::MatrixXd a = layers[k].w * tape.acts.back();
        a.colwise() += layers[k].b;
        if (k + 1 < layers.size()) a = a.cwiseMax(0.0);
        tape.acts.push_back(std::move(a));
      }
      const Eigen::MatrixXd p = Mlp::softmax_rows(tape.acts.back().transpose());  // bs x 2
      Eigen::MatrixXd delta = p.transpose();                                       // 2 x bs
      for (Eigen::Index j = 0; j < bs; ++j) {
        const int y = train_labels[idx[start + j]];
        epoch_loss += Mlp::cross_entropy(p(j, 1), y);
        delta(y, j) -= 1.0;
      }
      delta /= static_cast<double>(bs);
      const auto grads = model.parameter_gradients(tape, std::move(delta));

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const double lr = config.learning_rate * std::sqrt(c2) / c1;
      for (std::size_t k = 0; k < layers.size(); ++k) {
        m1[k].w = config.beta1 * m1[k].w + (1.0 - config.beta1) * grads[k].w;
        m2[k].w = config.beta2 * m2[k].w + (1.0 - config.beta2) * grads[k].w.cwiseAbs2();
        m1[k].b = config.beta1 * m1[k].b + (1.0 - config.beta1) * grads[k].b;
        m2[k].b = config.beta2 * m2[k].b + (1.0 - config.beta2) * grads[k].b.cwiseAbs2();
        const double eps_hat = config.adam_eps * std::sqrt(c2);
        layers[k].w.array() -= lr * m1[k].w.array() / (m2[k].w.array().sqrt() + eps_hat);
        layers[k].b.array() -= lr * m1[k].b.array() / (m2[k].b.array().sqrt() + eps_hat);
      }
    }
    epoch_loss /= static_cast<double>(n_train);
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
    report.epoch_loss.push_back(epoch_loss);
  }
  report.train_accuracy = accuracy(model, train_rows, train_labels);
  report.validation_accuracy = n_val > 0 ? accuracy(model, val_rows, val_labels) : report.train_accuracy;
  return report;
}

}  // namespace mtdgrid
