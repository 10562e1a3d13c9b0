#include "nicf/qnet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace nicf {

namespace {

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

void add_bias(Matrix& x, const Matrix& bias) { x.rowwise() += bias.row(0); }

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void check_shape(const QNetShape& s) {
  if (s.n_items < 1 || s.dim < 1 || s.blocks < 1 || s.max_rating < 1) {
    throw std::invalid_argument("QNetShape: all dimensions must be positive");
  }
}

std::string block_name(int rating, int block, const char* tensor) {
  return "channel" + std::to_string(rating) + ".block" + std::to_string(block) + "." + tensor;
}

}  // namespace

QNetParams QNetParams::zeros(const QNetShape& shape) {
  check_shape(shape);
  const int d = shape.dim;
  QNetParams p;
  p.shape = shape;
  p.embedding = Matrix::Zero(shape.n_items, d);
  p.channels.resize(static_cast<std::size_t>(shape.max_rating));
  for (auto& channel : p.channels) {
    channel.resize(static_cast<std::size_t>(shape.blocks));
    for (auto& b : channel) {
      b.query = Matrix::Zero(d, d);
      b.key = Matrix::Zero(d, d);
      b.value = Matrix::Zero(d, d);
      b.ffn_w1 = Matrix::Zero(d, d);
      b.ffn_b1 = Matrix::Zero(1, d);
      b.ffn_w2 = Matrix::Zero(d, d);
      b.ffn_b2 = Matrix::Zero(1, d);
    }
  }
  p.policy_w1 = Matrix::Zero(shape.max_rating * d, d);
  p.policy_b1 = Matrix::Zero(1, d);
  p.policy_w2 = Matrix::Zero(d, shape.n_items);
  p.policy_b2 = Matrix::Zero(1, shape.n_items);
  return p;
}

QNetParams QNetParams::init(const QNetShape& shape, std::uint64_t seed) {
  QNetParams p = zeros(shape);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  p.for_each([&](const std::string& name, Matrix& m) {
    const bool is_bias = name.find("_b") != std::string::npos;
    if (!is_bias) m = uniform_matrix(m.rows(), m.cols(), bound, rng);
  });
  return p;
}

void QNetParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("embedding", embedding);
  for (std::size_t z = 0; z < channels.size(); ++z) {
    for (std::size_t l = 0; l < channels[z].size(); ++l) {
      auto& b = channels[z][l];
      const int rating = static_cast<int>(z) + 1;
      const int block = static_cast<int>(l) + 1;
      fn(block_name(rating, block, "query"), b.query);
      fn(block_name(rating, block, "key"), b.key);
      fn(block_name(rating, block, "value"), b.value);
      fn(block_name(rating, block, "ffn_w1"), b.ffn_w1);
      fn(block_name(rating, block, "ffn_b1"), b.ffn_b1);
      fn(block_name(rating, block, "ffn_w2"), b.ffn_w2);
      fn(block_name(rating, block, "ffn_b2"), b.ffn_b2);
    }
  }
  fn("policy_w1", policy_w1);
  fn("policy_b1", policy_b1);
  fn("policy_w2", policy_w2);
  fn("policy_b2", policy_b2);
}

void QNetParams::for_each(
    const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<QNetParams*>(this)->for_each(
      [&](const std::string& name, Matrix& m) { fn(name, m); });
}

std::size_t QNetParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool QNetParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

Vector QNetParams::flatten() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for_each([&](const std::string&, const Matrix& m) {
    flat.segment(offset, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    offset += m.size();
  });
  return flat;
}

void QNetParams::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw std::invalid_argument("QNetParams::assign: size mismatch");
  }
  Eigen::Index offset = 0;
  for_each([&](const std::string&, Matrix& m) {
    Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(offset, m.size());
    offset += m.size();
  });
}

QNetParams& QNetParams::operator+=(const QNetParams& other) {
  if (!(shape == other.shape)) throw std::invalid_argument("QNetParams: shape mismatch");
  std::vector<const Matrix*> rhs;
  other.for_each([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
  std::size_t i = 0;
  for_each([&](const std::string&, Matrix& m) { m += *rhs[i++]; });
  return *this;
}

QNetParams& QNetParams::operator*=(double s) {
  for_each([&](const std::string&, Matrix& m) { m *= s; });
  return *this;
}

Matrix embed_channel(const QNetParams& params, const SupportState& state, int rating) {
  const auto& items = state.channel(rating);
  Matrix e(static_cast<Eigen::Index>(items.size()), params.shape.dim);
  for (std::size_t m = 0; m < items.size(); ++m) {
    e.row(static_cast<Eigen::Index>(m)) = params.embedding.row(items[m]);
  }
  return e;
}

Matrix attention(const Matrix& query, const Matrix& key, const Matrix& value, bool causal) {
  if (query.cols() != key.cols()) throw std::invalid_argument("attention: C/K width mismatch");
  if (key.rows() != value.rows()) throw std::invalid_argument("attention: K/V height mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  const Matrix logits = (query * key.transpose()) * scale;
  if (!causal) return softmax_rows(logits) * value;
  Mask mask(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = j <= i;
  }
  return softmax_rows(logits, &mask) * value;
}

Matrix ffn(const Matrix& x, const BlockParams& block) {
  Matrix pre = x * block.ffn_w1;
  add_bias(pre, block.ffn_b1);
  Matrix out = relu(pre) * block.ffn_w2;
  add_bias(out, block.ffn_b2);
  return out;
}

ForwardCache forward(const QNetParams& params, const SupportState& state) {
  const QNetShape& shape = params.shape;
  if (state.max_rating() != shape.max_rating) {
    throw std::invalid_argument("forward: state rating scale does not match the network");
  }
  const int d = shape.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  ForwardCache cache;
  cache.shape = shape;
  cache.channels.resize(static_cast<std::size_t>(shape.max_rating));
  cache.features = RowVector::Zero(shape.max_rating * d);

  for (int z = 1; z <= shape.max_rating; ++z) {
    ChannelCache& cc = cache.channels[static_cast<std::size_t>(z - 1)];
    cc.items = state.channel(z);
    if (cc.items.empty()) continue;
    for (int item : cc.items) {
      if (item < 0 || item >= shape.n_items) throw std::out_of_range("forward: item id out of range");
    }
    Matrix x = embed_channel(params, state, z);
    const Mask mask = causal_mask(x.rows());
    cc.blocks.resize(static_cast<std::size_t>(shape.blocks));
    for (int l = 0; l < shape.blocks; ++l) {
      const BlockParams& bp = params.channels[static_cast<std::size_t>(z - 1)][static_cast<std::size_t>(l)];
      BlockCache& bc = cc.blocks[static_cast<std::size_t>(l)];
      bc.input = std::move(x);
      bc.query = bc.input * bp.query;
      bc.key = bc.input * bp.key;
      bc.value = bc.input * bp.value;
      bc.weights = softmax_rows((bc.query * bc.key.transpose()) * scale, &mask);
      bc.attended = bc.weights * bc.value;
      bc.hidden_pre = bc.attended * bp.ffn_w1;
      add_bias(bc.hidden_pre, bp.ffn_b1);
      bc.output = relu(bc.hidden_pre) * bp.ffn_w2;
      add_bias(bc.output, bp.ffn_b2);
      x = bc.output;
    }
    cache.features.segment((z - 1) * d, d) = x.row(x.rows() - 1);
  }

  cache.policy_pre = cache.features * params.policy_w1 + params.policy_b1;
  cache.policy_hidden = cache.policy_pre.cwiseMax(0.0);
  cache.q = cache.policy_hidden * params.policy_w2 + params.policy_b2;
  return cache;
}

RowVector q_values(const QNetParams& params, const SupportState& state) {
  return forward(params, state).q;
}

RowVector q_values_appended(const QNetParams& params, const ForwardCache& cache, int item, int rating) {
  const QNetShape& shape = params.shape;
  if (!(cache.shape == shape) || cache.channels.size() != static_cast<std::size_t>(shape.max_rating)) {
    throw std::invalid_argument("q_values_appended: cache does not match the parameters");
  }
  if (item < 0 || item >= shape.n_items) throw std::out_of_range("q_values_appended: item id out of range");
  if (rating < 1 || rating > shape.max_rating) throw std::out_of_range("q_values_appended: rating out of range");
  const int d = shape.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const ChannelCache& cc = cache.channels[static_cast<std::size_t>(rating - 1)];
  const auto n = static_cast<Eigen::Index>(cc.items.size());

  RowVector x = params.embedding.row(item);
  for (int l = 0; l < shape.blocks; ++l) {
    const BlockParams& bp = params.channels[static_cast<std::size_t>(rating - 1)][static_cast<std::size_t>(l)];
    const RowVector query = x * bp.query;
    const RowVector key = x * bp.key;
    const RowVector value = x * bp.value;
    RowVector logits(n + 1);
    if (n > 0) logits.head(n) = (cc.blocks[static_cast<std::size_t>(l)].key * query.transpose()).transpose() * scale;
    logits(n) = key.dot(query) * scale;
    const double hi = logits.maxCoeff();
    const RowVector w = (logits.array() - hi).exp().matrix();
    RowVector attended = w(n) * value;
    if (n > 0) attended.noalias() += w.head(n) * cc.blocks[static_cast<std::size_t>(l)].value;
    attended /= w.sum();
    const RowVector hidden = (attended * bp.ffn_w1 + bp.ffn_b1).cwiseMax(0.0);
    x = hidden * bp.ffn_w2 + bp.ffn_b2;
  }
  RowVector features = cache.features;
  features.segment((rating - 1) * d, d) = x;
  const RowVector hidden = (features * params.policy_w1 + params.policy_b1).cwiseMax(0.0);
  return hidden * params.policy_w2 + params.policy_b2;
}

void accumulate_backward(const QNetParams& params, const ForwardCache& cache, int selected_item,
                         double upstream, QNetParams& grads) {
  const QNetShape& shape = params.shape;
  if (!(cache.shape == shape) || !(grads.shape == shape) || cache.q.size() != shape.n_items ||
      cache.channels.size() != static_cast<std::size_t>(shape.max_rating)) {
    throw std::invalid_argument("backward: cache does not match the parameters");
  }
  if (selected_item < 0 || selected_item >= shape.n_items) {
    throw std::out_of_range("backward: selected item out of range");
  }
  if (upstream == 0.0) return;
  const int d = shape.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  // Policy layers.
  grads.policy_b2(0, selected_item) += upstream;
  grads.policy_w2.col(selected_item) += upstream * cache.policy_hidden.transpose();
  RowVector d_pre = upstream * params.policy_w2.col(selected_item).transpose();
  d_pre = d_pre.cwiseProduct((cache.policy_pre.array() > 0.0).cast<double>().matrix());
  grads.policy_b1.row(0) += d_pre;
  grads.policy_w1 += cache.features.transpose() * d_pre;
  const RowVector d_features = d_pre * params.policy_w1.transpose();

  for (int z = 1; z <= shape.max_rating; ++z) {
    const ChannelCache& cc = cache.channels[static_cast<std::size_t>(z - 1)];
    if (cc.items.empty()) continue;
    if (cc.blocks.size() != static_cast<std::size_t>(shape.blocks)) {
      throw std::invalid_argument("backward: cache block count mismatch");
    }
    const auto n = static_cast<Eigen::Index>(cc.items.size());
    Matrix d_x = Matrix::Zero(n, d);
    d_x.row(n - 1) = d_features.segment((z - 1) * d, d);

    for (int l = shape.blocks - 1; l >= 0; --l) {
      const auto zi = static_cast<std::size_t>(z - 1);
      const auto li = static_cast<std::size_t>(l);
      const BlockParams& bp = params.channels[zi][li];
      BlockParams& g = grads.channels[zi][li];
      const BlockCache& bc = cc.blocks[li];

      // F = ReLU(S W1 + b1) W2 + b2
      const Matrix hidden = relu(bc.hidden_pre);
      g.ffn_w2 += hidden.transpose() * d_x;
      g.ffn_b2.row(0) += d_x.colwise().sum();
      const Matrix d_hidden_pre = (d_x * bp.ffn_w2.transpose()).cwiseProduct(relu_mask(bc.hidden_pre));
      g.ffn_w1 += bc.attended.transpose() * d_hidden_pre;
      g.ffn_b1.row(0) += d_hidden_pre.colwise().sum();
      const Matrix d_attended = d_hidden_pre * bp.ffn_w1.transpose();

      // S = P V, P = softmax(Q K^T * scale)
      const Matrix d_weights = d_attended * bc.value.transpose();
      const Matrix d_value = bc.weights.transpose() * d_attended;
      const Vector row_dot = bc.weights.cwiseProduct(d_weights).rowwise().sum();
      Matrix d_logits = bc.weights.cwiseProduct(d_weights - row_dot.replicate(1, n));
      d_logits *= scale;
      const Matrix d_query = d_logits * bc.key;
      const Matrix d_key = d_logits.transpose() * bc.query;

      g.query += bc.input.transpose() * d_query;
      g.key += bc.input.transpose() * d_key;
      g.value += bc.input.transpose() * d_value;
      d_x = d_query * bp.query.transpose() + d_key * bp.key.transpose() +
            d_value * bp.value.transpose();
    }
    for (Eigen::Index m = 0; m < n; ++m) {
      grads.embedding.row(cc.items[static_cast<std::size_t>(m)]) += d_x.row(m);
    }
  }
}

QNetParams backward(const QNetParams& params, const ForwardCache& cache, int selected_item,
                    double upstream) {
  QNetParams grads = params.zeros_like();
  accumulate_backward(params, cache, selected_item, upstream, grads);
  return grads;
}

Adam::Adam(const QNetShape& shape, Options options)
    : options_(options), m_(QNetParams::zeros(shape)), v_(QNetParams::zeros(shape)) {}

void Adam::step(QNetParams& params, const QNetParams& grads) {
  if (!(params.shape == m_.shape) || !(grads.shape == m_.shape)) {
    throw std::invalid_argument("Adam::step: shape mismatch");
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;

  std::vector<const Matrix*> g;
  std::vector<Matrix*> m;
  std::vector<Matrix*> v;
  grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
  m_.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
  v_.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });
  std::size_t i = 0;
  params.for_each([&](const std::string&, Matrix& p) {
    auto ga = g[i]->array();
    auto ma = m[i]->array();
    auto va = v[i]->array();
    ma = b1 * ma + (1.0 - b1) * ga;
    va = b2 * va + (1.0 - b2) * ga.square();
    p.array() -= lr * (ma / correction1) / ((va / correction2).sqrt() + eps);
    ++i;
  });
}

// Checkpoints ----------------------------------------------------------------

namespace {
constexpr const char* kMagic = "nicf-tensors";
constexpr int kVersion = 1;
}  // namespace

void write_tensors(std::ostream& out, const std::string& kind,
                   const std::vector<std::pair<std::string, std::string>>& meta,
                   const std::vector<TensorEntry>& tensors) {
  out << kMagic << " v" << kVersion << "\n";
  out << "kind " << kind << "\n";
  for (const auto& [key, value] : meta) out << "meta " << key << " " << value << "\n";
  out << "tensors " << tensors.size() << "\n";
  out << std::setprecision(17);
  for (const auto& t : tensors) {
    out << "tensor " << t.name << " " << t.value.rows() << " " << t.value.cols() << "\n";
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (c) out << ' ';
        out << t.value(r, c);
      }
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("write_tensors: stream failure");
}

const std::string& TensorFile::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw std::runtime_error("checkpoint: missing meta key '" + key + "'");
}

const Matrix& TensorFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

TensorFile read_tensors(std::istream& in) {
  TensorFile file;
  std::string word;
  std::string version;
  if (!(in >> word >> version) || word != kMagic) {
    throw std::runtime_error("checkpoint: bad magic header");
  }
  if (version != "v" + std::to_string(kVersion)) {
    throw std::runtime_error("checkpoint: unsupported version " + version);
  }
  if (!(in >> word >> file.kind) || word != "kind") throw std::runtime_error("checkpoint: missing kind");
  std::size_t count = 0;
  while (in >> word) {
    if (word == "meta") {
      std::string key;
      std::string value;
      if (!(in >> key >> value)) throw std::runtime_error("checkpoint: truncated meta line");
      file.meta.emplace_back(key, value);
    } else if (word == "tensors") {
      if (!(in >> count)) throw std::runtime_error("checkpoint: bad tensor count");
      break;
    } else {
      throw std::runtime_error("checkpoint: unexpected token '" + word + "'");
    }
  }
  for (std::size_t t = 0; t < count; ++t) {
    TensorEntry entry;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(in >> word >> entry.name >> rows >> cols) || word != "tensor" || rows < 0 || cols < 0) {
      throw std::runtime_error("checkpoint: bad tensor header");
    }
    entry.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      if (!(in >> entry.value.data()[i])) {
        throw std::runtime_error("checkpoint: truncated tensor '" + entry.name + "'");
      }
    }
    file.tensors.push_back(std::move(entry));
  }
  return file;
}

void save_qnet(std::ostream& out, const QNetParams& params) {
  std::vector<TensorEntry> tensors;
  params.for_each([&](const std::string& name, const Matrix& m) { tensors.push_back({name, m}); });
  const QNetShape& s = params.shape;
  write_tensors(out, "qnet",
                {{"n_items", std::to_string(s.n_items)},
                 {"dim", std::to_string(s.dim)},
                 {"blocks", std::to_string(s.blocks)},
                 {"max_rating", std::to_string(s.max_rating)}},
                tensors);
}

void save_qnet(const std::string& path, const QNetParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  save_qnet(out, params);
}

QNetParams load_qnet(std::istream& in) {
  const TensorFile file = read_tensors(in);
  if (file.kind != "qnet") throw std::runtime_error("checkpoint: expected kind qnet, got " + file.kind);
  QNetShape shape;
  shape.n_items = std::stoi(file.meta_value("n_items"));
  shape.dim = std::stoi(file.meta_value("dim"));
  shape.blocks = std::stoi(file.meta_value("blocks"));
  shape.max_rating = std::stoi(file.meta_value("max_rating"));
  QNetParams params = QNetParams::zeros(shape);
  std::size_t expected = 0;
  params.for_each([&](const std::string& name, Matrix& m) {
    const Matrix& stored = file.tensor(name);
    if (stored.rows() != m.rows() || stored.cols() != m.cols()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               std::to_string(stored.rows()) + "x" + std::to_string(stored.cols()) +
                               ", expected " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
    }
    m = stored;
    ++expected;
  });
  if (expected != file.tensors.size()) throw std::runtime_error("checkpoint: unexpected extra tensors");
  return params;
}

QNetParams load_qnet(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return load_qnet(in);
}

}  // namespace nicf
