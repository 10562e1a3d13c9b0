#pragma once

#include "nicf/numerics.hpp"
#include "nicf/support.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace nicf {

/// Weights of one self-attention block of one rating channel.
struct BlockParams {
  Matrix query;   // d x d
  Matrix key;     // d x d
  Matrix value;   // d x d
  Matrix ffn_w1;  // d x d
  Matrix ffn_b1;  // 1 x d
  Matrix ffn_w2;  // d x d
  Matrix ffn_b2;  // 1 x d
};

struct QNetShape {
  int n_items = 0;
  int dim = 16;
  int blocks = 2;
  int max_rating = 5;

  bool operator==(const QNetShape&) const = default;
};

/// All learnable tensors of the multi-channel self-attentive Q-network. The
/// same type doubles as a gradient container.
struct QNetParams {
  QNetShape shape;
  Matrix embedding;                             // n_items x d
  std::vector<std::vector<BlockParams>> channels;  // [rating - 1][block]
  Matrix policy_w1;                             // (max_rating * d) x d
  Matrix policy_b1;                             // 1 x d
  Matrix policy_w2;                             // d x n_items
  Matrix policy_b2;                             // 1 x n_items

  /// Zero-filled tensors of the given shape.
  static QNetParams zeros(const QNetShape& shape);
  /// Weights uniform in [-1/sqrt(d), 1/sqrt(d)], biases zero.
  static QNetParams init(const QNetShape& shape, std::uint64_t seed);

  QNetParams zeros_like() const { return zeros(shape); }

  /// Visits every tensor with a stable name, in checkpoint order.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Flattens / restores all tensors (row-major, checkpoint order).
  Vector flatten() const;
  void assign(const Vector& flat);

  QNetParams& operator+=(const QNetParams& other);
  QNetParams& operator*=(double s);
};

/// Activations of one block, kept for backprop.
struct BlockCache {
  Matrix input;     // X (n x d)
  Matrix query;     // X Wq
  Matrix key;       // X Wk
  Matrix value;     // X Wv
  Matrix weights;   // softmax(Q K^T / sqrt(d)) with causal mask
  Matrix attended;  // S = weights * V
  Matrix hidden_pre;  // S W1 + b1
  Matrix output;    // F
};

struct ChannelCache {
  std::vector<int> items;
  std::vector<BlockCache> blocks;
};

struct ForwardCache {
  QNetShape shape;
  std::vector<ChannelCache> channels;
  RowVector features;    // u_t, length max_rating * d
  RowVector policy_pre;  // u_t W1 + b1
  RowVector policy_hidden;
  RowVector q;
};

/// Rows of the embedding table for the items of channel `rating`.
Matrix embed_channel(const QNetParams& params, const SupportState& state, int rating);

/// softmax(C K^T / sqrt(d)) V, with d = C.cols(); causal forbids key j > query i.
Matrix attention(const Matrix& query, const Matrix& key, const Matrix& value, bool causal);

/// ReLU(x W1 + b1) W2 + b2, applied to each row of x.
Matrix ffn(const Matrix& x, const BlockParams& block);

/// Q-values for every item, plus the activations needed by backward().
ForwardCache forward(const QNetParams& params, const SupportState& state);

/// Q-values only.
RowVector q_values(const QNetParams& params, const SupportState& state);

/// Q-values of the state behind `cache` with (item, rating) appended. Causal
/// attention leaves every earlier row unchanged, so only the new row of one
/// channel is computed. `cache` must come from forward() with these params.
RowVector q_values_appended(const QNetParams& params, const ForwardCache& cache, int item, int rating);

/// d Q(s, selected_item) / d params, scaled by upstream, added into grads.
void accumulate_backward(const QNetParams& params, const ForwardCache& cache, int selected_item,
                         double upstream, QNetParams& grads);

QNetParams backward(const QNetParams& params, const ForwardCache& cache, int selected_item,
                    double upstream);

/// Adaptive-moment optimizer over a QNetParams-shaped parameter set.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(const QNetShape& shape, Options options);
  void step(QNetParams& params, const QNetParams& grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  Options options_;
  QNetParams m_;
  QNetParams v_;
  std::int64_t t_ = 0;
};

// Tensor-listing checkpoints ------------------------------------------------

/// A named, shaped tensor list: the on-disk checkpoint format shared by the
/// Q-network and the PMF model.
struct TensorEntry {
  std::string name;
  Matrix value;
};

void write_tensors(std::ostream& out, const std::string& kind,
                   const std::vector<std::pair<std::string, std::string>>& meta,
                   const std::vector<TensorEntry>& tensors);

struct TensorFile {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<TensorEntry> tensors;

  const std::string& meta_value(const std::string& key) const;
  const Matrix& tensor(const std::string& name) const;
};

TensorFile read_tensors(std::istream& in);

void save_qnet(std::ostream& out, const QNetParams& params);
void save_qnet(const std::string& path, const QNetParams& params);
/// Throws std::runtime_error on malformed input or when any tensor shape
/// disagrees with the shape recorded in the header.
QNetParams load_qnet(std::istream& in);
QNetParams load_qnet(const std::string& path);

}  // namespace nicf
