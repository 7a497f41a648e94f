// SPDX-License-Identifier: Apache-2.0
//
// Toy-scale bidirectional SSM encoder: patch embedding with class token and
// position embeddings, pre-norm residual blocks that scan the token sequence
// in both directions, and a norm + two-layer MLP classification head.
// Tokens are rows: a sequence is a (J+1) x D matrix with the class token in row 0.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace soar::encoder {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class PatchMode { nonoverlap, conv };
enum class Combine { gated, sum };

inline constexpr double kNormEpsilon = 1e-6;
inline constexpr double kInitScale = 0.02;

struct EncoderConfig {
  int image_h{224};
  int image_w{224};
  int channels{3};
  PatchMode patch_mode{PatchMode::conv};
  int patch_size{16};  // nonoverlap S
  int kernel{16};      // conv k
  int stride{8};       // conv s
  int embed_dim{32};   // D
  int inner_dim{64};
  int state_dim{8};  // N
  int depth{2};      // L
  int num_classes{16};
  int mlp_hidden{64};
  int conv_width{4};
  Combine combine{Combine::gated};
  std::uint64_t seed{0};

  /// Throws ContractError on non-positive sizes or geometry that does not tile.
  void validate() const;
  int grid_h() const;
  int grid_w() const;
  int token_count() const { return grid_h() * grid_w(); }  // J
  int patch_len() const;

  /// Flat `key = value` lines, '#' starts a comment. Keys are the field names;
  /// patch_mode is nonoverlap|conv, combine is gated|sum. Throws ParseError.
  static EncoderConfig parse(const std::string& text, const std::string& source = {});
  static EncoderConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// H x W x C real image, stored row-major with channels innermost.
struct ImageTensor {
  int height{0};
  int width{0};
  int channels{0};
  std::vector<double> data;

  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

struct DirectionWeights {
  MatrixXd conv;     // conv_width x inner, tap conv_width-1 is the current token
  VectorXd conv_bias;  // inner
  MatrixXd delta_proj;  // inner x inner
  VectorXd delta_bias;  // inner
  MatrixXd input_proj;   // inner x N  (F)
  MatrixXd output_proj;  // inner x N  (G)
};

struct SoarBlockWeights {
  VectorXd norm_scale;   // D
  VectorXd norm_offset;  // D
  MatrixXd in_x;         // D x inner
  MatrixXd in_z;         // D x inner
  DirectionWeights forward;
  DirectionWeights backward;
  MatrixXd evolution;  // inner x N, shared by both directions
  MatrixXd out_proj;   // inner x D
};

struct EncoderWeights {
  MatrixXd patch_proj;  // patch_len x D  (Z)
  VectorXd cls;         // D
  MatrixXd pos;         // (J+1) x D
  std::vector<SoarBlockWeights> blocks;
  VectorXd head_norm_scale;
  VectorXd head_norm_offset;
  MatrixXd fc1;  // D x hidden
  VectorXd fc1_bias;
  MatrixXd fc2;  // hidden x classes
  VectorXd fc2_bias;
};

/// Seeded init: projections and embeddings ~ N(0, 0.02^2), biases and norm
/// offsets 0, norm scales 1, evolution row entries -(n+1).
EncoderWeights init_weights(const EncoderConfig& config);
/// Same shapes as `config` produces, all zero.
EncoderWeights zero_weights(const EncoderConfig& config);

/// View of one stored tensor, in the fixed canonical order used for
/// serialization and initialization.
struct TensorView {
  std::string name;
  std::vector<std::uint64_t> dims;  // rank 1 or 2
  double* data;
  std::size_t size;
};
std::vector<TensorView> tensors(EncoderWeights& weights);
std::size_t parameter_count(const EncoderWeights& weights);

/// Little-endian container: "SOAR", u32 version, u32 tensor count, then per
/// tensor u32 name length, name bytes, u32 rank, u64 dims, f64 payload.
void save_weights(const std::filesystem::path& path, const EncoderWeights& weights);
/// Throws IoError on unreadable or truncated files, SchemaError when names or
/// shapes differ from what `config` expects.
EncoderWeights load_weights(const std::filesystem::path& path, const EncoderConfig& config);

/// J x patch_len, row-major patch order, each patch flattened as (dy, dx, c).
MatrixXd patchify(const ImageTensor& image, const EncoderConfig& config);
/// Row 0 = cls + pos_0; row j = patch_j Z + pos_j.
MatrixXd embed_tokens(const MatrixXd& patches, const MatrixXd& patch_proj, const VectorXd& cls,
                      const MatrixXd& pos);
MatrixXd layer_norm(const MatrixXd& x, const VectorXd& scale, const VectorXd& offset);
/// One residual block; throws NumericError on non-finite values.
MatrixXd soar_block(const MatrixXd& tokens, const SoarBlockWeights& w,
                    Combine combine = Combine::gated);

class Encoder {
 public:
  explicit Encoder(EncoderConfig config);
  Encoder(EncoderConfig config, EncoderWeights weights);

  const EncoderConfig& config() const noexcept { return config_; }
  const EncoderWeights& weights() const noexcept { return weights_; }
  EncoderWeights& weights() noexcept { return weights_; }

  /// Output of the last block, (J+1) x D.
  MatrixXd sequence(const ImageTensor& image) const;
  /// Class scores, length num_classes.
  VectorXd encode(const ImageTensor& image) const;
  /// Gradient of <score_grad, encode(image)> with respect to every weight.
  EncoderWeights gradient(const ImageTensor& image, const VectorXd& score_grad) const;

 private:
  void check_shapes() const;

  EncoderConfig config_;
  EncoderWeights weights_;
};

struct BudgetItem {
  std::string name;
  std::uint64_t params{0};
  std::uint64_t macs{0};
};

struct ComputeBudget {
  std::uint64_t params{0};
  double gflops{0};  // 2 * multiply-adds / 1e9
  std::vector<BudgetItem> items;

  double params_millions() const { return static_cast<double>(params) / 1e6; }
};

/// Counts stored weights and the multiply-adds of one forward pass.
/// Normalization, activations and other elementwise work are not charged.
ComputeBudget count_params_gflops(const EncoderConfig& config);

}  // namespace soar::encoder
