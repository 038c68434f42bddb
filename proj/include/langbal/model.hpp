#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "langbal/corpus.hpp"

namespace langbal {

struct ModelDims {
  int vocab = 0;    // embedding rows, mask row included
  int embed = 32;
  int hidden = 32;
  int classes = 0;

  bool operator==(const ModelDims&) const = default;
};

// Mean-pooled bag-of-embeddings classifier:
//   pooled = tanh(mean_i E[t_i] * W_h + b_h)
//   probs  = softmax(pooled * W_o + b_o)
// Parameters live in one flat array in checkpoint order: embedding
// (vocab x embed), W_h (embed x hidden), b_h, W_o (hidden x classes), b_o.
// Values are kept at float32 precision so checkpoints round-trip exactly;
// arithmetic is done in double.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelDims dims, TokenId mask_id);

  const ModelDims& dims() const { return dims_; }
  TokenId mask_id() const { return mask_id_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<const double> embedding_row(TokenId token) const;
  std::span<double> embedding_row(TokenId token);
  std::span<const double> hidden_w() const { return block(hidden_w_offset(), dims_.embed * dims_.hidden); }
  std::span<const double> hidden_b() const { return block(hidden_b_offset(), dims_.hidden); }
  std::span<const double> output_w() const { return block(output_w_offset(), dims_.hidden * dims_.classes); }
  std::span<const double> output_b() const { return block(output_b_offset(), dims_.classes); }
  std::span<double> hidden_w() { return block(hidden_w_offset(), dims_.embed * dims_.hidden); }
  std::span<double> hidden_b() { return block(hidden_b_offset(), dims_.hidden); }
  std::span<double> output_w() { return block(output_w_offset(), dims_.hidden * dims_.classes); }
  std::span<double> output_b() { return block(output_b_offset(), dims_.classes); }

  // Rounds every value to the nearest float32.
  void round_to_storage();
  bool all_finite() const;

  bool operator==(const ModelParams&) const = default;

 private:
  std::size_t hidden_w_offset() const { return static_cast<std::size_t>(dims_.vocab) * dims_.embed; }
  std::size_t hidden_b_offset() const { return hidden_w_offset() + static_cast<std::size_t>(dims_.embed) * dims_.hidden; }
  std::size_t output_w_offset() const { return hidden_b_offset() + dims_.hidden; }
  std::size_t output_b_offset() const { return output_w_offset() + static_cast<std::size_t>(dims_.hidden) * dims_.classes; }
  std::span<const double> block(std::size_t offset, std::size_t n) const {
    return std::span<const double>(values_).subspan(offset, n);
  }
  std::span<double> block(std::size_t offset, std::size_t n) {
    return std::span<double>(values_).subspan(offset, n);
  }

  ModelDims dims_;
  TokenId mask_id_ = 0;
  std::vector<double> values_;
};

struct InitConfig {
  int embed = 32;
  int hidden = 32;
  double embedding_scale = 0.1;  // embeddings ~ U(-scale, scale)
};

void to_json(nlohmann::json& j, const InitConfig& c);
void from_json(const nlohmann::json& j, InitConfig& c);

// Embeddings uniform in +-embedding_scale, dense layers Glorot-uniform,
// biases zero.
ModelParams init_params(const Vocab& vocab, int n_classes, const InitConfig& config,
                        std::uint64_t seed);

struct ForwardOutput {
  std::vector<double> probs;
  std::vector<double> pooled;
};

ForwardOutput forward(const ModelParams& params, std::span<const TokenId> tokens);

// forward() with the tokens at `mask_positions` replaced by the mask id.
ForwardOutput forward_masked(const ModelParams& params, std::span<const TokenId> tokens,
                             std::span<const std::size_t> mask_positions);

// Runs the network from an already pooled (mean) embedding vector.
ForwardOutput forward_from_mean(const ModelParams& params, std::span<const double> mean_embedding);

// Numerically stable softmax, in place.
void softmax_inplace(std::span<double> logits);

struct Checkpoint {
  ModelParams params;
  std::string vocab_hash;
  nlohmann::json manifest;
};

// "PBL1", u32 little-endian header length, JSON header, then the parameter
// array as little-endian float32. Throws if a value is not exactly
// representable as float32.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& vocab_hash, const nlohmann::json& manifest);

Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also checks the vocabulary hash and embedding row count against `vocab`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace langbal
