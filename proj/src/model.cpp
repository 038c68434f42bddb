#include "langbal/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "langbal/error.hpp"
#include "langbal/rng.hpp"

namespace langbal {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'B', 'L', '1'};
constexpr int kFormatVersion = 1;

[[noreturn]] void fail(const std::string& message) { throw Error("model", message); }

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

void check_tokens(const ModelParams& params, std::span<const TokenId> tokens) {
  if (tokens.empty()) fail("forward needs at least one token");
  for (TokenId t : tokens) {
    if (t >= static_cast<TokenId>(params.dims().vocab)) {
      fail("token id " + std::to_string(t) + " outside vocabulary of size " +
           std::to_string(params.dims().vocab));
    }
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

ModelParams::ModelParams(ModelDims dims, TokenId mask_id) : dims_(dims), mask_id_(mask_id) {
  if (dims.vocab < 1 || dims.embed < 1 || dims.hidden < 1 || dims.classes < 2) {
    fail("invalid model dimensions");
  }
  if (mask_id >= static_cast<TokenId>(dims.vocab)) fail("mask id outside vocabulary");
  values_.assign(output_b_offset() + dims.classes, 0.0);
}

std::span<const double> ModelParams::embedding_row(TokenId token) const {
  return block(static_cast<std::size_t>(token) * dims_.embed, dims_.embed);
}

std::span<double> ModelParams::embedding_row(TokenId token) {
  return block(static_cast<std::size_t>(token) * dims_.embed, dims_.embed);
}

void ModelParams::round_to_storage() {
  for (double& v : values_) v = static_cast<double>(static_cast<float>(v));
}

bool ModelParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void to_json(nlohmann::json& j, const InitConfig& c) {
  j = nlohmann::json{{"embed", c.embed}, {"hidden", c.hidden}, {"embedding_scale", c.embedding_scale}};
}

void from_json(const nlohmann::json& j, InitConfig& c) {
  InitConfig d;
  c.embed = j.value("embed", d.embed);
  c.hidden = j.value("hidden", d.hidden);
  c.embedding_scale = j.value("embedding_scale", d.embedding_scale);
}

ModelParams init_params(const Vocab& vocab, int n_classes, const InitConfig& config,
                        std::uint64_t seed) {
  ModelParams p({static_cast<int>(vocab.size()), config.embed, config.hidden, n_classes},
                vocab.mask_id());
  Rng rng(derive_seed(seed, "model/init"));
  const auto& d = p.dims();
  for (TokenId t = 0; t < static_cast<TokenId>(d.vocab); ++t) {
    for (double& v : p.embedding_row(t)) v = uniform(rng, -config.embedding_scale, config.embedding_scale);
  }
  const double hidden_limit = std::sqrt(6.0 / (d.embed + d.hidden));
  for (double& v : p.hidden_w()) v = uniform(rng, -hidden_limit, hidden_limit);
  const double output_limit = std::sqrt(6.0 / (d.hidden + d.classes));
  for (double& v : p.output_w()) v = uniform(rng, -output_limit, output_limit);
  p.round_to_storage();
  return p;
}

void softmax_inplace(std::span<double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& z : logits) {
    z = std::exp(z - top);
    total += z;
  }
  for (double& z : logits) z /= total;
}

ForwardOutput forward_from_mean(const ModelParams& params, std::span<const double> mean) {
  const auto& d = params.dims();
  if (static_cast<int>(mean.size()) != d.embed) fail("pooled input has the wrong width");
  ForwardOutput out;
  out.pooled.assign(params.hidden_b().begin(), params.hidden_b().end());
  const auto wh = params.hidden_w();
  for (int i = 0; i < d.embed; ++i) {
    const double x = mean[i];
    const double* row = wh.data() + static_cast<std::size_t>(i) * d.hidden;
    for (int j = 0; j < d.hidden; ++j) out.pooled[j] += x * row[j];
  }
  for (double& h : out.pooled) h = std::tanh(h);
  out.probs.assign(params.output_b().begin(), params.output_b().end());
  const auto wo = params.output_w();
  for (int j = 0; j < d.hidden; ++j) {
    const double h = out.pooled[j];
    const double* row = wo.data() + static_cast<std::size_t>(j) * d.classes;
    for (int c = 0; c < d.classes; ++c) out.probs[c] += h * row[c];
  }
  softmax_inplace(out.probs);
  return out;
}

ForwardOutput forward(const ModelParams& params, std::span<const TokenId> tokens) {
  check_tokens(params, tokens);
  std::vector<double> mean(params.dims().embed, 0.0);
  for (TokenId t : tokens) {
    const auto row = params.embedding_row(t);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += row[i];
  }
  for (double& m : mean) m /= static_cast<double>(tokens.size());
  return forward_from_mean(params, mean);
}

ForwardOutput forward_masked(const ModelParams& params, std::span<const TokenId> tokens,
                             std::span<const std::size_t> mask_positions) {
  std::vector<TokenId> masked(tokens.begin(), tokens.end());
  for (std::size_t pos : mask_positions) {
    if (pos >= masked.size()) {
      fail("mask position " + std::to_string(pos) + " out of range for length " +
           std::to_string(masked.size()));
    }
    masked[pos] = params.mask_id();
  }
  return forward(params, masked);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& vocab_hash, const nlohmann::json& manifest) {
  std::string payload;
  payload.reserve(params.size() * 4);
  for (double v : params.values()) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(v)) fail("cannot save non-finite parameter");
    if (static_cast<double>(f) != v) fail("parameter is not exactly representable as float32");
    put_u32(payload, std::bit_cast<std::uint32_t>(f));
  }
  const auto& d = params.dims();
  nlohmann::ordered_json header;
  header["version"] = kFormatVersion;
  header["dims"] = {{"vocab", d.vocab}, {"embed", d.embed}, {"hidden", d.hidden},
                    {"classes", d.classes}, {"mask_id", params.mask_id()}};
  header["vocab_hash"] = vocab_hash;
  header["manifest"] = manifest;
  header["payload"] = {{"count", params.size()}, {"fnv1a", hex64(fnv1a(payload))}};
  const std::string header_text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  bytes += payload;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";
  if (bytes.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    fail(where + "missing PBL1 magic");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t header_len = get_u32(raw + 4);
  if (bytes.size() < 8 + header_len) fail(where + "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    fail(where + "corrupted header (" + e.what() + ")");
  }
  try {
    const int version = header.at("version").get<int>();
    if (version != kFormatVersion) {
      fail(where + "unsupported version " + std::to_string(version));
    }
    const auto& jd = header.at("dims");
    const ModelDims dims{jd.at("vocab").get<int>(), jd.at("embed").get<int>(),
                         jd.at("hidden").get<int>(), jd.at("classes").get<int>()};
    Checkpoint cp{ModelParams(dims, jd.at("mask_id").get<TokenId>()),
                  header.at("vocab_hash").get<std::string>(), header.at("manifest")};
    const std::size_t count = header.at("payload").at("count").get<std::size_t>();
    if (count != cp.params.size()) fail(where + "payload count does not match dims");
    const std::string payload = bytes.substr(8 + header_len);
    if (payload.size() != count * 4) {
      fail(where + "payload has " + std::to_string(payload.size()) + " bytes, expected " +
           std::to_string(count * 4));
    }
    if (hex64(fnv1a(payload)) != header.at("payload").at("fnv1a").get<std::string>()) {
      fail(where + "payload checksum mismatch");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
    auto values = cp.params.values();
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + 4 * i)));
    }
    if (!cp.params.all_finite()) fail(where + "non-finite parameter");
    return cp;
  } catch (const nlohmann::json::exception& e) {
    fail(where + "malformed header (" + e.what() + ")");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocab& vocab) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.vocab_hash != vocab.hash()) {
    fail("checkpoint " + path.string() + " was trained on a different vocabulary (hash " +
         cp.vocab_hash + ", expected " + vocab.hash() + ")");
  }
  if (cp.params.dims().vocab != static_cast<int>(vocab.size()) ||
      cp.params.mask_id() != vocab.mask_id()) {
    fail("checkpoint " + path.string() + " dimensions do not match the vocabulary");
  }
  return cp;
}

}  // namespace langbal
