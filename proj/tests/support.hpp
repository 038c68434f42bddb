#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "langbal/corpus.hpp"
#include "langbal/model.hpp"

namespace support {

// Fresh scratch directory per test name.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "langbal_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every parameter U(-scale, scale); the mask is the last vocabulary row.
inline langbal::ModelParams random_model(int vocab, int embed, int hidden, int classes,
                                         std::uint64_t seed, double scale = 1.0) {
  langbal::ModelParams p({vocab, embed, hidden, classes}, static_cast<langbal::TokenId>(vocab - 1));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : p.values()) v = u(gen);
  p.round_to_storage();
  return p;
}

// n non-mask tokens drawn from [0, vocab - 1).
inline std::vector<langbal::TokenId> random_tokens(int n, int vocab, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> u(0, vocab - 2);
  std::vector<langbal::TokenId> t(n);
  for (auto& x : t) x = static_cast<langbal::TokenId>(u(gen));
  return t;
}

}  // namespace support
