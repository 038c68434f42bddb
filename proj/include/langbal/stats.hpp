#pragma once

#include <span>

namespace langbal {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> xs);
// Spearman rank correlation with average ranks for ties. NaN when either
// side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace langbal
