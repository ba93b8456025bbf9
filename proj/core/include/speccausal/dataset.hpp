#pragma once

#include "speccausal/linalg.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace speccausal {

enum class Setting { iv, ivoc, pcl };

Setting parse_setting(const std::string& s);
std::string to_string(Setting s);

// Column names used throughout: x (treatment), z (instrument / treatment proxy),
// o (observed confounder), w (outcome proxy), y (outcome).
struct Dataset {
  Setting setting = Setting::iv;
  std::map<std::string, Matrix> columns;
  std::optional<Vector> truth;    // structural value per row, when known
  std::optional<Vector> weights;  // population weights; empirical means become weighted means
  nlohmann::json metadata = nlohmann::json::object();

  Eigen::Index rows() const;
  bool has(const std::string& name) const { return columns.count(name) > 0; }
  const Matrix& col(const std::string& name) const;
  Eigen::Index dim(const std::string& name) const { return col(name).cols(); }

  // Checks that every column shares the row count and that the setting's columns exist.
  void validate(bool require_outcome = true) const;

  Dataset subset(const std::vector<std::size_t>& idx) const;
  // Normalized weights (uniform when no weights are attached).
  Vector normalized_weights() const;
};

std::vector<std::string> required_columns(Setting s, bool require_outcome = true);

// Weighted (1/n or w-normalized) cross moment sum_i w_i a_i b_i^T.
Matrix weighted_cross_moment(const Matrix& A, const Matrix& B, const Vector& w);

// Stacks rows of two datasets with identical column layouts.
Dataset concat_rows(const Dataset& a, const Dataset& b);

// Line 1: JSON header. Line 2: CSV column header. Then one CSV row per sample.
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace speccausal
