#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prevalshift/error.hpp"
#include "prevalshift/rng.hpp"

namespace prevalshift {

using FeatureId = std::uint32_t;
using CategoryId = std::uint32_t;

enum class FeatureKind { Categorical, Numeric };

struct FeatureDecl {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  /// Dictionary for categorical features; a category id indexes this list.
  std::vector<std::string> categories;

  friend bool operator==(const FeatureDecl&, const FeatureDecl&) = default;
};

/// Ordered feature declarations. A feature id is the position in `features`.
struct Schema {
  std::vector<FeatureDecl> features;

  std::optional<FeatureId> find(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name == name) return static_cast<FeatureId>(i);
    return std::nullopt;
  }

  FeatureId require_feature(std::string_view name) const {
    auto id = find(name);
    if (!id) fail(ErrorCode::FeatureNotFound, "feature '" + std::string(name) + "' is not in the schema");
    return *id;
  }

  std::optional<CategoryId> find_category(FeatureId feature, std::string_view label) const {
    const auto& cats = features.at(feature).categories;
    for (std::size_t i = 0; i < cats.size(); ++i)
      if (cats[i] == label) return static_cast<CategoryId>(i);
    return std::nullopt;
  }

  /// Stable 64-bit FNV-1a hash of the ordered (name, kind) pairs, rendered as hex.
  /// Category dictionaries are excluded: targets may legitimately carry unseen categories.
  std::string fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](std::string_view bytes) {
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
      }
      h ^= 0xFF;
      h *= 0x100000001B3ULL;
    };
    for (const auto& f : features) {
      mix(f.name);
      mix(f.kind == FeatureKind::Categorical ? "categorical" : "numeric");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
      h >>= 4;
    }
    return out;
  }

  friend bool operator==(const Schema&, const Schema&) = default;
};

/// Sparse feature assignment: categorical ids and finite numeric values,
/// each list sorted by feature id with no duplicates.
class FeatureVector {
 public:
  FeatureVector() = default;
  FeatureVector(std::vector<std::pair<FeatureId, CategoryId>> categorical,
                std::vector<std::pair<FeatureId, double>> numeric)
      : categorical_(std::move(categorical)), numeric_(std::move(numeric)) {
    std::sort(categorical_.begin(), categorical_.end());
    std::sort(numeric_.begin(), numeric_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < categorical_.size(); ++i)
      require(categorical_[i].first != categorical_[i - 1].first, ErrorCode::InvalidArgument,
              "duplicate categorical feature id");
    for (std::size_t i = 0; i < numeric_.size(); ++i) {
      require(std::isfinite(numeric_[i].second), ErrorCode::InvalidArgument, "numeric feature value is not finite");
      if (i > 0)
        require(numeric_[i].first != numeric_[i - 1].first, ErrorCode::InvalidArgument,
                "duplicate numeric feature id");
    }
    for (const auto& [id, _] : numeric_)
      require(!this->categorical(id).has_value(), ErrorCode::InvalidArgument,
              "feature id used as both categorical and numeric");
  }

  std::optional<CategoryId> categorical(FeatureId id) const {
    auto it = std::lower_bound(categorical_.begin(), categorical_.end(), id,
                               [](const auto& entry, FeatureId key) { return entry.first < key; });
    if (it == categorical_.end() || it->first != id) return std::nullopt;
    return it->second;
  }

  std::optional<double> numeric(FeatureId id) const {
    auto it = std::lower_bound(numeric_.begin(), numeric_.end(), id,
                               [](const auto& entry, FeatureId key) { return entry.first < key; });
    if (it == numeric_.end() || it->first != id) return std::nullopt;
    return it->second;
  }

  std::span<const std::pair<FeatureId, CategoryId>> categorical_entries() const { return categorical_; }
  std::span<const std::pair<FeatureId, double>> numeric_entries() const { return numeric_; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<std::pair<FeatureId, CategoryId>> categorical_;
  std::vector<std::pair<FeatureId, double>> numeric_;
};

struct Row {
  FeatureVector features;
  std::optional<int> label;
  std::optional<double> score;
  double weight = 1.0;

  friend bool operator==(const Row&, const Row&) = default;
};

/// Immutable collection of rows conforming to one schema. Safe to share
/// across threads; every transformation builds a new dataset.
class Dataset {
 public:
  Dataset() : schema_(std::make_shared<const Schema>()) {}

  Dataset(Schema schema, std::vector<Row> rows)
      : Dataset(std::make_shared<const Schema>(std::move(schema)), std::move(rows)) {}

  Dataset(std::shared_ptr<const Schema> schema, std::vector<Row> rows)
      : schema_(std::move(schema)), rows_(std::move(rows)) {
    for (std::size_t i = 0; i < rows_.size(); ++i) validate_row(rows_[i], i);
  }

  const Schema& schema() const { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const { return schema_; }
  std::span<const Row> rows() const { return rows_; }
  const Row& row(std::size_t i) const { return rows_.at(i); }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }

  bool all_labeled() const {
    return std::all_of(rows_.begin(), rows_.end(), [](const Row& r) { return r.label.has_value(); });
  }
  bool all_scored() const {
    return std::all_of(rows_.begin(), rows_.end(), [](const Row& r) { return r.score.has_value(); });
  }
  bool any_labeled() const {
    return std::any_of(rows_.begin(), rows_.end(), [](const Row& r) { return r.label.has_value(); });
  }

  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) {
      if (!r.score) fail(ErrorCode::MissingScores, "row without a score");
      out.push_back(*r.score);
    }
    return out;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) {
      if (!r.label) fail(ErrorCode::MissingLabels, "row without a label");
      out.push_back(*r.label);
    }
    return out;
  }

  std::vector<double> weights() const {
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r.weight);
    return out;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<Row> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(rows_.at(i));
    return Dataset(schema_, std::move(picked), Trusted{});
  }

  /// Same rows and schema with every score replaced.
  Dataset with_scores(std::span<const double> scores) const {
    require(scores.size() == rows_.size(), ErrorCode::LengthMismatch, "score count differs from row count");
    std::vector<Row> out(rows_.begin(), rows_.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].score = scores[i];
    return Dataset(schema_, std::move(out));
  }

 private:
  struct Trusted {};
  Dataset(std::shared_ptr<const Schema> schema, std::vector<Row> rows, Trusted)
      : schema_(std::move(schema)), rows_(std::move(rows)) {}

  void validate_row(const Row& r, std::size_t index) const {
    const auto where = " (row " + std::to_string(index) + ")";
    const auto& decls = schema_->features;
    require(r.features.categorical_entries().size() + r.features.numeric_entries().size() == decls.size(),
            ErrorCode::SchemaMismatch, "row feature count does not match schema" + where);
    for (const auto& [id, cat] : r.features.categorical_entries()) {
      require(id < decls.size() && decls[id].kind == FeatureKind::Categorical, ErrorCode::SchemaMismatch,
              "categorical feature id does not match schema" + where);
      require(cat < decls[id].categories.size(), ErrorCode::SchemaMismatch,
              "category id outside the dictionary of '" + decls[id].name + "'" + where);
    }
    for (const auto& [id, _] : r.features.numeric_entries())
      require(id < decls.size() && decls[id].kind == FeatureKind::Numeric, ErrorCode::SchemaMismatch,
              "numeric feature id does not match schema" + where);
    if (r.label) require(*r.label == 0 || *r.label == 1, ErrorCode::InvalidArgument, "label not in {0,1}" + where);
    if (r.score)
      require(std::isfinite(*r.score) && *r.score >= 0.0 && *r.score <= 1.0, ErrorCode::InvalidArgument,
              "score not in [0,1]" + where);
    require(std::isfinite(r.weight) && r.weight > 0.0, ErrorCode::InvalidArgument,
            "weight must be positive and finite" + where);
  }

  std::shared_ptr<const Schema> schema_;
  std::vector<Row> rows_;
};

/// Neumaier-compensated accumulator; used wherever sums feed reported numbers.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      carry_ += (sum_ - t) + x;
    else
      carry_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline double weighted_mean(std::span<const double> values, std::span<const double> weights) {
  require(values.size() == weights.size(), ErrorCode::LengthMismatch, "values and weights differ in length");
  CompensatedSum num;
  CompensatedSum den;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num.add(weights[i] * values[i]);
    den.add(weights[i]);
  }
  require(den.value() > 0.0, ErrorCode::ZeroTotalWeight, "total weight is zero");
  return num.value() / den.value();
}

/// Random partition of the rows. Part k receives the rows at shuffled
/// positions [round(n*F_{k-1}), round(n*F_k)) where F is the cumulative fraction.
inline std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, RngSeed seed) {
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot split an empty dataset");
  require(!fractions.empty(), ErrorCode::InvalidFractions, "no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    require(std::isfinite(f) && f > 0.0, ErrorCode::InvalidFractions, "fractions must be positive");
    total += f;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::InvalidFractions, "fractions must sum to 1");

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Dataset> parts;
  const auto n = static_cast<double>(data.size());
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cumulative += fractions[k];
    std::size_t end = k + 1 == fractions.size() ? data.size() : static_cast<std::size_t>(std::llround(n * cumulative));
    end = std::clamp(end, begin, data.size());
    parts.push_back(data.subset(std::span<const std::size_t>(order).subspan(begin, end - begin)));
    begin = end;
  }
  return parts;
}

}  // namespace prevalshift
