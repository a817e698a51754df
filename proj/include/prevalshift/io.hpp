#pragma once

// CSV ingestion with a JSON sidecar schema, and JSON/CSV serialization of
// calibrators, fitted models and reports.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "prevalshift/calibration.hpp"
#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/estimators.hpp"
#include "prevalshift/metrics.hpp"
#include "prevalshift/simulation.hpp"

namespace prevalshift::io {

using nlohmann::json;

inline constexpr int kCalibratorFormatVersion = 1;
inline constexpr int kModelFormatVersion = 1;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) fail(ErrorCode::IoError, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot rename into '" + path.string() + "': " + ec.message());
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, what + ": " + e.what());
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Table schema

enum class ColumnRole { Categorical, Numeric, Label, Score, Weight };

inline ColumnRole parse_role(const std::string& s) {
  if (s == "categorical") return ColumnRole::Categorical;
  if (s == "numeric") return ColumnRole::Numeric;
  if (s == "label") return ColumnRole::Label;
  if (s == "score") return ColumnRole::Score;
  if (s == "weight") return ColumnRole::Weight;
  fail(ErrorCode::InvalidConfig, "unknown column type '" + s + "'");
}

inline std::string to_string(ColumnRole r) {
  switch (r) {
    case ColumnRole::Categorical: return "categorical";
    case ColumnRole::Numeric: return "numeric";
    case ColumnRole::Label: return "label";
    case ColumnRole::Score: return "score";
    case ColumnRole::Weight: return "weight";
  }
  return "?";
}

struct ColumnDecl {
  std::string name;
  ColumnRole role = ColumnRole::Numeric;
  std::vector<std::string> categories;
};

/// Sidecar description of a CSV file:
/// {"columns": [{"name": "...", "type": "categorical|numeric|label|score|weight",
///               "categories": [...optional...]}]}
struct TableSchema {
  std::vector<ColumnDecl> columns;

  /// Feature schema in sidecar order; categorical dictionaries start from the
  /// declared categories.
  Schema feature_schema() const {
    Schema s;
    for (const auto& c : columns) {
      if (c.role == ColumnRole::Categorical) s.features.push_back({c.name, FeatureKind::Categorical, c.categories});
      if (c.role == ColumnRole::Numeric) s.features.push_back({c.name, FeatureKind::Numeric, {}});
    }
    return s;
  }
};

inline TableSchema table_schema_from_json(const json& j) {
  if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array())
    fail(ErrorCode::InvalidConfig, "schema must be an object with a 'columns' array");
  for (const auto& [key, _] : j.items())
    if (key != "columns") fail(ErrorCode::InvalidConfig, "unknown schema key '" + key + "'");
  TableSchema t;
  std::map<ColumnRole, int> singletons;
  for (const auto& c : j["columns"]) {
    for (const auto& [key, _] : c.items())
      if (key != "name" && key != "type" && key != "categories")
        fail(ErrorCode::InvalidConfig, "unknown schema column key '" + key + "'");
    if (!c.contains("name") || !c["name"].is_string() || !c.contains("type") || !c["type"].is_string())
      fail(ErrorCode::InvalidConfig, "schema column needs string 'name' and 'type'");
    ColumnDecl d{c["name"].get<std::string>(), parse_role(c["type"].get<std::string>()), {}};
    if (c.contains("categories")) {
      if (d.role != ColumnRole::Categorical)
        fail(ErrorCode::InvalidConfig, "'categories' is only valid on categorical columns");
      d.categories = c["categories"].get<std::vector<std::string>>();
    }
    for (const auto& prev : t.columns)
      if (prev.name == d.name) fail(ErrorCode::InvalidConfig, "duplicate schema column '" + d.name + "'");
    if (d.role == ColumnRole::Label || d.role == ColumnRole::Score || d.role == ColumnRole::Weight)
      if (++singletons[d.role] > 1) fail(ErrorCode::InvalidConfig, "more than one " + to_string(d.role) + " column");
    t.columns.push_back(std::move(d));
  }
  return t;
}

inline TableSchema read_table_schema(const std::filesystem::path& path) {
  return table_schema_from_json(parse_json(read_file(path), "schema " + path.string()));
}

inline json to_json(const TableSchema& t) {
  json cols = json::array();
  for (const auto& c : t.columns) {
    json jc = {{"name", c.name}, {"type", to_string(c.role)}};
    if (!c.categories.empty()) jc["categories"] = c.categories;
    cols.push_back(jc);
  }
  return {{"columns", cols}};
}

/// Sidecar for a dataset: features in schema order, then label, score, weight.
inline TableSchema table_schema_for(const Dataset& d, bool with_weight = false) {
  TableSchema t;
  for (const auto& f : d.schema().features)
    t.columns.push_back(
        {f.name, f.kind == FeatureKind::Categorical ? ColumnRole::Categorical : ColumnRole::Numeric, f.categories});
  t.columns.push_back({"label", ColumnRole::Label, {}});
  t.columns.push_back({"score", ColumnRole::Score, {}});
  if (with_weight) t.columns.push_back({"weight", ColumnRole::Weight, {}});
  return t;
}

// ---------------------------------------------------------------------------
// CSV

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::optional<double> parse_number(const std::string& text) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && end[-1] == ' ') --end;
  if (begin < end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || begin == end) return std::nullopt;
  return v;
}

/// Parses CSV text against a sidecar schema. Rows are numbered from 1 after
/// the header in error messages. When `base` is given its feature layout must
/// match, and its category dictionaries are extended rather than rebuilt so
/// category ids agree with data parsed earlier.
inline Dataset parse_csv(const std::string& text, const TableSchema& table, const Schema* base = nullptr) {
  Schema schema = table.feature_schema();
  if (base != nullptr) {
    if (base->fingerprint() != schema.fingerprint())
      fail(ErrorCode::SchemaMismatch,
           "schema fingerprint " + schema.fingerprint() + " does not match expected " + base->fingerprint());
    for (std::size_t j = 0; j < schema.features.size(); ++j) {
      auto& cats = schema.features[j].categories;
      std::vector<std::string> merged = base->features[j].categories;
      for (const auto& c : cats)
        if (std::find(merged.begin(), merged.end(), c) == merged.end()) merged.push_back(c);
      cats = std::move(merged);
    }
  }

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, "empty CSV: no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line, 0);

  // column index in the file for each schema column
  std::vector<std::size_t> position(table.columns.size());
  for (std::size_t k = 0; k < table.columns.size(); ++k) {
    auto it = std::find(header.begin(), header.end(), table.columns[k].name);
    if (it == header.end()) fail(ErrorCode::ParseError, "header lacks column '" + table.columns[k].name + "'");
    position[k] = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<Row> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++row_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line, row_no);
    if (fields.size() != header.size())
      fail(ErrorCode::ParseError, "row " + std::to_string(row_no) + ": expected " + std::to_string(header.size()) +
                                      " fields, found " + std::to_string(fields.size()));
    std::vector<std::pair<FeatureId, CategoryId>> cats;
    std::vector<std::pair<FeatureId, double>> nums;
    Row r;
    FeatureId feature = 0;
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
      const auto& col = table.columns[k];
      const std::string& raw = fields[position[k]];
      auto where = [&] { return "row " + std::to_string(row_no) + ", column '" + col.name + "'"; };
      switch (col.role) {
        case ColumnRole::Categorical: {
          if (raw.empty()) fail(ErrorCode::ParseError, where() + ": empty category");
          auto& dict = schema.features[feature].categories;
          auto it = std::find(dict.begin(), dict.end(), raw);
          if (it == dict.end()) {
            dict.push_back(raw);
            it = dict.end() - 1;
          }
          cats.emplace_back(feature++, static_cast<CategoryId>(it - dict.begin()));
          break;
        }
        case ColumnRole::Numeric: {
          auto v = parse_number(raw);
          if (!v || !std::isfinite(*v)) fail(ErrorCode::ParseError, where() + ": '" + raw + "' is not a finite number");
          nums.emplace_back(feature++, *v);
          break;
        }
        case ColumnRole::Label: {
          if (raw.empty()) break;
          auto v = parse_number(raw);
          if (!v || (*v != 0.0 && *v != 1.0)) fail(ErrorCode::ParseError, where() + ": label '" + raw + "' is not 0 or 1");
          r.label = static_cast<int>(*v);
          break;
        }
        case ColumnRole::Score: {
          if (raw.empty()) break;
          auto v = parse_number(raw);
          if (!v || !(*v >= 0.0 && *v <= 1.0))
            fail(ErrorCode::ParseError, where() + ": score '" + raw + "' is not a probability");
          r.score = *v;
          break;
        }
        case ColumnRole::Weight: {
          if (raw.empty()) break;
          auto v = parse_number(raw);
          if (!v || !(*v > 0.0) || !std::isfinite(*v))
            fail(ErrorCode::ParseError, where() + ": weight '" + raw + "' is not positive");
          r.weight = *v;
          break;
        }
      }
    }
    r.features = FeatureVector(std::move(cats), std::move(nums));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail(ErrorCode::EmptyDataset, "CSV has a header but no data rows");
  return Dataset(std::move(schema), std::move(rows));
}

inline Dataset read_csv(const std::filesystem::path& path, const TableSchema& table, const Schema* base = nullptr) {
  return parse_csv(read_file(path), table, base);
}

/// Renders rows in sidecar column order. Absent labels/scores become empty fields.
inline std::string format_csv(const Dataset& data, const TableSchema& table) {
  const Schema& schema = data.schema();
  std::string out;
  for (std::size_t k = 0; k < table.columns.size(); ++k) out += (k ? "," : "") + csv_field(table.columns[k].name);
  out += '\n';
  std::vector<std::optional<FeatureId>> ids;
  for (const auto& c : table.columns) ids.push_back(schema.find(c.name));
  for (const auto& r : data.rows()) {
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
      if (k) out += ',';
      const auto& c = table.columns[k];
      switch (c.role) {
        case ColumnRole::Categorical:
          if (!ids[k]) fail(ErrorCode::SchemaMismatch, "dataset lacks feature '" + c.name + "'");
          out += csv_field(schema.features[*ids[k]].categories[*r.features.categorical(*ids[k])]);
          break;
        case ColumnRole::Numeric:
          if (!ids[k]) fail(ErrorCode::SchemaMismatch, "dataset lacks feature '" + c.name + "'");
          out += format_double(*r.features.numeric(*ids[k]));
          break;
        case ColumnRole::Label:
          if (r.label) out += std::to_string(*r.label);
          break;
        case ColumnRole::Score:
          if (r.score) out += format_double(*r.score);
          break;
        case ColumnRole::Weight:
          out += format_double(r.weight);
          break;
      }
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schema <-> JSON (feature schema with dictionaries, embedded in models)

inline json to_json(const Schema& s) {
  json out = json::array();
  for (const auto& f : s.features) {
    json jf = {{"name", f.name}, {"kind", f.kind == FeatureKind::Categorical ? "categorical" : "numeric"}};
    if (f.kind == FeatureKind::Categorical) jf["categories"] = f.categories;
    out.push_back(jf);
  }
  return out;
}

inline Schema schema_from_json(const json& j) {
  Schema s;
  for (const auto& jf : j) {
    FeatureDecl f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "categorical") {
      f.kind = FeatureKind::Categorical;
      f.categories = jf.at("categories").get<std::vector<std::string>>();
    } else if (kind == "numeric") {
      f.kind = FeatureKind::Numeric;
    } else {
      fail(ErrorCode::ParseError, "unknown feature kind '" + kind + "'");
    }
    s.features.push_back(std::move(f));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Calibrators

inline json to_json(const BoostConfig& c) {
  return {{"max_rounds", c.max_rounds},
          {"trees_per_round", c.trees_per_round},
          {"tree_depth", c.tree_depth},
          {"min_leaf", c.min_leaf},
          {"learning_rate", c.learning_rate},
          {"early_stop_patience", c.early_stop_patience},
          {"validation_fraction", c.validation_fraction},
          {"squash_epsilon", c.squash_epsilon}};
}

/// Reads the keys present in `j` over the defaults; unknown keys are rejected.
inline BoostConfig boost_config_from_json(const json& j, BoostConfig c = {}) {
  for (const auto& [key, v] : j.items()) {
    if (key == "max_rounds") c.max_rounds = v.get<int>();
    else if (key == "trees_per_round") c.trees_per_round = v.get<int>();
    else if (key == "tree_depth") c.tree_depth = v.get<int>();
    else if (key == "min_leaf") c.min_leaf = v.get<int>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "early_stop_patience") c.early_stop_patience = v.get<int>();
    else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
    else if (key == "squash_epsilon") c.squash_epsilon = v.get<double>();
    else fail(ErrorCode::InvalidConfig, "unknown boost config key '" + key + "'");
  }
  c.validate();
  return c;
}

inline json to_json(const GroupSpec& g) {
  json terms = json::array();
  for (const auto& t : g.terms()) {
    json jt = {{"name", t.name},
               {"id", t.id},
               {"kind", t.kind == FeatureKind::Categorical ? "categorical" : "numeric"}};
    if (t.kind == FeatureKind::Categorical)
      jt["categories"] = t.categories;
    else
      jt["edges"] = t.edges;
    terms.push_back(jt);
  }
  return terms;
}

inline GroupSpec group_spec_from_json(const json& j) {
  std::vector<GroupSpec::Term> terms;
  for (const auto& jt : j) {
    GroupSpec::Term t;
    t.name = jt.at("name").get<std::string>();
    t.id = jt.at("id").get<FeatureId>();
    t.kind = jt.at("kind").get<std::string>() == "categorical" ? FeatureKind::Categorical : FeatureKind::Numeric;
    if (t.kind == FeatureKind::Categorical)
      t.categories = jt.at("categories").get<std::vector<std::string>>();
    else
      t.edges = jt.at("edges").get<std::vector<double>>();
    terms.push_back(std::move(t));
  }
  return GroupSpec(std::move(terms));
}

inline json to_json(const RegressionTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes())
    nodes.push_back({n.feature, n.categorical ? 1 : 0, n.threshold, n.left, n.right, n.value});
  return nodes;
}

inline RegressionTree tree_from_json(const json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& jn : j) {
    TreeNode n;
    n.feature = jn.at(0).get<int>();
    n.categorical = jn.at(1).get<int>() != 0;
    n.threshold = jn.at(2).get<double>();
    n.left = jn.at(3).get<int>();
    n.right = jn.at(4).get<int>();
    n.value = jn.at(5).get<double>();
    nodes.push_back(n);
  }
  const auto count = static_cast<int>(nodes.size());
  if (count == 0) fail(ErrorCode::ParseError, "tree has no nodes");
  for (const auto& n : nodes)
    if (n.feature >= 0 && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count))
      fail(ErrorCode::ParseError, "tree node points outside the tree");
  return RegressionTree(std::move(nodes));
}

inline json to_json(const Calibrator& c) {
  json out = {{"format", "prevalshift.calibrator"},
              {"version", kCalibratorFormatVersion},
              {"id", c.id},
              {"schema_fingerprint", c.schema_fingerprint}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IdentityCalibration>) {
          out["variant"] = "identity";
          out["params"] = json::object();
        } else if constexpr (std::is_same_v<T, GlobalMultiplicative>) {
          out["variant"] = "global_multiplicative";
          out["params"] = {{"factor", m.factor}};
        } else if constexpr (std::is_same_v<T, IsotonicCalibration>) {
          out["variant"] = "isotonic";
          out["params"] = {{"breakpoints", m.step.breakpoints}, {"levels", m.step.levels}};
        } else if constexpr (std::is_same_v<T, StratumAdditive>) {
          out["variant"] = "stratum_additive";
          out["params"] = {{"groups", to_json(m.groups)}, {"offsets", m.offsets}, {"fallback_offset", m.fallback_offset}};
        } else {
          json inputs = json::array();
          for (const auto& in : m.inputs)
            inputs.push_back({{"name", in.name},
                              {"id", in.id},
                              {"kind", in.kind == FeatureKind::Categorical ? "categorical" : "numeric"}});
          json rounds = json::array();
          for (const auto& r : m.rounds) {
            json trees = json::array();
            for (const auto& t : r.trees) trees.push_back(to_json(t));
            rounds.push_back({{"alpha", r.alpha}, {"trees", trees}});
          }
          out["variant"] = "boosted";
          out["params"] = {{"config", to_json(m.config)},
                           {"inputs", inputs},
                           {"rounds", rounds},
                           {"validation_loss", m.validation_loss}};
        }
      },
      c.model);
  return out;
}

inline Calibrator calibrator_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "prevalshift.calibrator")
      fail(ErrorCode::ParseError, "not a calibrator document");
    const int version = j.at("version").get<int>();
    if (version != kCalibratorFormatVersion)
      fail(ErrorCode::ParseError, "unsupported calibrator version " + std::to_string(version));
    Calibrator c;
    c.id = j.at("id").get<std::string>();
    c.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
    const auto variant = j.at("variant").get<std::string>();
    const auto& p = j.at("params");
    if (variant == "identity") {
      c.model = IdentityCalibration{};
    } else if (variant == "global_multiplicative") {
      c.model = GlobalMultiplicative{p.at("factor").get<double>()};
    } else if (variant == "isotonic") {
      StepFunction s{p.at("breakpoints").get<std::vector<double>>(), p.at("levels").get<std::vector<double>>()};
      if (s.breakpoints.empty() || s.breakpoints.size() != s.levels.size() ||
          !std::is_sorted(s.levels.begin(), s.levels.end()) ||
          std::adjacent_find(s.breakpoints.begin(), s.breakpoints.end(), std::greater_equal<>()) !=
              s.breakpoints.end())
        fail(ErrorCode::ParseError, "isotonic step function is malformed");
      c.model = IsotonicCalibration{std::move(s)};
    } else if (variant == "stratum_additive") {
      c.model = StratumAdditive{group_spec_from_json(p.at("groups")),
                                p.at("offsets").get<std::map<std::string, double>>(),
                                p.at("fallback_offset").get<double>()};
    } else if (variant == "boosted") {
      BoostedEnsemble e;
      e.config = boost_config_from_json(p.at("config"));
      for (const auto& in : p.at("inputs"))
        e.inputs.push_back({in.at("name").get<std::string>(), in.at("id").get<FeatureId>(),
                            in.at("kind").get<std::string>() == "categorical" ? FeatureKind::Categorical
                                                                               : FeatureKind::Numeric});
      for (const auto& r : p.at("rounds")) {
        const double alpha = r.at("alpha").get<double>();
        if (!(alpha > 0.0)) fail(ErrorCode::ParseError, "unshrinkage factor must be positive");
        BoostRound round;
        for (const auto& t : r.at("trees")) round.trees.push_back(tree_from_json(t));
        round.alpha = alpha;
        e.rounds.push_back(std::move(round));
      }
      e.validation_loss = p.at("validation_loss").get<std::vector<double>>();
      c.model = std::move(e);
    } else {
      fail(ErrorCode::ParseError, "unknown calibrator variant '" + variant + "'");
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed calibrator JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Fitted model bundle: calibrators plus the fixed quantifier parameters

struct ModelBundle {
  Schema schema;
  std::vector<Calibrator> calibrators;
  QuantifierFits quantifiers;
};

inline json to_json(const ModelBundle& m) {
  json cals = json::array();
  for (const auto& c : m.calibrators) cals.push_back(to_json(c));
  json q = json::object();
  if (m.quantifiers.threshold) q["tau"] = m.quantifiers.threshold->tau;
  if (m.quantifiers.rates) {
    q["tpr"] = m.quantifiers.rates->tpr;
    q["fpr"] = m.quantifiers.rates->fpr;
  }
  if (m.quantifiers.means) {
    q["mu1"] = m.quantifiers.means->mu1;
    q["mu0"] = m.quantifiers.means->mu0;
  }
  if (m.quantifiers.source) q["pi_s"] = m.quantifiers.source->pi_s;
  return {{"format", "prevalshift.model"},
          {"version", kModelFormatVersion},
          {"schema_fingerprint", m.schema.fingerprint()},
          {"schema", to_json(m.schema)},
          {"calibrators", cals},
          {"quantifiers", q}};
}

inline ModelBundle model_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "prevalshift.model") fail(ErrorCode::ParseError, "not a model document");
    if (j.at("version").get<int>() != kModelFormatVersion) fail(ErrorCode::ParseError, "unsupported model version");
    ModelBundle m;
    m.schema = schema_from_json(j.at("schema"));
    if (m.schema.fingerprint() != j.at("schema_fingerprint").get<std::string>())
      fail(ErrorCode::ParseError, "embedded schema does not match its fingerprint");
    for (const auto& c : j.at("calibrators")) m.calibrators.push_back(calibrator_from_json(c));
    const auto& q = j.at("quantifiers");
    if (q.contains("tau")) m.quantifiers.threshold = ThresholdFit{q["tau"].get<double>()};
    if (q.contains("tpr"))
      m.quantifiers.rates = ErrorRateFit{q.at("tpr").get<double>(), q.at("fpr").get<double>(), q.at("tau").get<double>()};
    if (q.contains("mu1")) m.quantifiers.means = ClassMeanFit{q.at("mu1").get<double>(), q.at("mu0").get<double>()};
    if (q.contains("pi_s")) m.quantifiers.source = SourcePrevalence{q["pi_s"].get<double>()};
    for (const auto& c : m.calibrators) m.quantifiers.calibrators.emplace(c.id, c);
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed model JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

inline std::string sweep_csv(const SweepReport& r) {
  std::string out = "p_x0,delta,method,mean_estimate,bias,relative_bias_pct,rmse,truth_population,truth_sample\n";
  for (const auto& row : r.rows) {
    out += format_double(row.p_x0) + ',' + format_double(row.delta) + ',' + row.method + ',' +
           format_double(row.mean_estimate) + ',' + format_double(row.bias) + ',' +
           format_double(row.relative_bias_pct) + ',' + format_double(row.rmse) + ',' +
           format_double(row.truth_population) + ',' + format_double(row.truth_sample) + '\n';
  }
  return out;
}

inline json to_json(const SweepReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"p_x0", row.p_x0},
                    {"delta", row.delta},
                    {"method", row.method},
                    {"mean_estimate", row.mean_estimate},
                    {"bias", row.bias},
                    {"relative_bias_pct", row.relative_bias_pct},
                    {"rmse", row.rmse},
                    {"truth_population", row.truth_population},
                    {"truth_sample", row.truth_sample}});
  return {{"metadata",
           {{"config_hash", r.config_hash},
            {"seed", r.seed.value},
            {"iterations", r.iterations},
            {"n", r.n},
            {"methods", r.methods},
            {"rng", std::string(kRngVersion)}}},
          {"rows", rows}};
}

inline json to_json(const PrevalenceEstimate& e) {
  return {{"method", e.method}, {"value", e.value}, {"diagnostics", e.diagnostics}};
}

inline json to_json(const CalibrationReport& r) {
  json cells = json::array();
  for (const auto& c : r.per_group_bin_gaps)
    cells.push_back({{"group", c.group}, {"bin", c.bin}, {"count", c.count}, {"gap", c.gap}});
  return {{"global_gap", r.global_gap},
          {"per_group_gaps", r.per_group_gaps},
          {"per_group_counts", r.per_group_counts},
          {"per_group_bin_gaps", cells},
          {"bin_edges", r.bin_edges},
          {"omitted_cells", r.omitted_cells}};
}

inline json to_json(const ScoreHistogram& h) {
  return {{"bin_edges", h.bin_edges},     {"total", h.total},
          {"positive", h.positive},       {"negative", h.negative},
          {"unlabeled", h.unlabeled},     {"unique_scores", h.unique_scores},
          {"boundary_mass", h.boundary_mass}};
}

/// Plot-ready rows: bin_lo, bin_hi, total, positive, negative, unlabeled.
inline std::string histogram_csv(const ScoreHistogram& h) {
  std::string out = "bin_lo,bin_hi,total,positive,negative,unlabeled\n";
  for (std::size_t k = 0; k < h.total.size(); ++k)
    out += format_double(h.bin_edges[k]) + ',' + format_double(h.bin_edges[k + 1]) + ',' + std::to_string(h.total[k]) +
           ',' + std::to_string(h.positive[k]) + ',' + std::to_string(h.negative[k]) + ',' +
           std::to_string(h.unlabeled[k]) + '\n';
  return out;
}

}  // namespace prevalshift::io
