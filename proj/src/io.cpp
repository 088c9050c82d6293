#include "pdemee/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pdemee/error.hpp"

namespace pdemee {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double x) {
  if (std::isnan(x)) return "NA";
  if (std::isinf(x)) return x > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

// ---------------------------------------------------------------- CSV reading

std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted field", lineno);
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "na" || s == "NaN"; }

double parse_double(const std::string& s, const std::string& column, std::size_t lineno) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw DataError("column '" + column + "': expected a number, got '" + s + "'", lineno);
  return v;
}

long parse_int(const std::string& s, const std::string& column, std::size_t lineno) {
  long v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw DataError("column '" + column + "': expected an integer, got '" + s + "'", lineno);
  return v;
}

std::uint8_t parse_binary(const std::string& s, const std::string& column, std::size_t lineno) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw DataError("column '" + column + "': expected 0 or 1, got '" + s + "'", lineno);
}

struct RawRow {
  std::size_t line = 0;
  long decision_point = 0;
  bool follow_up = false;
  std::uint8_t available = 0;
  std::uint8_t treatment = 0;
  double rand_prob = 0.0;
  std::uint8_t sub = 0;
  std::vector<double> values;  // per selected covariate source column
};

const char* const kRequired[] = {"id", "decision_point", "available", "treatment", "rand_prob", "sub_outcome"};

std::string strip_prefix(const std::string& column) {
  if (column.rfind("mod_", 0) == 0 || column.rfind("ctl_", 0) == 0) return column.substr(4);
  return column;
}

}  // namespace

IngestResult ingest_csv(std::istream& in, int delta, const IngestOptions& options) {
  if (delta < 1) throw ConfigError("delta must be >= 1");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError("empty input");
  ++lineno;
  std::vector<std::string> header = split_csv_line(line, lineno);
  for (auto& h : header) h = trim(h);
  std::map<std::string, std::size_t> where;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!where.emplace(header[c], c).second) throw DataError("duplicate column '" + header[c] + "'", lineno);
  }
  for (const char* req : kRequired)
    if (!where.count(req)) throw DataError(std::string("missing required column '") + req + "'", lineno);

  // Covariate selections: default to every mod_* / ctl_* column.
  auto defaults = [&](const char* prefix) {
    std::vector<ColumnSpec> specs;
    for (const auto& h : header)
      if (h.rfind(prefix, 0) == 0) specs.push_back({h, Transform::Identity, strip_prefix(h)});
    return specs;
  };
  std::vector<ColumnSpec> mods = options.moderators.empty() ? defaults("mod_") : options.moderators;
  std::vector<ColumnSpec> ctls = options.controls.empty() ? defaults("ctl_") : options.controls;

  // Distinct source columns read per row.
  std::vector<std::string> sources;
  std::map<std::string, std::size_t> source_index;
  auto register_source = [&](ColumnSpec& spec) {
    if (spec.name.empty()) spec.name = spec.transform == Transform::DayIndex ? "day" : strip_prefix(spec.column);
    if (spec.transform == Transform::DayIndex) return;
    if (!where.count(spec.column)) throw DataError("unknown covariate column '" + spec.column + "'");
    if (source_index.emplace(spec.column, sources.size()).second) sources.push_back(spec.column);
  };
  for (auto& s : mods) register_source(s);
  for (auto& s : ctls) register_source(s);

  std::vector<std::string> warnings;

  std::vector<std::string> ids;
  std::vector<std::vector<RawRow>> people;
  std::set<std::string> seen;
  const std::size_t ncols = header.size();
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line, lineno);
    if (f.size() != ncols)
      throw DataError("expected " + std::to_string(ncols) + " fields, found " + std::to_string(f.size()), lineno);
    for (auto& x : f) x = trim(x);
    const std::string& id = f[where["id"]];
    if (id.empty()) throw DataError("empty id", lineno);
    if (ids.empty() || ids.back() != id) {
      if (!seen.insert(id).second) throw DataError("rows of id '" + id + "' are not contiguous", lineno);
      ids.push_back(id);
      people.emplace_back();
    }
    RawRow row;
    row.line = lineno;
    row.decision_point = parse_int(f[where["decision_point"]], "decision_point", lineno);
    const std::string& avail = f[where["available"]];
    row.follow_up = is_missing(avail);
    const std::string& sub = f[where["sub_outcome"]];
    if (is_missing(sub)) throw DataError("missing sub_outcome", lineno);
    row.sub = parse_binary(sub, "sub_outcome", lineno);
    if (!row.follow_up) {
      row.available = parse_binary(avail, "available", lineno);
      const std::string& trt = f[where["treatment"]];
      if (is_missing(trt)) throw DataError("missing treatment on a decision row", lineno);
      row.treatment = parse_binary(trt, "treatment", lineno);
      if (!row.available && row.treatment)
        throw DataError("treatment = 1 at an unavailable decision point", lineno);
      const std::string& prob = f[where["rand_prob"]];
      if (row.available) {
        if (is_missing(prob)) throw DataError("missing rand_prob at an available decision point", lineno);
        row.rand_prob = parse_double(prob, "rand_prob", lineno);
        if (!(row.rand_prob > 0.0 && row.rand_prob < 1.0))
          throw DataError("rand_prob must lie in (0,1) at an available decision point", lineno);
      }
      row.values.resize(sources.size());
      for (std::size_t s = 0; s < sources.size(); ++s) {
        const std::string& v = f[where[sources[s]]];
        if (is_missing(v)) throw DataError("missing value in column '" + sources[s] + "'", lineno);
        row.values[s] = parse_double(v, sources[s], lineno);
      }
    }
    people.back().push_back(std::move(row));
  }
  if (people.empty()) throw DataError("no data rows");

  MrtColumns cols;
  cols.delta = delta;
  cols.ids = ids;
  std::vector<const RawRow*> decision_rows;
  std::size_t extra_follow_ups = 0;
  for (std::size_t i = 0; i < people.size(); ++i) {
    const auto& rows = people[i];
    int decisions = 0;
    int follow_ups = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].decision_point != rows[0].decision_point + static_cast<long>(k))
        throw DataError("decision_point of id '" + ids[i] + "' is not consecutive", rows[k].line);
      if (rows[k].follow_up) {
        ++follow_ups;
      } else {
        if (follow_ups > 0) throw DataError("decision row after follow-up rows for id '" + ids[i] + "'", rows[k].line);
        ++decisions;
      }
    }
    if (decisions == 0) throw StructuralError("individual '" + ids[i] + "' has no decision points");
    if (follow_ups < delta)
      throw StructuralError("individual '" + ids[i] + "' has " + std::to_string(follow_ups) +
                            " follow-up sub_outcome rows; delta = " + std::to_string(delta) + " requires " +
                            std::to_string(delta));
    extra_follow_ups += static_cast<std::size_t>(follow_ups - delta);
    cols.lengths.push_back(decisions);
    for (int k = 0; k < decisions; ++k) decision_rows.push_back(&rows[k]);
    for (int k = 0; k < decisions + delta; ++k) cols.sub_outcome.push_back(rows[k].sub);
  }
  if (extra_follow_ups > 0)
    warnings.push_back(std::to_string(extra_follow_ups) + " follow-up rows beyond delta were ignored");

  const auto nrows = decision_rows.size();
  for (const auto* r : decision_rows) {
    cols.available.push_back(r->available);
    cols.treatment.push_back(r->treatment);
    cols.rand_prob.push_back(r->available ? r->rand_prob : 0.0);
  }

  auto build = [&](const std::vector<ColumnSpec>& specs, RowMatrix& m, std::vector<std::string>& names) {
    m.resize(static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(specs.size() + 1));
    m.col(0).setOnes();
    names = {"intercept"};
    for (std::size_t s = 0; s < specs.size(); ++s) {
      const auto c = static_cast<Eigen::Index>(s + 1);
      for (std::size_t r = 0; r < nrows; ++r) {
        const auto* row = decision_rows[r];
        m(static_cast<Eigen::Index>(r), c) = specs[s].transform == Transform::DayIndex
                                                 ? static_cast<double>(row->decision_point - 1)
                                                 : row->values[source_index[specs[s].column]];
      }
      if (specs[s].transform == Transform::Center) m.col(c).array() -= m.col(c).mean();
      if (std::find(names.begin(), names.end(), specs[s].name) != names.end())
        throw DataError("duplicate covariate name '" + specs[s].name + "'");
      names.push_back(specs[s].name);
    }
  };
  build(mods, cols.moderators, cols.moderator_names);
  build(ctls, cols.controls, cols.control_names);

  IngestResult result{MrtDataset(std::move(cols)), std::move(warnings)};
  if (result.dataset.constant_rand_prob())
    result.warnings.push_back("rand_prob is constant at available decision points; the Constant numerator applies");
  return result;
}

IngestResult ingest_csv(const fs::path& path, int delta, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return ingest_csv(in, delta, options);
}

namespace {

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_csv(const MrtDataset& data, std::ostream& out) {
  auto skip_first = [](const std::vector<std::string>& names, const RowMatrix& m) {
    return !names.empty() && names[0] == "intercept" && m.rows() > 0 && (m.col(0).array() == 1.0).all();
  };
  const bool mod_skip = skip_first(data.moderator_names(), data.moderators());
  const bool ctl_skip = skip_first(data.control_names(), data.controls());
  const auto p = data.moderators().cols();
  const auto q = data.controls().cols();

  out << "id,decision_point,available,treatment,rand_prob,sub_outcome";
  for (Eigen::Index c = mod_skip ? 1 : 0; c < p; ++c) out << ",mod_" << quote_csv(data.moderator_names()[c]);
  for (Eigen::Index c = ctl_skip ? 1 : 0; c < q; ++c) out << ",ctl_" << quote_csv(data.control_names()[c]);
  out << '\n';
  const auto blanks = (p - (mod_skip ? 1 : 0)) + (q - (ctl_skip ? 1 : 0));
  for (int i = 0; i < data.n(); ++i) {
    const auto id = quote_csv(data.id(i));
    const auto sub = data.sub_outcomes(i);
    for (int t = 0; t < data.length(i); ++t) {
      const auto r = data.row(i, t);
      const auto ri = static_cast<Eigen::Index>(r);
      out << id << ',' << t + 1 << ',' << int(data.available(r)) << ',' << data.treatment(r) << ','
          << format_number(data.rand_prob(r)) << ',' << int(sub[t]);
      for (Eigen::Index c = mod_skip ? 1 : 0; c < p; ++c) out << ',' << format_number(data.moderators()(ri, c));
      for (Eigen::Index c = ctl_skip ? 1 : 0; c < q; ++c) out << ',' << format_number(data.controls()(ri, c));
      out << '\n';
    }
    for (int s = 0; s < data.delta(); ++s) {
      out << id << ',' << data.length(i) + s + 1 << ",NA,NA,NA," << int(sub[data.length(i) + s]);
      for (Eigen::Index c = 0; c < blanks; ++c) out << ",NA";
      out << '\n';
    }
  }
}

void write_csv(const MrtDataset& data, const fs::path& path) {
  std::ostringstream out;
  write_csv(data, out);
  write_file_atomic(path, out.str());
}

// ------------------------------------------------------------------ config

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

Transform parse_transform(const std::string& s) {
  if (s == "identity") return Transform::Identity;
  if (s == "center" || s == "centering") return Transform::Center;
  if (s == "day-index" || s == "day_index") return Transform::DayIndex;
  throw ConfigError("unknown transform '" + s + "' (identity, center, day-index)");
}

std::vector<ColumnSpec> parse_columns(const json& j) {
  std::vector<ColumnSpec> out;
  if (!j.is_array()) throw ConfigError("covariate lists must be arrays");
  for (const auto& item : j) {
    if (item.is_string()) {
      out.push_back({item.get<std::string>(), Transform::Identity, ""});
    } else {
      check_keys(item, "covariate", {"column", "transform", "name"});
      ColumnSpec c;
      c.column = get_or<std::string>(item, "column", "");
      c.transform = parse_transform(get_or<std::string>(item, "transform", "identity"));
      c.name = get_or<std::string>(item, "name", "");
      if (c.column.empty() && c.transform != Transform::DayIndex) throw ConfigError("covariate needs a column");
      out.push_back(std::move(c));
    }
  }
  return out;
}

const std::set<std::string> kKinds = {"pd-emee", "emee", "ref-k", "ref-k-full", "gee-ind", "gee-exch"};

}  // namespace

RunConfig parse_run_config(const json& j) {
  try {
    check_keys(j, "config",
               {"mode", "seed", "threads", "out_dir", "input", "estimators", "inference", "generative", "reps",
                "sweep"});
    RunConfig c;
    const auto mode = get_or<std::string>(j, "mode", "fit");
    if (mode == "fit") c.mode = RunMode::Fit;
    else if (mode == "simulate") c.mode = RunMode::Simulate;
    else if (mode == "sweep") c.mode = RunMode::Sweep;
    else throw ConfigError("unknown mode '" + mode + "' (fit, simulate, sweep)");
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.threads = get_or<int>(j, "threads", 0);
    c.out_dir = get_or<std::string>(j, "out_dir", ".");
    c.reps = get_or<int>(j, "reps", 1000);

    if (j.contains("input")) {
      const auto& in = j.at("input");
      check_keys(in, "input", {"path", "delta", "moderators", "controls"});
      c.input = get_or<std::string>(in, "path", "");
      c.delta = get_or<int>(in, "delta", 1);
      if (in.contains("moderators")) c.ingest.moderators = parse_columns(in.at("moderators"));
      if (in.contains("controls")) c.ingest.controls = parse_columns(in.at("controls"));
    }
    if (j.contains("estimators")) {
      if (!j.at("estimators").is_array()) throw ConfigError("estimators must be an array");
      for (const auto& e : j.at("estimators")) {
        check_keys(e, "estimator", {"label", "kind", "k", "moderators", "controls", "numerator", "truth"});
        EstimatorConfig ec;
        ec.kind = get_or<std::string>(e, "kind", "pd-emee");
        ec.label = get_or<std::string>(e, "label", ec.kind);
        ec.k = get_or<int>(e, "k", 0);
        if (e.contains("moderators")) ec.moderators = e.at("moderators").get<std::vector<std::string>>();
        if (e.contains("controls") && !e.at("controls").is_null())
          ec.controls = e.at("controls").get<std::vector<std::string>>();
        ec.numerator = get_or<std::string>(e, "numerator", "default");
        if (e.contains("truth") && !e.at("truth").is_null()) ec.truth = e.at("truth").get<std::vector<double>>();
        c.estimators.push_back(std::move(ec));
      }
    }
    if (j.contains("inference")) {
      const auto& in = j.at("inference");
      check_keys(in, "inference", {"eta", "residual_correction", "t_critical", "df"});
      c.inference.eta = get_or<double>(in, "eta", 0.05);
      c.inference.residual_correction = get_or<bool>(in, "residual_correction", true);
      c.inference.t_critical = get_or<bool>(in, "t_critical", true);
      if (in.contains("df") && !in.at("df").is_null()) c.inference.df_override = in.at("df").get<int>();
    }
    if (j.contains("generative")) {
      const auto& g = j.at("generative");
      check_keys(g, "generative", {"n", "T", "delta", "p_a", "gamma"});
      c.generative.n = get_or<int>(g, "n", 100);
      c.generative.T = get_or<int>(g, "T", 100);
      c.generative.delta = get_or<int>(g, "delta", 3);
      c.generative.p_a = get_or<double>(g, "p_a", 0.2);
      c.generative.gamma = get_or<double>(g, "gamma", 0.5);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      check_keys(s, "sweep", {"axis", "grid"});
      const auto axis = get_or<std::string>(s, "axis", "delta");
      if (axis == "delta") c.axis = SweepAxis::Delta;
      else if (axis == "rand_prob" || axis == "p_a") c.axis = SweepAxis::RandProb;
      else if (axis == "k") c.axis = SweepAxis::K;
      else throw ConfigError("unknown sweep axis '" + axis + "' (delta, rand_prob, k)");
      if (s.contains("grid")) c.grid = s.at("grid").get<std::vector<double>>();
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_run_config(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

void RunConfig::validate() const {
  if (threads < 0) throw ConfigError("threads must be >= 0");
  inference.validate();
  std::set<std::string> labels;
  for (const auto& e : estimators) {
    if (!kKinds.count(e.kind)) throw ConfigError("unknown estimator kind '" + e.kind + "'");
    if (!labels.insert(e.label).second) throw ConfigError("duplicate estimator label '" + e.label + "'");
    if (e.moderators.empty()) throw ConfigError("estimator '" + e.label + "' needs moderators");
    const auto& n = e.numerator;
    if (n != "default" && n != "empirical" && n != "logistic" && n.rfind("constant:", 0) != 0)
      throw ConfigError("unknown numerator '" + n + "' (default, empirical, logistic, constant:<p>)");
  }
  switch (mode) {
    case RunMode::Fit:
      if (input.empty()) throw ConfigError("fit mode needs input.path");
      if (delta < 1) throw ConfigError("input.delta must be >= 1");
      if (estimators.empty()) throw ConfigError("fit mode needs at least one estimator");
      break;
    case RunMode::Simulate:
      if (estimators.empty()) throw ConfigError("simulate mode needs at least one estimator");
      if (reps < 1) throw ConfigError("reps must be >= 1");
      generative.validate();
      break;
    case RunMode::Sweep:
      if (grid.empty()) throw ConfigError("sweep mode needs a nonempty sweep.grid");
      if (reps < 3) throw ConfigError("sweep mode needs reps >= 3");
      generative.validate();
      break;
  }
}

AnalysisSpec resolve_estimator(const EstimatorConfig& config, const MrtDataset& data) {
  auto lookup = [](const std::vector<std::string>& names, const std::vector<std::string>& wanted, const char* what) {
    std::vector<int> cols;
    for (const auto& w : wanted) {
      const auto it = std::find(names.begin(), names.end(), w);
      if (it == names.end()) throw ConfigError(std::string("unknown ") + what + " '" + w + "'");
      cols.push_back(static_cast<int>(it - names.begin()));
    }
    return cols;
  };
  const auto mods = lookup(data.moderator_names(), config.moderators, "moderator");
  std::vector<int> ctls;
  if (config.controls) {
    ctls = lookup(data.control_names(), *config.controls, "control");
  } else {
    for (int c = 0; c < data.controls().cols(); ++c) ctls.push_back(c);
  }

  AnalysisSpec out;
  out.label = config.label;
  if (config.kind == "gee-ind" || config.kind == "gee-exch") {
    GeeSpec g;
    g.correlation = config.kind == "gee-ind" ? WorkingCorrelation::Independent : WorkingCorrelation::Exchangeable;
    g.moderator_cols = mods;
    g.control_cols = ctls;
    out.spec = g;
    return out;
  }
  EstimatorSpec s;
  s.kind = config.kind == "pd-emee"  ? EstimatorKind::PdEmee
           : config.kind == "emee"   ? EstimatorKind::Emee
           : config.kind == "ref-k"  ? EstimatorKind::RefRegimeK
                                     : EstimatorKind::RefRegimeKFull;
  s.k = config.k;
  s.moderator_cols = mods;
  s.control_cols = ctls;
  if (config.numerator == "empirical") {
    s.numerator = NumeratorPolicy{NumeratorPolicy::EmpiricalMean{}};
  } else if (config.numerator == "logistic") {
    s.numerator = NumeratorPolicy{NumeratorPolicy::LogisticOnS{}};
  } else if (config.numerator.rfind("constant:", 0) == 0) {
    const auto text = config.numerator.substr(9);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || !(v > 0.0 && v < 1.0))
      throw ConfigError("constant numerator must be a number in (0,1)");
    s.numerator = NumeratorPolicy{NumeratorPolicy::Constant{v}};
  }
  out.spec = s;
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NonConvergence*>(&e)) return 5;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const StructuralError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e))
    return 3;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  return 1;
}

// --------------------------------------------------------------------- run

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::string optional_text(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

json run_fit(const RunConfig& config, std::ostream& log) {
  auto ingested = ingest_csv(config.input, config.delta, config.ingest);
  for (const auto& w : ingested.warnings) log << "warning: " << w << '\n';
  const auto& data = ingested.dataset;
  const auto outcomes = build_proximal_outcomes(data);

  std::ostringstream csv;
  csv << "estimator,parameter,estimate,se,ci_low,ci_high,p_value,df,degenerate\n";
  json fits = json::array();
  for (const auto& ec : config.estimators) {
    const auto analysis = resolve_estimator(ec, data);
    const auto result = fit_analysis(data, outcomes, analysis, config.inference);
    json rows = json::array();
    for (const auto& row : summarize(result, config.inference)) {
      csv << quote_csv(ec.label) << ',' << quote_csv(row.name) << ',' << format_number(row.estimate) << ','
          << format_number(row.se) << ',' << format_number(row.ci_low) << ',' << format_number(row.ci_high) << ','
          << format_number(row.p_value) << ',' << result.diagnostics.df_used << ',' << (row.degenerate ? 1 : 0)
          << '\n';
      rows.push_back({{"parameter", row.name},
                      {"estimate", row.estimate},
                      {"se", row.se},
                      {"ci", {row.ci_low, row.ci_high}},
                      {"p_value", row.p_value},
                      {"degenerate", row.degenerate}});
    }
    if (result.diagnostics.clamp_warnings > 0)
      log << "warning: " << ec.label << ": " << result.diagnostics.clamp_warnings
          << " linear predictors clamped during the final evaluation\n";
    if (result.diagnostics.leverage_fallbacks > 0)
      log << "warning: " << ec.label << ": small-sample correction skipped for "
          << result.diagnostics.leverage_fallbacks << " individuals\n";
    fits.push_back({{"label", ec.label},
                    {"kind", ec.kind},
                    {"iterations", result.diagnostics.iterations},
                    {"residual_norm", result.diagnostics.final_residual_norm},
                    {"df", result.diagnostics.df_used},
                    {"working_correlation", result.diagnostics.working_correlation},
                    {"coefficients", rows}});
  }
  const auto path = config.out_dir / "coefficients.csv";
  write_file_atomic(path, csv.str());
  return {{"n", data.n()}, {"warnings", ingested.warnings}, {"fits", fits}, {"outputs", {path.string()}}};
}

json run_simulate(const RunConfig& config, std::ostream& log) {
  GenerativeConfig gen = config.generative;
  gen.seed = config.seed;
  GenerativeConfig small = gen;
  small.n = 1;
  small.T = 1;
  const auto names_template = generate_trial(small);

  std::vector<AnalysisSpec> analyses;
  std::vector<std::vector<double>> truth;
  for (const auto& ec : config.estimators) {
    analyses.push_back(resolve_estimator(ec, names_template));
    if (ec.truth) {
      truth.push_back(*ec.truth);
    } else if (ec.kind == "ref-k" || ec.kind == "ref-k-full") {
      throw ConfigError("estimator '" + ec.label + "' needs an explicit truth vector");
    } else if (ec.moderators == std::vector<std::string>{"intercept"}) {
      truth.push_back({true_marginal_beta0(gen)});
    } else if (ec.moderators == std::vector<std::string>{"intercept", "Z"}) {
      truth.push_back({0.1, 0.2});
    } else {
      throw ConfigError("estimator '" + ec.label + "' needs an explicit truth vector");
    }
  }
  const auto report = run_replications(gen, analyses, config.reps, truth, config.inference.eta);
  for (const auto& w : report.warnings) log << "warning: " << w << '\n';

  std::ostringstream csv;
  csv << "estimator,parameter,truth,n,reps_used,failed,Bias,SD,RMSE,CP.unadj,CP.adj,mean_SE,median_SE\n";
  json records = json::array();
  for (std::size_t r = 0; r < report.records.size(); ++r) {
    const auto& rec = report.records[r];
    std::size_t e = 0;
    while (report.labels[e] != rec.estimator) ++e;
    csv << quote_csv(rec.estimator) << ',' << rec.parameter << ',' << format_number(rec.truth) << ',' << gen.n << ','
        << rec.replications << ',' << report.failures[e] << ',' << format_number(rec.bias) << ','
        << optional_text(rec.sd) << ',' << optional_text(rec.rmse) << ',' << optional_text(rec.cp_unadj) << ','
        << optional_text(rec.cp_adj) << ',' << optional_text(rec.mean_se) << ',' << optional_text(rec.median_se)
        << '\n';
    records.push_back({{"estimator", rec.estimator},
                       {"parameter", rec.parameter},
                       {"truth", rec.truth},
                       {"reps_used", rec.replications},
                       {"failed", report.failures[e]},
                       {"Bias", rec.bias},
                       {"SD", optional_json(rec.sd)},
                       {"RMSE", optional_json(rec.rmse)},
                       {"CP.unadj", optional_json(rec.cp_unadj)},
                       {"CP.adj", optional_json(rec.cp_adj)},
                       {"mean_SE", optional_json(rec.mean_se)},
                       {"median_SE", optional_json(rec.median_se)}});
  }
  json doc = {{"generative",
               {{"n", gen.n}, {"T", gen.T}, {"delta", gen.delta}, {"p_a", gen.p_a}, {"gamma", gen.gamma},
                {"seed", gen.seed}}},
              {"replications", report.replications},
              {"used", report.used},
              {"wall_seconds", report.wall_seconds},
              {"warnings", report.warnings},
              {"se_type", "sandwich"},
              {"records", records}};
  const auto csv_path = config.out_dir / "report.csv";
  const auto json_path = config.out_dir / "report.json";
  write_file_atomic(csv_path, csv.str());
  write_file_atomic(json_path, doc.dump(2) + "\n");
  doc["outputs"] = {csv_path.string(), json_path.string()};
  return doc;
}

json run_sweep(const RunConfig& config) {
  GenerativeConfig gen = config.generative;
  gen.seed = config.seed;
  const auto curve = efficiency_sweep(config.axis, config.grid, gen, config.reps);
  std::ostringstream csv;
  csv << "axis,x,rel_eff,mc_se,reps_used\n";
  json points = json::array();
  for (const auto& p : curve.points) {
    csv << to_string(curve.axis) << ',' << format_number(p.x) << ',' << format_number(p.rel_eff) << ','
        << format_number(p.mc_se) << ',' << p.replications << '\n';
    points.push_back({{"x", p.x}, {"rel_eff", p.rel_eff}, {"mc_se", p.mc_se}, {"reps_used", p.replications}});
  }
  const auto path = config.out_dir / "curve.csv";
  write_file_atomic(path, csv.str());
  return {{"axis", to_string(curve.axis)}, {"points", points}, {"outputs", {path.string()}}};
}

}  // namespace

int run(const RunConfig& config, std::ostream& summary, std::ostream& log) {
  const char* mode = config.mode == RunMode::Fit ? "fit" : config.mode == RunMode::Simulate ? "simulate" : "sweep";
  try {
    config.validate();
    if (config.threads > 0) set_threads(config.threads);
    json body;
    switch (config.mode) {
      case RunMode::Fit: body = run_fit(config, log); break;
      case RunMode::Simulate: body = run_simulate(config, log); break;
      case RunMode::Sweep: body = run_sweep(config); break;
    }
    body["status"] = "ok";
    body["mode"] = mode;
    summary << body.dump() << '\n';
    return 0;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    log << "error: " << e.what() << '\n';
    summary << json{{"status", "error"}, {"mode", mode}, {"exit_code", code}, {"error", e.what()}}.dump() << '\n';
    return code;
  }
}

}  // namespace pdemee
