#include "replin/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "replin/common.hpp"

namespace replin::config {

using nlohmann::json;

namespace {

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& msg) {
  throw Error("invalid config", origin + ":" + std::to_string(line) + ": " + msg);
}

[[noreturn]] void fail_field(const std::string& where, const std::string& msg) {
  throw Error("invalid config", where + ": " + msg);
}

std::string trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

bool bare_key(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-';
  });
}

std::vector<std::string> split_key(const std::string& s, const std::string& origin, int line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, '.')) {
    cur = trim(cur);
    if (!bare_key(cur)) fail_at(origin, line, "bad key '" + s + "'");
    out.push_back(cur);
  }
  if (out.empty()) fail_at(origin, line, "empty key");
  return out;
}

// Truncates a line at the first '#' outside a quoted string.
std::string strip_comment(const std::string& line) {
  bool in_str = false, esc = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (esc) { esc = false; continue; }
    if (in_str && c == '\\') { esc = true; continue; }
    if (c == '"') { in_str = !in_str; continue; }
    if (c == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

struct ValueParser {
  const std::string& s;
  std::size_t pos = 0;
  const std::string& origin;
  int line;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }

  json parse_string() {
    std::string out;
    ++pos;  // opening quote
    while (pos < s.size()) {
      const char c = s[pos++];
      if (c == '"') return out;
      if (c == '\\') {
        if (pos >= s.size()) break;
        const char e = s[pos++];
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '/': out += '/'; break;
          default: fail_at(origin, line, std::string("unsupported escape '\\") + e + "'");
        }
      } else {
        out += c;
      }
    }
    fail_at(origin, line, "unterminated string");
  }

  json parse_array() {
    json arr = json::array();
    ++pos;  // '['
    skip_ws();
    if (pos < s.size() && s[pos] == ']') { ++pos; return arr; }
    for (;;) {
      arr.push_back(parse_value());
      skip_ws();
      if (pos >= s.size()) fail_at(origin, line, "unterminated array");
      if (s[pos] == ',') {
        ++pos;
        skip_ws();
        if (pos < s.size() && s[pos] == ']') { ++pos; return arr; }
        continue;
      }
      if (s[pos] == ']') { ++pos; return arr; }
      fail_at(origin, line, "expected ',' or ']' in array");
    }
  }

  json parse_primitive() {
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] != ',' && s[pos] != ']') ++pos;
    const std::string tok = trim(std::string_view(s).substr(start, pos - start));
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok.empty()) fail_at(origin, line, "missing value");
    const bool int_like = tok.find_first_not_of("+-0123456789") == std::string::npos;
    if (int_like) {
      errno = 0;
      char* end = nullptr;
      const long long v = std::strtoll(tok.c_str(), &end, 10);
      if (errno == 0 && end && *end == '\0') return static_cast<std::int64_t>(v);
    }
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(tok.c_str(), &end);
    if (errno == 0 && end && *end == '\0' && end != tok.c_str() && std::isfinite(d)) return d;
    fail_at(origin, line, "bad value '" + tok + "'");
  }

  json parse_value() {
    skip_ws();
    if (pos >= s.size()) fail_at(origin, line, "missing value");
    if (s[pos] == '"') return parse_string();
    if (s[pos] == '[') return parse_array();
    return parse_primitive();
  }
};

json* descend_tables(json* node, const std::vector<std::string>& keys, std::size_t n,
                     const std::string& origin, int line) {
  for (std::size_t i = 0; i < n; ++i) {
    const auto& k = keys[i];
    if (node->contains(k)) {
      if (!(*node)[k].is_object()) fail_at(origin, line, "key '" + k + "' is not a table");
    } else {
      (*node)[k] = json::object();
    }
    node = &(*node)[k];
  }
  return node;
}

const json* opt(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) fail_field(where, "unknown key '" + item.key() + "'");
  }
}

double to_double(const json& v, const std::string& where) {
  if (!v.is_number()) fail_field(where, "expected a number");
  return v.get<double>();
}

std::int64_t to_int(const json& v, const std::string& where) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    fail_field(where, "expected an integer");
  return v.get<std::int64_t>();
}

bool to_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) fail_field(where, "expected true or false");
  return v.get<bool>();
}

std::string to_string_val(const json& v, const std::string& where) {
  if (!v.is_string()) fail_field(where, "expected a string");
  return v.get<std::string>();
}

std::vector<double> to_double_list(const json& v, const std::string& where) {
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) fail_field(where, "expected a number list");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(to_double(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<int> to_int_list(const json& v, const std::string& where) {
  if (v.is_number_integer() || v.is_number_unsigned())
    return {static_cast<int>(v.get<std::int64_t>())};
  if (!v.is_array()) fail_field(where, "expected an integer list");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(static_cast<int>(to_int(v[i], where + "[" + std::to_string(i) + "]")));
  return out;
}

std::vector<std::string> to_string_list(const json& v, const std::string& where) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) fail_field(where, "expected a string list");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(to_string_val(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string canonical_method(const std::string& name) {
  const std::string m = lower(name);
  if (m == "linearindependence" || m == "linear-independence") return "linear-independence";
  return m;
}

}  // namespace

json parse_toml(const std::string& text, const std::string& origin) {
  json root = json::object();
  json* current = &root;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string body = trim(strip_comment(raw));
    if (body.empty()) continue;

    if (body.size() >= 2 && body[0] == '[' && body[1] == '[') {
      const auto close = body.find("]]");
      if (close == std::string::npos) fail_at(origin, line, "missing ']]'");
      if (!trim(body.substr(close + 2)).empty())
        fail_at(origin, line, "trailing characters after table header");
      const auto keys = split_key(trim(body.substr(2, close - 2)), origin, line);
      json* parent = descend_tables(&root, keys, keys.size() - 1, origin, line);
      json& slot = (*parent)[keys.back()];
      if (slot.is_null()) slot = json::array();
      if (!slot.is_array()) fail_at(origin, line, "key '" + keys.back() + "' is not a table array");
      slot.push_back(json::object());
      current = &slot.back();
      continue;
    }

    if (body[0] == '[') {
      const auto close = body.find(']');
      if (close == std::string::npos) fail_at(origin, line, "missing ']'");
      if (!trim(body.substr(close + 1)).empty())
        fail_at(origin, line, "trailing characters after section header");
      const auto keys = split_key(trim(body.substr(1, close - 1)), origin, line);
      current = descend_tables(&root, keys, keys.size(), origin, line);
      continue;
    }

    const auto eq = body.find('=');
    if (eq == std::string::npos) fail_at(origin, line, "expected 'key = value'");
    const auto keys = split_key(trim(body.substr(0, eq)), origin, line);
    const std::string rhs = trim(body.substr(eq + 1));
    ValueParser vp{rhs, 0, origin, line};
    json value = vp.parse_value();
    vp.skip_ws();
    if (vp.pos != rhs.size()) fail_at(origin, line, "trailing characters after value");

    json* parent = descend_tables(current, keys, keys.size() - 1, origin, line);
    if (parent->contains(keys.back()))
      fail_at(origin, line, "duplicate key '" + keys.back() + "'");
    (*parent)[keys.back()] = std::move(value);
  }
  return root;
}

json load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io error", "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const bool is_json = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
  if (is_json) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error("invalid config", path + ": " + e.what());
    }
  }
  return parse_toml(text, path);
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error("invalid config", "top level must be a table");
  check_keys(j,
             {"experiment", "methods", "beta_list", "seeds", "output_dir", "n_train",
              "n_eval", "train", "model", "sweep", "theory", "linear", "expect"},
             "top level");
  ExperimentConfig cfg;
  if (const auto* v = opt(j, "experiment")) cfg.experiment = lower(to_string_val(*v, "experiment"));
  if (const auto* v = opt(j, "methods")) {
    cfg.methods.clear();
    for (const auto& m : to_string_list(*v, "methods"))
      cfg.methods.push_back(canonical_method(m));
  }
  if (const auto* v = opt(j, "beta_list")) cfg.beta_list = to_double_list(*v, "beta_list");
  if (const auto* v = opt(j, "seeds")) {
    cfg.seeds.clear();
    if (v->is_number_integer() || v->is_number_unsigned()) {
      const auto n = to_int(*v, "seeds");
      if (n < 1) fail_field("seeds", "count must be >= 1");
      for (std::int64_t s = 0; s < n; ++s) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    } else if (v->is_array()) {
      for (std::size_t i = 0; i < v->size(); ++i) {
        const auto s = to_int((*v)[i], "seeds[" + std::to_string(i) + "]");
        if (s < 0) fail_field("seeds[" + std::to_string(i) + "]", "must be >= 0");
        cfg.seeds.push_back(static_cast<std::uint64_t>(s));
      }
    } else {
      fail_field("seeds", "expected a count or a list");
    }
  }
  if (const auto* v = opt(j, "output_dir")) cfg.output_dir = to_string_val(*v, "output_dir");
  if (const auto* v = opt(j, "n_train")) cfg.n_train = to_int(*v, "n_train");
  if (const auto* v = opt(j, "n_eval")) cfg.n_eval = to_int(*v, "n_eval");

  if (const auto* t = opt(j, "train")) {
    if (!t->is_object()) fail_field("train", "expected a table");
    check_keys(*t,
               {"epochs", "batch_size", "lr", "lr_milestones", "lr_gamma", "lambda_dep",
                "lambda_self", "warmup_start_frac", "warmup_end_frac", "rff_features"},
               "train");
    auto& tc = cfg.train;
    if (const auto* v = opt(*t, "epochs")) tc.epochs = static_cast<int>(to_int(*v, "train.epochs"));
    if (const auto* v = opt(*t, "batch_size")) tc.batch_size = static_cast<int>(to_int(*v, "train.batch_size"));
    if (const auto* v = opt(*t, "lr")) tc.lr = to_double(*v, "train.lr");
    if (const auto* v = opt(*t, "lr_milestones")) tc.lr_milestones = to_int_list(*v, "train.lr_milestones");
    if (const auto* v = opt(*t, "lr_gamma")) tc.lr_gamma = to_double(*v, "train.lr_gamma");
    if (const auto* v = opt(*t, "lambda_dep")) tc.lambda_dep = to_double(*v, "train.lambda_dep");
    if (const auto* v = opt(*t, "lambda_self")) tc.lambda_self = to_double(*v, "train.lambda_self");
    if (const auto* v = opt(*t, "warmup_start_frac")) tc.warmup_start_frac = to_double(*v, "train.warmup_start_frac");
    if (const auto* v = opt(*t, "warmup_end_frac")) tc.warmup_end_frac = to_double(*v, "train.warmup_end_frac");
    if (const auto* v = opt(*t, "rff_features")) tc.rff_features = static_cast<int>(to_int(*v, "train.rff_features"));
  }

  if (const auto* m = opt(j, "model")) {
    if (!m->is_object()) fail_field("model", "expected a table");
    check_keys(*m,
               {"trunk_widths", "extractor_widths", "erm_feature_dim", "replin_feature_dim",
                "erm_normalize"},
               "model");
    if (const auto* v = opt(*m, "trunk_widths")) cfg.trunk_widths = to_int_list(*v, "model.trunk_widths");
    if (const auto* v = opt(*m, "extractor_widths")) cfg.extractor_widths = to_int_list(*v, "model.extractor_widths");
    if (const auto* v = opt(*m, "erm_feature_dim")) cfg.erm_feature_dim = static_cast<int>(to_int(*v, "model.erm_feature_dim"));
    if (const auto* v = opt(*m, "replin_feature_dim")) cfg.replin_feature_dim = static_cast<int>(to_int(*v, "model.replin_feature_dim"));
    if (const auto* v = opt(*m, "erm_normalize")) cfg.erm_normalize = to_bool(*v, "model.erm_normalize");
  }

  if (const auto* s = opt(j, "sweep")) {
    if (!s->is_object()) fail_field("sweep", "expected a table");
    check_keys(*s,
               {"n_train", "n_eval", "beta", "n_models", "min_layers", "max_layers",
                "min_width", "max_width", "min_epochs", "max_epochs", "batch_size", "lr",
                "seed"},
               "sweep");
    auto& sp = cfg.sweep;
    if (const auto* v = opt(*s, "n_train")) sp.n_train = to_int(*v, "sweep.n_train");
    if (const auto* v = opt(*s, "n_eval")) sp.n_eval = to_int(*v, "sweep.n_eval");
    if (const auto* v = opt(*s, "beta")) sp.beta = to_double(*v, "sweep.beta");
    if (const auto* v = opt(*s, "n_models")) sp.n_models = static_cast<int>(to_int(*v, "sweep.n_models"));
    if (const auto* v = opt(*s, "min_layers")) sp.min_layers = static_cast<int>(to_int(*v, "sweep.min_layers"));
    if (const auto* v = opt(*s, "max_layers")) sp.max_layers = static_cast<int>(to_int(*v, "sweep.max_layers"));
    if (const auto* v = opt(*s, "min_width")) sp.min_width = static_cast<int>(to_int(*v, "sweep.min_width"));
    if (const auto* v = opt(*s, "max_width")) sp.max_width = static_cast<int>(to_int(*v, "sweep.max_width"));
    if (const auto* v = opt(*s, "min_epochs")) sp.min_epochs = static_cast<int>(to_int(*v, "sweep.min_epochs"));
    if (const auto* v = opt(*s, "max_epochs")) sp.max_epochs = static_cast<int>(to_int(*v, "sweep.max_epochs"));
    if (const auto* v = opt(*s, "batch_size")) sp.batch_size = static_cast<int>(to_int(*v, "sweep.batch_size"));
    if (const auto* v = opt(*s, "lr")) sp.lr = to_double(*v, "sweep.lr");
    if (const auto* v = opt(*s, "seed")) sp.seed = static_cast<std::uint64_t>(to_int(*v, "sweep.seed"));
  }

  if (const auto* t = opt(j, "theory")) {
    if (!t->is_object()) fail_field("theory", "expected a table");
    check_keys(*t,
               {"n_runs", "beta_points", "beta_grid", "seed", "w_lo", "w_hi", "w_min_abs",
                "var_lo", "var_hi"},
               "theory");
    auto& tp = cfg.theory;
    if (const auto* v = opt(*t, "n_runs")) tp.n_runs = static_cast<int>(to_int(*v, "theory.n_runs"));
    if (const auto* v = opt(*t, "beta_points")) tp.beta_points = static_cast<int>(to_int(*v, "theory.beta_points"));
    if (const auto* v = opt(*t, "beta_grid")) tp.beta_grid = to_double_list(*v, "theory.beta_grid");
    if (const auto* v = opt(*t, "seed")) tp.seed = static_cast<std::uint64_t>(to_int(*v, "theory.seed"));
    if (const auto* v = opt(*t, "w_lo")) tp.sampler.w_lo = to_double(*v, "theory.w_lo");
    if (const auto* v = opt(*t, "w_hi")) tp.sampler.w_hi = to_double(*v, "theory.w_hi");
    if (const auto* v = opt(*t, "w_min_abs")) tp.sampler.w_min_abs = to_double(*v, "theory.w_min_abs");
    if (const auto* v = opt(*t, "var_lo")) tp.sampler.var_lo = to_double(*v, "theory.var_lo");
    if (const auto* v = opt(*t, "var_hi")) tp.sampler.var_hi = to_double(*v, "theory.var_hi");
  }

  if (const auto* l = opt(j, "linear")) {
    if (!l->is_object()) fail_field("linear", "expected a table");
    check_keys(*l,
               {"n", "n_seeds", "lambda_dep", "feature_dim", "w_a", "w_b", "w_ab", "var_a",
                "var_ua", "var_ub", "var_b_int"},
               "linear");
    auto& lp = cfg.linear;
    if (const auto* v = opt(*l, "n")) lp.n = to_int(*v, "linear.n");
    if (const auto* v = opt(*l, "n_seeds")) lp.n_seeds = static_cast<int>(to_int(*v, "linear.n_seeds"));
    if (const auto* v = opt(*l, "lambda_dep")) lp.lambda_dep = to_double(*v, "linear.lambda_dep");
    if (const auto* v = opt(*l, "feature_dim")) lp.feature_dim = static_cast<int>(to_int(*v, "linear.feature_dim"));
    if (const auto* v = opt(*l, "w_a")) lp.scm.w_a = to_double(*v, "linear.w_a");
    if (const auto* v = opt(*l, "w_b")) lp.scm.w_b = to_double(*v, "linear.w_b");
    if (const auto* v = opt(*l, "w_ab")) lp.scm.w_ab = to_double(*v, "linear.w_ab");
    if (const auto* v = opt(*l, "var_a")) lp.scm.var_a = to_double(*v, "linear.var_a");
    if (const auto* v = opt(*l, "var_ua")) lp.scm.var_ua = to_double(*v, "linear.var_ua");
    if (const auto* v = opt(*l, "var_ub")) lp.scm.var_ub = to_double(*v, "linear.var_ub");
    if (const auto* v = opt(*l, "var_b_int")) lp.scm.var_b_int = to_double(*v, "linear.var_b_int");
  }

  if (const auto* e = opt(j, "expect")) {
    if (!e->is_array()) fail_field("expect", "expected table array ([[expect]])");
    for (std::size_t i = 0; i < e->size(); ++i) {
      const auto& b = (*e)[i];
      const std::string where = "expect[" + std::to_string(i) + "]";
      if (!b.is_object()) fail_field(where, "expected a table");
      check_keys(b, {"metric", "attr", "method", "target", "beta", "agg", "min", "max"}, where);
      ExpectBlock blk;
      if (const auto* v = opt(b, "metric")) blk.metric = to_string_val(*v, where + ".metric");
      if (const auto* v = opt(b, "attr")) blk.attr = to_string_val(*v, where + ".attr");
      if (const auto* v = opt(b, "method")) blk.method = canonical_method(to_string_val(*v, where + ".method"));
      if (const auto* v = opt(b, "target")) blk.target = to_string_val(*v, where + ".target");
      if (const auto* v = opt(b, "beta")) blk.beta = to_double(*v, where + ".beta");
      if (const auto* v = opt(b, "agg")) blk.agg = lower(to_string_val(*v, where + ".agg"));
      if (const auto* v = opt(b, "min")) blk.min = to_double(*v, where + ".min");
      if (const auto* v = opt(b, "max")) blk.max = to_double(*v, where + ".max");
      cfg.expects.push_back(std::move(blk));
    }
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = cfg.experiment;
  j["methods"] = cfg.methods;
  j["beta_list"] = cfg.beta_list;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["n_train"] = cfg.n_train;
  j["n_eval"] = cfg.n_eval;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"lr_milestones", cfg.train.lr_milestones},
                {"lr_gamma", cfg.train.lr_gamma},
                {"lambda_dep", cfg.train.lambda_dep},
                {"lambda_self", cfg.train.lambda_self},
                {"warmup_start_frac", cfg.train.warmup_start_frac},
                {"warmup_end_frac", cfg.train.warmup_end_frac},
                {"rff_features", cfg.train.rff_features}};
  j["model"] = {{"trunk_widths", cfg.trunk_widths},
                {"extractor_widths", cfg.extractor_widths},
                {"erm_feature_dim", cfg.erm_feature_dim},
                {"replin_feature_dim", cfg.replin_feature_dim},
                {"erm_normalize", cfg.erm_normalize}};
  j["sweep"] = {{"n_train", cfg.sweep.n_train},
                {"n_eval", cfg.sweep.n_eval},
                {"beta", cfg.sweep.beta},
                {"n_models", cfg.sweep.n_models},
                {"min_layers", cfg.sweep.min_layers},
                {"max_layers", cfg.sweep.max_layers},
                {"min_width", cfg.sweep.min_width},
                {"max_width", cfg.sweep.max_width},
                {"min_epochs", cfg.sweep.min_epochs},
                {"max_epochs", cfg.sweep.max_epochs},
                {"batch_size", cfg.sweep.batch_size},
                {"lr", cfg.sweep.lr},
                {"seed", cfg.sweep.seed}};
  j["theory"] = {{"n_runs", cfg.theory.n_runs},
                 {"beta_points", cfg.theory.beta_points},
                 {"beta_grid", cfg.theory.beta_grid},
                 {"seed", cfg.theory.seed},
                 {"w_lo", cfg.theory.sampler.w_lo},
                 {"w_hi", cfg.theory.sampler.w_hi},
                 {"w_min_abs", cfg.theory.sampler.w_min_abs},
                 {"var_lo", cfg.theory.sampler.var_lo},
                 {"var_hi", cfg.theory.sampler.var_hi}};
  j["linear"] = {{"n", cfg.linear.n},
                 {"n_seeds", cfg.linear.n_seeds},
                 {"lambda_dep", cfg.linear.lambda_dep},
                 {"feature_dim", cfg.linear.feature_dim},
                 {"w_a", cfg.linear.scm.w_a},
                 {"w_b", cfg.linear.scm.w_b},
                 {"w_ab", cfg.linear.scm.w_ab},
                 {"var_a", cfg.linear.scm.var_a},
                 {"var_ua", cfg.linear.scm.var_ua},
                 {"var_ub", cfg.linear.scm.var_ub},
                 {"var_b_int", cfg.linear.scm.var_b_int}};
  json expects = json::array();
  for (const auto& b : cfg.expects) {
    json e;
    e["metric"] = b.metric;
    if (!b.attr.empty()) e["attr"] = b.attr;
    if (!b.method.empty()) e["method"] = b.method;
    if (!b.target.empty()) e["target"] = b.target;
    if (b.beta) e["beta"] = *b.beta;
    e["agg"] = b.agg;
    if (b.min) e["min"] = *b.min;
    if (b.max) e["max"] = *b.max;
    expects.push_back(std::move(e));
  }
  j["expect"] = std::move(expects);
  return j;
}

ExperimentConfig load(const std::string& path) {
  return config_from_json(load_file(path));
}

namespace {

void validate_common_train(const ExperimentConfig& cfg) {
  if (cfg.methods.empty()) fail_field("methods", "at least one method required");
  bool any_resampled = false;
  for (const auto& m : cfg.methods) {
    const auto spec = experiments::method_from_name(m);  // throws on unknown
    any_resampled = any_resampled || spec.resampled;
  }
  if (cfg.beta_list.empty()) fail_field("beta_list", "at least one beta required");
  for (std::size_t i = 0; i < cfg.beta_list.size(); ++i) {
    const double b = cfg.beta_list[i];
    if (!(b > 0.0 && b < 1.0))
      fail_field("beta_list[" + std::to_string(i) + "]",
                 "beta = " + std::to_string(b) + " outside (0, 1)");
    if (any_resampled && std::llround(b * static_cast<double>(cfg.n_train)) < 1)
      fail_field("beta_list[" + std::to_string(i) + "]",
                 "resampled methods need beta * n_train >= 1 interventional sample");
  }
  if (cfg.seeds.empty()) fail_field("seeds", "at least one seed required");
  if (cfg.n_train < 2) fail_field("n_train", "must be >= 2");
  if (cfg.n_eval < 1) fail_field("n_eval", "must be >= 1");
  const auto& t = cfg.train;
  if (t.epochs < 1) fail_field("train.epochs", "must be >= 1");
  if (t.batch_size < 1) fail_field("train.batch_size", "must be >= 1");
  if (!(t.lr > 0.0)) fail_field("train.lr", "must be > 0");
  if (!(t.lr_gamma > 0.0)) fail_field("train.lr_gamma", "must be > 0");
  if (t.lambda_dep < 0.0) fail_field("train.lambda_dep", "must be >= 0");
  if (t.lambda_self < 0.0) fail_field("train.lambda_self", "must be >= 0");
  if (t.rff_features < 1) fail_field("train.rff_features", "must be >= 1");
  if (!(t.warmup_start_frac >= 0.0 && t.warmup_end_frac <= 1.0))
    fail_field("train.warmup_start_frac/warmup_end_frac", "must lie in [0, 1]");
  if (t.warmup_start_frac > t.warmup_end_frac)
    fail_field("train.warmup_start_frac",
               "warmup_start_frac (" + std::to_string(t.warmup_start_frac) +
                   ") exceeds warmup_end_frac (" + std::to_string(t.warmup_end_frac) + ")");
  if (cfg.erm_feature_dim < 1) fail_field("model.erm_feature_dim", "must be >= 1");
  if (cfg.replin_feature_dim < 1) fail_field("model.replin_feature_dim", "must be >= 1");
  for (int w : cfg.extractor_widths)
    if (w < 1) fail_field("model.extractor_widths", "widths must be >= 1");
  for (int w : cfg.trunk_widths)
    if (w < 1) fail_field("model.trunk_widths", "widths must be >= 1");
}

void validate_theory(const TheoryParams& tp) {
  if (tp.n_runs < 1) fail_field("theory.n_runs", "must be >= 1");
  if (tp.beta_grid.empty() && tp.beta_points < 1)
    fail_field("theory.beta_points", "must be >= 1");
  for (std::size_t i = 0; i < tp.beta_grid.size(); ++i)
    if (!(tp.beta_grid[i] > 0.0 && tp.beta_grid[i] < 1.0))
      fail_field("theory.beta_grid[" + std::to_string(i) + "]", "beta outside (0, 1)");
  const auto& s = tp.sampler;
  if (!(s.w_lo < s.w_hi)) fail_field("theory.w_lo", "w_lo must be < w_hi");
  if (s.w_min_abs < 0.0) fail_field("theory.w_min_abs", "must be >= 0");
  if (!(s.var_lo > 0.0)) fail_field("theory.var_lo", "must be > 0");
  if (!(s.var_lo < s.var_hi)) fail_field("theory.var_lo", "var_lo must be < var_hi");
}

void validate_linear(const ExperimentConfig& cfg) {
  const auto& lp = cfg.linear;
  if (lp.n < 2) fail_field("linear.n", "must be >= 2");
  if (lp.n_seeds < 1) fail_field("linear.n_seeds", "must be >= 1");
  if (!(lp.lambda_dep > 0.0)) fail_field("linear.lambda_dep", "must be > 0");
  if (lp.feature_dim < 1) fail_field("linear.feature_dim", "must be >= 1");
  if (!(lp.scm.var_a > 0.0 && lp.scm.var_ua > 0.0 && lp.scm.var_ub > 0.0 &&
        lp.scm.var_b_int > 0.0))
    fail_field("linear.var_a/var_ua/var_ub/var_b_int", "variances must be > 0");
  if (cfg.beta_list.empty()) fail_field("beta_list", "at least one beta required");
  for (std::size_t i = 0; i < cfg.beta_list.size(); ++i)
    if (!(cfg.beta_list[i] > 0.0 && cfg.beta_list[i] < 1.0))
      fail_field("beta_list[" + std::to_string(i) + "]", "beta outside (0, 1)");
  for (const auto& m : cfg.methods)
    if (m != "erm" && m != "linear-independence")
      fail_field("methods", "linear2 supports erm and linear-independence, got '" + m + "'");
}

void validate_sweep(const experiments::SweepPlan& sp) {
  if (sp.n_models < 1) fail_field("sweep.n_models", "must be >= 1");
  if (sp.min_layers < 1) fail_field("sweep.min_layers", "must be >= 1");
  if (sp.min_layers > sp.max_layers)
    fail_field("sweep.min_layers", "min_layers exceeds max_layers");
  if (sp.min_width < 1) fail_field("sweep.min_width", "must be >= 1");
  if (sp.min_width > sp.max_width) fail_field("sweep.min_width", "min_width exceeds max_width");
  if (sp.min_epochs < 1) fail_field("sweep.min_epochs", "must be >= 1");
  if (sp.min_epochs > sp.max_epochs)
    fail_field("sweep.min_epochs", "min_epochs exceeds max_epochs");
  if (!(sp.beta > 0.0 && sp.beta < 1.0)) fail_field("sweep.beta", "beta outside (0, 1)");
  if (sp.n_train < 2) fail_field("sweep.n_train", "must be >= 2");
  if (sp.n_eval < 1) fail_field("sweep.n_eval", "must be >= 1");
  if (sp.batch_size < 1) fail_field("sweep.batch_size", "must be >= 1");
  if (!(sp.lr > 0.0)) fail_field("sweep.lr", "must be > 0");
  if (std::llround(sp.beta * static_cast<double>(sp.n_train)) < 1)
    fail_field("sweep.beta", "resampled sweep needs beta * n_train >= 1");
}

void validate_expects(const std::vector<ExpectBlock>& expects) {
  static const std::vector<std::string> metrics = {"acc_obs",   "acc_int", "rel_delta",
                                                   "nhsic_int", "kcc_int", "js_int"};
  static const std::vector<std::string> per_attr = {"acc_obs", "acc_int", "rel_delta"};
  for (std::size_t i = 0; i < expects.size(); ++i) {
    const auto& b = expects[i];
    const std::string where = "expect[" + std::to_string(i) + "]";
    if (std::find(metrics.begin(), metrics.end(), b.metric) == metrics.end())
      fail_field(where + ".metric", "unknown metric '" + b.metric + "'");
    if (std::find(per_attr.begin(), per_attr.end(), b.metric) != per_attr.end() &&
        b.attr.empty())
      fail_field(where + ".attr", "metric '" + b.metric + "' needs an attr");
    if (b.agg != "mean" && b.agg != "min" && b.agg != "max")
      fail_field(where + ".agg", "agg must be mean, min or max");
    if (!b.min && !b.max) fail_field(where, "needs min and/or max");
    if (b.min && b.max && *b.min > *b.max) fail_field(where, "min exceeds max");
    if (b.beta && !(*b.beta > 0.0 && *b.beta < 1.0))
      fail_field(where + ".beta", "beta outside (0, 1)");
  }
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  static const std::vector<std::string> experiments_known = {
      "windmill", "fivevar", "highdim", "linear2", "theory", "sweep"};
  if (std::find(experiments_known.begin(), experiments_known.end(), cfg.experiment) ==
      experiments_known.end())
    fail_field("experiment", "unknown experiment '" + cfg.experiment + "'");
  if (cfg.output_dir.empty()) fail_field("output_dir", "must not be empty");

  if (cfg.experiment == "theory") {
    validate_theory(cfg.theory);
  } else if (cfg.experiment == "sweep") {
    validate_sweep(cfg.sweep);
  } else if (cfg.experiment == "linear2") {
    validate_linear(cfg);
  } else {
    validate_common_train(cfg);
  }
  validate_expects(cfg.expects);
}

}  // namespace replin::config
