#include "oqrf/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace oqrf {

using nlohmann::json;

namespace {

[[noreturn]] void type_error(const std::string& key, const char* want) {
  throw SchemaError("config key '" + key + "' must be " + want);
}

int as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) type_error(key, "an integer");
  return v.get<int>();
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) type_error(key, "a boolean");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

using Setter = std::function<void(RunConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
           type_error(k, "a nonnegative integer");
         }
         c.seed = v.get<std::uint64_t>();
       }},
      // smoothing
      {"tau", [](RunConfig& c, const std::string& k, const json& v) { c.est.tau = as_double(k, v); }},
      {"kernel", [](RunConfig& c, const std::string& k, const json& v) { c.est.kernel = parse_kernel(as_string(k, v)); }},
      {"bandwidth",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (v.is_null()) {
           c.est.bandwidth.reset();
         } else {
           c.est.bandwidth = as_double(k, v);
         }
       }},
      // forest
      {"n_trees", [](RunConfig& c, const std::string& k, const json& v) { c.est.forest.n_trees = as_int(k, v); }},
      {"subsample_ratio",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.forest.subsample_ratio = as_double(k, v); }},
      {"max_depth", [](RunConfig& c, const std::string& k, const json& v) { c.est.forest.max_depth = as_int(k, v); }},
      {"min_leaf_subjects",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.forest.min_leaf_subjects = as_int(k, v); }},
      {"min_child_fraction",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.forest.min_child_fraction = as_double(k, v); }},
      {"feature_fraction",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (v.is_null()) {
           c.est.forest.feature_fraction.reset();
         } else {
           c.est.forest.feature_fraction = as_double(k, v);
         }
       }},
      // penalized solvers
      {"lambda1_c_grid",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (!v.is_array()) type_error(k, "an array of integers");
         std::vector<int> grid;
         for (const json& e : v) grid.push_back(as_int(k, e));
         c.est.nuisance.c_grid = std::move(grid);
       }},
      {"lambda2_nsim", [](RunConfig& c, const std::string& k, const json& v) { c.est.nuisance.lambda2_nsim = as_int(k, v); }},
      {"penalize_intercept",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.nuisance.penalize_intercept = as_bool(k, v); }},
      {"solver_tol", [](RunConfig& c, const std::string& k, const json& v) { c.est.nuisance.qr.tol = as_double(k, v); }},
      {"solver_max_iter",
       [](RunConfig& c, const std::string& k, const json& v) {
         c.est.nuisance.qr.max_iter = as_int(k, v);
         c.est.nuisance.lasso.max_sweeps = c.est.nuisance.qr.max_iter;
       }},
      {"lasso_tol", [](RunConfig& c, const std::string& k, const json& v) { c.est.nuisance.lasso.tol = as_double(k, v); }},
      // effect solver
      {"theta_solver",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.theta.solver = parse_theta_solver(as_string(k, v)); }},
      {"grid_half_width",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.theta.grid.half_width = as_double(k, v); }},
      {"grid_step", [](RunConfig& c, const std::string& k, const json& v) { c.est.theta.grid.step = as_double(k, v); }},
      {"grid_refine_step",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.theta.grid.refine_step = as_double(k, v); }},
      {"max_rounds",
       [](RunConfig& c, const std::string& k, const json& v) { c.est.theta.iterative.max_rounds = as_int(k, v); }},
      {"method", [](RunConfig& c, const std::string& k, const json& v) { c.est.method = parse_method(as_string(k, v)); }},
      // bootstrap
      {"n_boot", [](RunConfig& c, const std::string& k, const json& v) { c.n_boot = as_int(k, v); }},
      {"level", [](RunConfig& c, const std::string& k, const json& v) { c.level = as_double(k, v); }},
      {"boot_trees",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (v.is_null()) {
           c.est.boot_trees.reset();
         } else {
           c.est.boot_trees = as_int(k, v);
         }
       }},
      // data
      {"add_intercept", [](RunConfig& c, const std::string& k, const json& v) { c.add_intercept = as_bool(k, v); }},
      // simulation
      {"setting", [](RunConfig& c, const std::string& k, const json& v) { c.sim.setting = as_int(k, v); }},
      {"n", [](RunConfig& c, const std::string& k, const json& v) { c.sim.n = as_int(k, v); }},
      {"p_w", [](RunConfig& c, const std::string& k, const json& v) { c.sim.p_w = as_int(k, v); }},
      {"error", [](RunConfig& c, const std::string& k, const json& v) { c.sim.error = parse_error_model(as_string(k, v)); }},
      {"rho_w", [](RunConfig& c, const std::string& k, const json& v) { c.sim.rho_w = as_double(k, v); }},
      {"rho_eps", [](RunConfig& c, const std::string& k, const json& v) { c.sim.rho_eps = as_double(k, v); }},
      {"replicates", [](RunConfig& c, const std::string& k, const json& v) { c.replicates = as_int(k, v); }},
      {"methods",
       [](RunConfig& c, const std::string& k, const json& v) {
         if (!v.is_array() || v.empty()) type_error(k, "a nonempty array of method names");
         std::vector<Method> ms;
         for (const json& e : v) ms.push_back(parse_method(as_string(k, e)));
         c.methods = std::move(ms);
       }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  est.validate();
  sim.validate();
  if (replicates < 1) throw ValidationError("replicates must be >= 1");
  if (methods.empty()) throw ValidationError("methods must not be empty");
  if (n_boot < 0 || n_boot == 1) throw ValidationError("n_boot must be 0 or >= 2");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("level must lie in (0,1)");
}

void apply_config_key(RunConfig& cfg, const std::string& key, const json& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw SchemaError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig config_from_json(const json& doc, RunConfig base) {
  if (!doc.is_object()) throw SchemaError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) apply_config_key(base, key, value);
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  try {
    return config_from_json(doc, std::move(base));
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["tau"] = c.est.tau;
  j["kernel"] = to_string(c.est.kernel);
  j["bandwidth"] = c.est.bandwidth ? json(*c.est.bandwidth) : json(nullptr);
  j["n_trees"] = c.est.forest.n_trees;
  j["subsample_ratio"] = c.est.forest.subsample_ratio;
  j["max_depth"] = c.est.forest.max_depth;
  j["min_leaf_subjects"] = c.est.forest.min_leaf_subjects;
  j["min_child_fraction"] = c.est.forest.min_child_fraction;
  j["feature_fraction"] = c.est.forest.feature_fraction ? json(*c.est.forest.feature_fraction) : json(nullptr);
  j["lambda1_c_grid"] = c.est.nuisance.c_grid;
  j["lambda2_nsim"] = c.est.nuisance.lambda2_nsim;
  j["penalize_intercept"] = c.est.nuisance.penalize_intercept;
  j["solver_tol"] = c.est.nuisance.qr.tol;
  j["solver_max_iter"] = c.est.nuisance.qr.max_iter;
  j["lasso_tol"] = c.est.nuisance.lasso.tol;
  j["theta_solver"] = to_string(c.est.theta.solver);
  j["grid_half_width"] = c.est.theta.grid.half_width;
  j["grid_step"] = c.est.theta.grid.step;
  j["grid_refine_step"] = c.est.theta.grid.refine_step;
  j["max_rounds"] = c.est.theta.iterative.max_rounds;
  j["method"] = to_string(c.est.method);
  j["n_boot"] = c.n_boot;
  j["level"] = c.level;
  j["boot_trees"] = c.est.boot_trees ? json(*c.est.boot_trees) : json(nullptr);
  j["add_intercept"] = c.add_intercept;
  j["setting"] = c.sim.setting;
  j["n"] = c.sim.n;
  j["p_w"] = c.sim.p_w;
  j["error"] = to_string(c.sim.error);
  j["rho_w"] = c.sim.rho_w;
  j["rho_eps"] = c.sim.rho_eps;
  j["replicates"] = c.replicates;
  json ms = json::array();
  for (Method m : c.methods) ms.push_back(to_string(m));
  j["methods"] = ms;
  return j;
}

void apply_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw SchemaError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  apply_config_key(cfg, key, value);
}

}  // namespace oqrf
