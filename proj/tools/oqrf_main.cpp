#include "oqrf/config.hpp"
#include "oqrf/estimator.hpp"
#include "oqrf/panel_data.hpp"
#include "oqrf/parallel.hpp"
#include "oqrf/selftest.hpp"
#include "oqrf/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oqrf;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = ".";
  std::vector<std::string> assignments;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = load_config_file(g.config_path);
  for (const auto& a : g.assignments) apply_assignment(cfg, a);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

fs::path out_path(const GlobalOptions& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

json header(const RunConfig& cfg) { return {{"version", kVersion}, {"config", config_to_json(cfg)}}; }

json vec_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json sparse_json(const Vector& v) {
  json o = json::object();
  for (Index i = 0; i < v.size(); ++i) {
    if (v(i) != 0.0) o[std::to_string(i + 1)] = v(i);
  }
  return o;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    out.push_back(field);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(where + ": '" + s + "' is not a number");
  }
}

/// Query points: header row of p_x columns, then one point per line.
std::vector<Vector> load_queries(const std::string& path, std::size_t p_x) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  std::vector<Vector> out;
  bool have_header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_line(line);
    if (!have_header) {
      if (fields.size() != p_x) {
        throw SchemaError("query file '" + path + "' has " + std::to_string(fields.size()) +
                          " columns but the data has " + std::to_string(p_x) + " effect modifiers");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != p_x) {
      throw SchemaError("query file '" + path + "' line " + std::to_string(lineno) + ": expected " +
                        std::to_string(p_x) + " values");
    }
    Vector q(static_cast<Index>(p_x));
    for (std::size_t j = 0; j < p_x; ++j) {
      q(static_cast<Index>(j)) = parse_number(fields[j], path + " line " + std::to_string(lineno));
    }
    out.push_back(std::move(q));
  }
  if (!have_header) throw SchemaError("query file '" + path + "' has no header row");
  if (out.empty()) throw SchemaError("query file '" + path + "' holds no query points");
  return out;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const GlobalOptions& g) {
  const RunConfig cfg = resolve_config(g);
  cfg.validate();
  SimConfig sim = cfg.sim;
  sim.seed = cfg.seed;
  const PanelDataset data = gen_dataset(sim);

  std::ostringstream csv;
  json comment = header(cfg);
  write_csv(csv, data, comment.dump());
  write_text(out_path(g, "data.csv"), csv.str());

  json truth = header(cfg);
  truth["setting"] = sim.setting;
  truth["seed"] = sim.seed;
  truth["subject_seed_rule"] = "subject i draws from derive_seed(seed, {i})";
  truth["n_subjects"] = data.n_subjects();
  truth["n_rows"] = data.n_rows();
  json grid = json::array();
  for (const auto& x : eval_grid(sim.setting)) grid.push_back({{"x", x}, {"theta", true_theta(sim.setting, x)}});
  truth["theta_grid"] = grid;
  json coef = json::array();
  for (double x : {0.25, 0.5, 0.75}) {
    coef.push_back({{"x", x},
                    {"beta_nonzero", sparse_json(true_beta(sim.setting, x, sim.p_w))},
                    {"ell_nonzero", sparse_json(true_ell(sim.setting, x, sim.p_w))}});
  }
  truth["coefficients"] = coef;
  write_text(out_path(g, "truth.json"), truth.dump(2) + "\n");
  std::cout << "wrote " << data.n_subjects() << " subjects, " << data.n_rows() << " rows to "
            << out_path(g, "data.csv").string() << "\n";
  return 0;
}

// --------------------------------------------------------------------- fit

struct FitOptions {
  std::string data;
  std::string queries;
  std::string forest_cache;
  std::optional<int> n_boot;
  std::optional<std::string> method;
};

json cache_key(const std::string& fingerprint, const RunConfig& cfg) {
  json c = config_to_json(cfg);
  for (const char* k : {"n_boot", "level", "boot_trees", "method", "theta_solver", "grid_half_width", "grid_step",
                        "grid_refine_step", "max_rounds", "setting", "n", "p_w", "error", "rho_w", "rho_eps",
                        "replicates", "methods"}) {
    c.erase(k);
  }
  return {{"data_fnv1a", fingerprint}, {"config", c}, {"version", kVersion}};
}

std::optional<FittedForests> load_cache(const std::string& path, const json& key, const PanelDataset& data,
                                        const EstimatorConfig& est) {
  if (path.empty() || !fs::exists(path)) return std::nullopt;
  try {
    const json doc = json::parse(read_text(path));
    if (doc.at("key") != key) return std::nullopt;
    FittedForests ff;
    ff.seed = doc.at("seed").get<std::uint64_t>();
    ff.split.d1 = doc.at("d1").get<std::vector<std::size_t>>();
    ff.split.d2 = doc.at("d2").get<std::vector<std::size_t>>();
    for (auto idx : {ff.split.d1, ff.split.d2}) {
      for (auto i : idx) {
        if (i >= data.n_subjects()) return std::nullopt;
      }
    }
    ff.half1 = data.subset(ff.split.d1);
    ff.half2 = data.subset(ff.split.d2);
    ff.spec = resolve_spec(est, ff.half1.n_subjects(), ff.half1.p_t(), ff.half1.p_w());
    ff.forest1 = Forest::from_json(doc.at("forest1").dump());
    ff.forest2 = Forest::from_json(doc.at("forest2").dump());
    if (ff.forest1.n_subjects != ff.half1.n_subjects() || ff.forest2.n_subjects != ff.half2.n_subjects()) {
      return std::nullopt;
    }
    return ff;
  } catch (const std::exception& e) {
    std::cerr << "warning: ignoring unusable forest cache '" << path << "': " << e.what() << "\n";
    return std::nullopt;
  }
}

void save_cache(const std::string& path, const json& key, const FittedForests& ff) {
  json doc;
  doc["key"] = key;
  doc["seed"] = ff.seed;
  doc["d1"] = ff.split.d1;
  doc["d2"] = ff.split.d2;
  doc["forest1"] = json::parse(ff.forest1.to_json());
  doc["forest2"] = json::parse(ff.forest2.to_json());
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text(p, doc.dump());
}

json theta_json(const Vector& v) { return v.size() == 1 ? json(v(0)) : vec_json(v); }

int cmd_fit(const GlobalOptions& g, const FitOptions& f) {
  RunConfig cfg = resolve_config(g);
  if (f.n_boot) cfg.n_boot = *f.n_boot;
  if (f.method) cfg.est.method = parse_method(*f.method);
  cfg.validate();
  const int threads = resolve_threads(g.threads);

  const auto columns = read_csv_header(f.data);
  const PanelDataset data = load_csv(f.data, CsvSchema::infer(columns, cfg.add_intercept));
  std::vector<Vector> queries;
  if (f.queries.empty()) {
    queries.push_back(Vector::Constant(static_cast<Index>(data.p_x()), 0.5));
  } else {
    queries = load_queries(f.queries, data.p_x());
  }

  const json key = cache_key(fnv1a_hex(read_text(f.data)), cfg);
  std::optional<FittedForests> cached = load_cache(f.forest_cache, key, data, cfg.est);
  const bool cache_hit = cached.has_value();
  const FittedForests ff = cache_hit ? std::move(*cached) : fit_forests(data, cfg.est, cfg.seed, threads);
  if (!f.forest_cache.empty() && !cache_hit) save_cache(f.forest_cache, key, ff);

  std::vector<std::optional<EffectEstimate>> est(queries.size());
  std::vector<std::string> status(queries.size(), "ok");
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    try {
      est[q] = estimate_at(ff, std::span<const double>(queries[q].data(), queries[q].size()), cfg.est);
    } catch (const Error& e) {
      status[q] = std::string("error: ") + e.what();
    }
  });

  std::optional<BootstrapResult> boot;
  std::string boot_error;
  if (cfg.n_boot > 0) {
    try {
      boot = bootstrap_ci(ff, queries, cfg.est, cfg.n_boot, cfg.level, derive_seed(cfg.seed, {4}), threads);
    } catch (const Error& e) {
      boot_error = e.what();
    }
  }

  bool ok = true;
  json records = json::array();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    json r;
    r["x0"] = vec_json(queries[q]);
    if (est[q]) {
      r["theta_hat"] = theta_json(est[q]->theta);
      r["score_norm"] = est[q]->score_norm;
      r["max_alpha"] = est[q]->max_alpha;
    } else {
      r["theta_hat"] = nullptr;
      ok = false;
    }
    if (cfg.n_boot > 0) {
      if (boot) {
        r["ci_lower"] = theta_json(boot->intervals[q].lower);
        r["ci_upper"] = theta_json(boot->intervals[q].upper);
        r["n_boot_used"] = boot->n_used;
      } else {
        r["n_boot_used"] = 0;
        if (status[q] == "ok") status[q] = "error: bootstrap: " + boot_error;
        ok = false;
      }
    } else {
      r["n_boot_used"] = 0;
    }
    r["status"] = status[q];
    records.push_back(std::move(r));
  }

  json doc = header(cfg);
  doc["data"] = f.data;
  doc["forest_cache_hit"] = cache_hit;
  doc["bandwidth"] = ff.spec.h;
  if (boot) doc["bootstrap"] = {{"n_used", boot->n_used}, {"n_failed", boot->n_failed}};
  doc["results"] = records;
  write_text(out_path(g, "results.json"), doc.dump(2) + "\n");
  for (const auto& r : records) std::cout << r.dump() << "\n";
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------- mc

int cmd_mc(const GlobalOptions& g, const std::vector<std::string>& method_flags, std::optional<int> replicates) {
  RunConfig cfg = resolve_config(g);
  if (!method_flags.empty()) {
    cfg.methods.clear();
    for (const auto& m : method_flags) cfg.methods.push_back(parse_method(m));
  }
  if (replicates) cfg.replicates = *replicates;
  cfg.validate();
  const int threads = resolve_threads(g.threads);
  SimConfig sim = cfg.sim;
  sim.seed = cfg.seed;

  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = eval_grid(sim.setting);
  const auto reports = run_mc(sim, cfg.methods, cfg.replicates, grid, cfg.est, threads);
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json summary = header(cfg);
  json records = json::array();
  std::ostringstream csv;
  csv << "method,replicate";
  for (std::size_t j = 0; j < grid.front().size(); ++j) csv << ",x_" << j + 1;
  csv << ",theta_hat,theta_true\n";
  bool any_success = false;
  for (const McReport& rep : reports) {
    json failures = json::array();
    for (const auto& f : rep.failures) failures.push_back({{"replicate", f.replicate}, {"message", f.message}});
    json rec = {{"setting", sim.setting},
                {"error", to_string(sim.error)},
                {"p_w", sim.p_w},
                {"method", to_string(rep.method)},
                {"replicates", static_cast<int>(rep.replicates.size())},
                {"n_failed", static_cast<int>(rep.failures.size())},
                {"failures", failures}};
    if (!rep.replicates.empty()) {
      any_success = true;
      rec["bias"] = rep.metrics.bias;
      rec["root_mise"] = rep.metrics.root_mise;
    } else {
      rec["bias"] = nullptr;
      rec["root_mise"] = nullptr;
    }
    records.push_back(rec);
    for (std::size_t k = 0; k < rep.replicates.size(); ++k) {
      for (std::size_t p = 0; p < grid.size(); ++p) {
        csv << to_string(rep.method) << "," << rep.replicates[k];
        for (double x : grid[p]) csv << "," << format_double(x);
        csv << "," << format_double(rep.curves[k][p]) << "," << format_double(rep.truth[p]) << "\n";
      }
    }
    std::cout << to_string(rep.method) << ": bias " << rep.metrics.bias << ", root-MISE " << rep.metrics.root_mise
              << " over " << rep.replicates.size() << " replicates (" << rep.failures.size() << " failed)\n";
  }
  summary["records"] = records;
  write_text(out_path(g, "mc_summary.json"), summary.dump(2) + "\n");
  write_text(out_path(g, "mc_curves.csv"), csv.str());
  write_text(out_path(g, "timing.json"), json({{"runtime_sec", runtime}, {"threads", threads}}).dump(2) + "\n");
  return any_success ? 0 : 1;
}

// ------------------------------------------------------------------ report

int cmd_report(const GlobalOptions& g, const std::vector<std::string>& inputs) {
  std::ostringstream summary;
  summary << "setting,error,p_w,method,replicates,n_failed,bias,root_mise,runtime_sec\n";
  std::ostringstream points;
  points << "setting,error,p_w,method,point,x_1,x_2,theta_true,mean_theta_hat,bias,rmse,replicates\n";
  for (const auto& dir : inputs) {
    const fs::path base(dir);
    const json doc = json::parse(read_text((base / "mc_summary.json").string()));
    std::string runtime;
    if (fs::exists(base / "timing.json")) {
      runtime = format_double(json::parse(read_text((base / "timing.json").string())).at("runtime_sec").get<double>());
    }
    auto num = [](const json& v) { return v.is_null() ? std::string() : format_double(v.get<double>()); };
    std::map<std::string, json> by_method;
    for (const auto& r : doc.at("records")) {
      by_method[r.at("method").get<std::string>()] = r;
      summary << r.at("setting").get<int>() << "," << r.at("error").get<std::string>() << ","
              << r.at("p_w").get<int>() << "," << r.at("method").get<std::string>() << ","
              << r.at("replicates").get<int>() << "," << r.at("n_failed").get<int>() << "," << num(r.at("bias"))
              << "," << num(r.at("root_mise")) << "," << runtime << "\n";
    }

    std::ifstream in(base / "mc_curves.csv");
    if (!in) throw Error("cannot open '" + (base / "mc_curves.csv").string() + "'");
    std::string line;
    std::getline(in, line);
    const auto head = split_line(line);
    const std::size_t n_x = head.size() - 4;
    struct Acc {
      std::vector<double> x;
      double truth = 0.0, sum = 0.0, sum_sq_err = 0.0;
      int count = 0;
    };
    // method -> ordered points keyed by first appearance
    std::map<std::string, std::vector<Acc>> acc;
    std::map<std::string, std::map<std::vector<double>, std::size_t>> index;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_line(line);
      std::vector<double> x;
      for (std::size_t j = 0; j < n_x; ++j) x.push_back(parse_number(f[2 + j], "mc_curves.csv"));
      const double est = parse_number(f[2 + n_x], "mc_curves.csv");
      const double truth = parse_number(f[3 + n_x], "mc_curves.csv");
      auto& idx = index[f[0]];
      auto& vec = acc[f[0]];
      auto it = idx.find(x);
      if (it == idx.end()) {
        it = idx.emplace(x, vec.size()).first;
        vec.push_back(Acc{x, truth});
      }
      Acc& a = vec[it->second];
      a.sum += est;
      a.sum_sq_err += (est - truth) * (est - truth);
      ++a.count;
    }
    for (const auto& [method, vec] : acc) {
      const json& r = by_method.at(method);
      for (std::size_t p = 0; p < vec.size(); ++p) {
        const Acc& a = vec[p];
        const double mean = a.sum / a.count;
        points << r.at("setting").get<int>() << "," << r.at("error").get<std::string>() << ","
               << r.at("p_w").get<int>() << "," << method << "," << p << "," << format_double(a.x[0]) << ","
               << (a.x.size() > 1 ? format_double(a.x[1]) : std::string()) << "," << format_double(a.truth) << ","
               << format_double(mean) << "," << format_double(mean - a.truth) << ","
               << format_double(std::sqrt(a.sum_sq_err / a.count)) << "," << a.count << "\n";
      }
    }
  }
  write_text(out_path(g, "report_summary.csv"), summary.str());
  write_text(out_path(g, "report_points.csv"), points.str());
  std::cout << summary.str();
  return 0;
}

// ---------------------------------------------------------------- selftest

int cmd_selftest(const GlobalOptions& g, std::optional<std::string> only, const std::string& fault) {
  const RunConfig cfg = resolve_config(g);
  SelftestOptions opts;
  opts.only = std::move(only);
  opts.seed = cfg.seed;
  opts.threads = resolve_threads(g.threads);
  if (!fault.empty()) {
    if (fault != "score-sign") throw ValidationError("unknown fault '" + fault + "' (expected score-sign)");
    opts.flip_score_sign = true;
  }
  const auto results = run_selftest(opts);
  json report = selftest_report(results);
  report["version"] = kVersion;
  write_text(out_path(g, "selftest.json"), report.dump(2) + "\n");
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.metrics.dump() << "\n";
  }
  return report.at("status") == "pass" ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal quantile random forests for longitudinal data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads (default $OQRF_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");
  app.add_option("--set", g.assignments, "config override key=value (repeatable)");

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic panel dataset");

  FitOptions fit_opts;
  auto* fit = app.add_subcommand("fit", "estimate theta(x0) at query points");
  fit->add_option("--data", fit_opts.data, "panel CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--queries", fit_opts.queries, "CSV of query points (header then one point per row)")
      ->check(CLI::ExistingFile);
  fit->add_option("--forest-cache", fit_opts.forest_cache, "reuse or store the fitted forests here");
  fit->add_option("--n-boot", fit_opts.n_boot, "bootstrap replicates (0 disables intervals)");
  fit->add_option("--method", fit_opts.method, "oqrf, oqrf_nc or naive");

  std::vector<std::string> mc_methods;
  std::optional<int> mc_replicates;
  auto* mc = app.add_subcommand("mc", "Monte Carlo study on a simulation setting");
  mc->add_option("--method", mc_methods, "method(s) to evaluate")->delimiter(',');
  mc->add_option("--replicates", mc_replicates, "Monte Carlo replicates");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "tidy CSV tables from mc output directories");
  report->add_option("--in", report_inputs, "mc output directory (repeatable)")->required();

  std::optional<std::string> only;
  std::string fault;
  auto* selftest = app.add_subcommand("selftest", "run the built-in property checks");
  selftest->add_option("--only", only, "run a single check");
  selftest->add_option("--inject-fault", fault, "test rig: score-sign");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return cmd_simulate(g);
    if (*fit) return cmd_fit(g, fit_opts);
    if (*mc) return cmd_mc(g, mc_methods, mc_replicates);
    if (*report) return cmd_report(g, report_inputs);
    if (*selftest) return cmd_selftest(g, only, fault);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
